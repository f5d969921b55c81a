#include "macnet/ops.hpp"

#include "conv_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace macnet::ops {

using detail::Node;

namespace {

std::shared_ptr<Node> make_node(Shape shape, std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(numel(shape)), 0.0);
    n->shape = std::move(shape);
    n->parents = std::move(parents);
    return n;
}

void check_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw std::invalid_argument(std::string(what) + " expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_str(t.shape()));
}

// Zero-padded copy of one image plane stack: {C,H,W} -> {C,H+2p,W+2p}.
void pad_plane(const double* src, int c, int h, int w, int pad, double* dst) {
    const int hp = h + 2 * pad, wp = w + 2 * pad;
    std::fill(dst, dst + static_cast<size_t>(c) * hp * wp, 0.0);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            std::copy(src + (static_cast<size_t>(ci) * h + y) * w,
                      src + (static_cast<size_t>(ci) * h + y + 1) * w,
                      dst + (static_cast<size_t>(ci) * hp + y + pad) * wp + pad);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    check_rank(x, 4, "conv2d input");
    check_rank(w, 4, "conv2d weight");
    if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d pad must be >= 0");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t o = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (kc != c)
        throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(x.shape()) +
                                    " vs weight " + shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != o))
        throw std::invalid_argument("conv2d bias shape " + shape_str(b.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw std::invalid_argument("conv2d kernel " + shape_str(w.shape()) +
                                    " does not fit padded input " + shape_str(x.shape()));

    std::vector<std::shared_ptr<Node>> parents{x.node(), w.node()};
    if (b.defined()) parents.push_back(b.node());
    auto node = make_node({n, o, oh, ow}, std::move(parents));

    const int hp = static_cast<int>(h) + 2 * pad, wp = static_cast<int>(wd) + 2 * pad;
    const bool fast3x3 = stride == 1 && kh == 3 && kw == 3;
    std::vector<double> padded(static_cast<size_t>(c) * hp * wp);
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    double* out = node->value.data();

    for (int64_t in = 0; in < n; ++in) {
        pad_plane(xv + in * c * h * wd, static_cast<int>(c), static_cast<int>(h),
                  static_cast<int>(wd), pad, padded.data());
        for (int64_t io = 0; io < o; ++io) {
            double* oplane = out + (in * o + io) * oh * ow;
            const double bias = b.defined() ? b.values()[io] : 0.0;
            std::fill(oplane, oplane + oh * ow, bias);
            for (int64_t ic = 0; ic < c; ++ic) {
                const double* xplane = padded.data() + ic * hp * wp;
                const double* wk = wv + ((io * c + ic) * kh) * kw;
                if (fast3x3) {
                    for (int64_t oy = 0; oy < oh; ++oy)
                        detail::corr3x3_row(xplane + oy * wp, xplane + (oy + 1) * wp,
                                    xplane + (oy + 2) * wp, wk, oplane + oy * ow, ow);
                    continue;
                }
                for (int64_t ky = 0; ky < kh; ++ky) {
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double wval = wk[ky * kw + kx];
                        for (int64_t oy = 0; oy < oh; ++oy) {
                            const double* xrow = xplane + (oy * stride + ky) * wp + kx;
                            double* orow = oplane + oy * ow;
                            if (stride == 1) {
                                for (int64_t ox = 0; ox < ow; ++ox) orow[ox] += wval * xrow[ox];
                            } else {
                                for (int64_t ox = 0; ox < ow; ++ox)
                                    orow[ox] += wval * xrow[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    const bool has_bias = b.defined();
    auto xn = x.node(), wn = w.node();
    auto bn = has_bias ? b.node() : nullptr;
    node->backward_fn = [=](Node& self) {
        const double* g = self.grad.data();
        const bool need_x = !xn->grad.empty();
        const bool need_w = !wn->grad.empty();
        const bool need_b = bn && !bn->grad.empty();

        if (fast3x3) {
            // gX is a full correlation of the padded gradient with the
            // 180-degree flipped kernel; gW comes from one plane sweep per
            // (io,ic) with nine running sums.
            const int64_t gph = oh + 4, gpw = ow + 4;  // gradient plane padded by 2
            std::vector<double> gpad(need_x ? static_cast<size_t>(gph) * gpw : 0);
            std::vector<double> padded_x(need_w ? static_cast<size_t>(c) * hp * wp : 0);
            std::vector<double> gx_pad(need_x ? static_cast<size_t>(hp) * wp : 0);
            std::vector<double> wflip(9);
            for (int64_t in = 0; in < n; ++in) {
                if (need_w)
                    pad_plane(xn->value.data() + in * c * h * wd, static_cast<int>(c),
                              static_cast<int>(h), static_cast<int>(wd), pad, padded_x.data());
                for (int64_t io = 0; io < o; ++io) {
                    const double* gplane = g + (in * o + io) * oh * ow;
                    if (need_b) {
                        double s = 0.0;
                        for (int64_t i = 0; i < oh * ow; ++i) s += gplane[i];
                        bn->grad[io] += s;
                    }
                    if (need_x) {
                        std::fill(gpad.begin(), gpad.end(), 0.0);
                        for (int64_t oy = 0; oy < oh; ++oy)
                            std::copy(gplane + oy * ow, gplane + (oy + 1) * ow,
                                      gpad.begin() + (oy + 2) * gpw + 2);
                    }
                    for (int64_t ic = 0; ic < c; ++ic) {
                        const double* wk = wv + (io * c + ic) * 9;
                        if (need_x) {
                            for (int i = 0; i < 9; ++i) wflip[i] = wk[8 - i];
                            std::fill(gx_pad.begin(), gx_pad.end(), 0.0);
                            for (int64_t y = 0; y < hp; ++y)
                                detail::corr3x3_row(gpad.data() + y * gpw, gpad.data() + (y + 1) * gpw,
                                            gpad.data() + (y + 2) * gpw, wflip.data(),
                                            gx_pad.data() + y * wp, wp);
                            double* gx = xn->grad.data() + (in * c + ic) * h * wd;
                            for (int64_t y = 0; y < h; ++y) {
                                const double* src = gx_pad.data() + (y + pad) * wp + pad;
                                double* dst = gx + y * wd;
                                for (int64_t xx = 0; xx < wd; ++xx) dst[xx] += src[xx];
                            }
                        }
                        if (need_w)
                            detail::grad_w3x3(padded_x.data() + ic * hp * wp, wp, gplane, oh, ow,
                                      wn->grad.data() + (io * c + ic) * 9);
                    }
                }
            }
            return;
        }

        std::vector<double> padded_x(static_cast<size_t>(c) * hp * wp);
        std::vector<double> padded_gx(need_x ? padded_x.size() : 0);
        for (int64_t in = 0; in < n; ++in) {
            if (need_w)
                pad_plane(xn->value.data() + in * c * h * wd, static_cast<int>(c),
                          static_cast<int>(h), static_cast<int>(wd), pad, padded_x.data());
            if (need_x) std::fill(padded_gx.begin(), padded_gx.end(), 0.0);
            for (int64_t io = 0; io < o; ++io) {
                const double* gplane = g + (in * o + io) * oh * ow;
                if (need_b) {
                    double s = 0.0;
                    for (int64_t i = 0; i < oh * ow; ++i) s += gplane[i];
                    bn->grad[io] += s;
                }
                for (int64_t ic = 0; ic < c; ++ic) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const size_t widx = ((io * c + ic) * kh + ky) * kw + kx;
                            if (need_x) {
                                const double wval = wn->value[widx];
                                for (int64_t oy = 0; oy < oh; ++oy) {
                                    const double* grow = gplane + oy * ow;
                                    double* gxrow =
                                        padded_gx.data() + (ic * hp + oy * stride + ky) * wp + kx;
                                    if (stride == 1) {
                                        for (int64_t ox = 0; ox < ow; ++ox)
                                            gxrow[ox] += wval * grow[ox];
                                    } else {
                                        for (int64_t ox = 0; ox < ow; ++ox)
                                            gxrow[ox * stride] += wval * grow[ox];
                                    }
                                }
                            }
                            if (need_w) {
                                double acc = 0.0;
                                for (int64_t oy = 0; oy < oh; ++oy) {
                                    const double* grow = gplane + oy * ow;
                                    const double* xrow =
                                        padded_x.data() + (ic * hp + oy * stride + ky) * wp + kx;
                                    if (stride == 1) {
                                        for (int64_t ox = 0; ox < ow; ++ox)
                                            acc += xrow[ox] * grow[ox];
                                    } else {
                                        for (int64_t ox = 0; ox < ow; ++ox)
                                            acc += xrow[ox * stride] * grow[ox];
                                    }
                                }
                                wn->grad[widx] += acc;
                            }
                        }
                    }
                }
            }
            if (need_x) {
                // strip the padding back off
                for (int64_t ic = 0; ic < c; ++ic)
                    for (int64_t y = 0; y < h; ++y) {
                        const double* src = padded_gx.data() + (ic * hp + y + pad) * wp + pad;
                        double* dst = xn->grad.data() + ((in * c + ic) * h + y) * wd;
                        for (int64_t xx = 0; xx < wd; ++xx) dst[xx] += src[xx];
                    }
            }
        }
    };
    return Tensor(node);
}

Tensor maxpool2x2(const Tensor& x) {
    check_rank(x, 4, "maxpool2x2 input");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("maxpool2x2 requires even spatial extents, got " +
                                    shape_str(x.shape()));
    const int64_t oh = h / 2, ow = w / 2;
    auto node = make_node({n, c, oh, ow}, {x.node()});
    auto argmax = std::make_shared<std::vector<int32_t>>(node->value.size());
    const double* xv = x.values().data();
    for (int64_t p = 0; p < n * c; ++p) {
        const double* plane = xv + p * h * w;
        double* oplane = node->value.data() + p * oh * ow;
        int32_t* aplane = argmax->data() + p * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t y0 = oy * 2, x0 = ox * 2;
                int64_t best = y0 * w + x0;
                const int64_t cand[3] = {y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1};
                for (int64_t idx : cand)
                    if (plane[idx] > plane[best]) best = idx;
                oplane[oy * ow + ox] = plane[best];
                aplane[oy * ow + ox] = static_cast<int32_t>(best);
            }
    }
    auto xn = x.node();
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (int64_t p = 0; p < n * c; ++p) {
            const double* gplane = self.grad.data() + p * oh * ow;
            const int32_t* aplane = argmax->data() + p * oh * ow;
            double* gx = xn->grad.data() + p * h * w;
            for (int64_t i = 0; i < oh * ow; ++i) gx[aplane[i]] += gplane[i];
        }
    };
    return Tensor(node);
}

Tensor relu(const Tensor& x) {
    auto node = make_node(x.shape(), {x.node()});
    const auto xv = x.values();
    for (int64_t i = 0; i < x.size(); ++i) node->value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    auto xn = x.node();
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
    };
    return Tensor(node);
}

Tensor clamp01(const Tensor& x) {
    auto node = make_node(x.shape(), {x.node()});
    const auto xv = x.values();
    for (int64_t i = 0; i < x.size(); ++i) node->value[i] = std::min(std::max(xv[i], 0.0), 1.0);
    auto xn = x.node();
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double v = xn->value[i];
            if (v >= 0.0 && v <= 1.0) xn->grad[i] += self.grad[i];
        }
    };
    return Tensor(node);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_rank(x, 2, "linear input");
    check_rank(w, 2, "linear weight");
    const int64_t n = x.dim(0), f = x.dim(1), m = w.dim(1);
    if (w.dim(0) != f)
        throw std::invalid_argument("linear shape mismatch: input " + shape_str(x.shape()) +
                                    " vs weight " + shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != m))
        throw std::invalid_argument("linear bias shape " + shape_str(b.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
    std::vector<std::shared_ptr<Node>> parents{x.node(), w.node()};
    if (b.defined()) parents.push_back(b.node());
    auto node = make_node({n, m}, std::move(parents));
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    for (int64_t i = 0; i < n; ++i) {
        double* orow = node->value.data() + i * m;
        if (b.defined())
            std::copy(b.values().begin(), b.values().end(), orow);
        for (int64_t k = 0; k < f; ++k) {
            const double xik = xv[i * f + k];
            const double* wrow = wv + k * m;
            for (int64_t j = 0; j < m; ++j) orow[j] += xik * wrow[j];
        }
    }
    auto xn = x.node(), wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    node->backward_fn = [=](Node& self) {
        const double* g = self.grad.data();
        if (bn && !bn->grad.empty())
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) bn->grad[j] += g[i * m + j];
        if (!wn->grad.empty())
            for (int64_t i = 0; i < n; ++i)
                for (int64_t k = 0; k < f; ++k) {
                    const double xik = xn->value[i * f + k];
                    const double* grow = g + i * m;
                    double* gw = wn->grad.data() + k * m;
                    for (int64_t j = 0; j < m; ++j) gw[j] += xik * grow[j];
                }
        if (!xn->grad.empty())
            for (int64_t i = 0; i < n; ++i)
                for (int64_t k = 0; k < f; ++k) {
                    const double* wrow = wn->value.data() + k * m;
                    const double* grow = g + i * m;
                    double acc = 0.0;
                    for (int64_t j = 0; j < m; ++j) acc += wrow[j] * grow[j];
                    xn->grad[i * f + k] += acc;
                }
    };
    return Tensor(node);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw std::invalid_argument("reshape to " + shape_str(shape) + " from " +
                                    shape_str(x.shape()));
    auto node = make_node(std::move(shape), {x.node()});
    node->value = x.node()->value;
    auto xn = x.node();
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    };
    return Tensor(node);
}

Tensor flatten(const Tensor& x) {
    if (x.rank() < 2) throw std::invalid_argument("flatten needs rank >= 2");
    int64_t rest = 1;
    for (int i = 1; i < x.rank(); ++i) rest *= x.dim(i);
    return reshape(x, {x.dim(0), rest});
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols of nothing");
    const int64_t n = xs[0].dim(0);
    int64_t total = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& t : xs) {
        check_rank(t, 2, "concat_cols input");
        if (t.dim(0) != n)
            throw std::invalid_argument("concat_cols row mismatch: " + shape_str(t.shape()) +
                                        " vs " + shape_str(xs[0].shape()));
        total += t.dim(1);
        parents.push_back(t.node());
    }
    auto node = make_node({n, total}, std::move(parents));
    int64_t off = 0;
    for (const auto& t : xs) {
        const int64_t m = t.dim(1);
        for (int64_t i = 0; i < n; ++i)
            std::copy(t.values().begin() + i * m, t.values().begin() + (i + 1) * m,
                      node->value.begin() + i * total + off);
        off += m;
    }
    node->backward_fn = [n, total](Node& self) {
        int64_t off = 0;
        for (auto& p : self.parents) {
            const int64_t m = p->shape[1];
            if (!p->grad.empty())
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < m; ++j)
                        p->grad[i * m + j] += self.grad[i * total + off + j];
            off += m;
        }
    };
    return Tensor(node);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_rank(logits, 2, "softmax_cross_entropy logits");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    for (int lb : labels)
        if (lb < 0 || lb >= k)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lb) +
                                        " out of range for " + std::to_string(k) + " classes");
    auto node = make_node({1}, {logits.node()});
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * k);
    const double* z = logits.values().data();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = z + i * k;
        double mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (int64_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - lse);
        loss += lse - row[labels[i]];
    }
    node->value[0] = loss / static_cast<double>(n);
    auto zn = logits.node();
    auto labels_copy = labels;
    node->backward_fn = [=](Node& self) {
        if (zn->grad.empty()) return;
        const double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < k; ++j) {
                double v = (*probs)[i * k + j];
                if (j == labels_copy[i]) v -= 1.0;
                zn->grad[i * k + j] += g * v;
            }
    };
    return Tensor(node);
}

std::vector<double> softmax_rows(const Tensor& logits) {
    const int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * k);
    const double* z = logits.values().data();
    for (int64_t i = 0; i < n; ++i) {
        const double* row = z + i * k;
        double mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        for (int64_t j = 0; j < k; ++j) out[i * k + j] = std::exp(row[j] - mx) / sum;
    }
    return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("l1_loss shape mismatch: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    auto node = make_node({1}, {a.node(), b.node()});
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
    node->value[0] = s;
    auto an = a.node(), bn = b.node();
    node->backward_fn = [=](Node& self) {
        const double g = self.grad[0];
        for (size_t i = 0; i < an->value.size(); ++i) {
            const double diff = an->value[i] - bn->value[i];
            const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            if (!an->grad.empty()) an->grad[i] += g * sgn;
            if (!bn->grad.empty()) bn->grad[i] -= g * sgn;
        }
    };
    return Tensor(node);
}

Tensor scale(const Tensor& x, double c) {
    auto node = make_node(x.shape(), {x.node()});
    for (int64_t i = 0; i < x.size(); ++i) node->value[i] = c * x.values()[i];
    auto xn = x.node();
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += c * self.grad[i];
    };
    return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    auto node = make_node(a.shape(), {a.node(), b.node()});
    for (int64_t i = 0; i < a.size(); ++i) node->value[i] = a.values()[i] + b.values()[i];
    node->backward_fn = [](Node& self) {
        for (auto& p : self.parents)
            if (!p->grad.empty())
                for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
    return Tensor(node);
}

Tensor category_mean(const Tensor& x, const std::vector<int>& labels,
                     const std::vector<int>& cats) {
    check_rank(x, 2, "category_mean input");
    const int64_t n = x.dim(0), m = x.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("category_mean: label count mismatch");
    const int64_t kp = static_cast<int64_t>(cats.size());
    auto node = make_node({kp, m}, {x.node()});
    std::vector<int64_t> counts(cats.size(), 0);
    std::vector<int> row_of(n, -1);
    for (int64_t r = 0; r < kp; ++r)
        for (int64_t i = 0; i < n; ++i)
            if (labels[i] == cats[r]) {
                row_of[i] = static_cast<int>(r);
                ++counts[r];
            }
    for (int64_t r = 0; r < kp; ++r)
        if (counts[r] == 0)
            throw std::invalid_argument("category_mean: category " + std::to_string(cats[r]) +
                                        " has no samples in batch");
    for (int64_t i = 0; i < n; ++i) {
        if (row_of[i] < 0) continue;
        const double inv = 1.0 / static_cast<double>(counts[row_of[i]]);
        const double* src = x.values().data() + i * m;
        double* dst = node->value.data() + static_cast<int64_t>(row_of[i]) * m;
        for (int64_t j = 0; j < m; ++j) dst[j] += inv * src[j];
    }
    auto xn = x.node();
    auto counts_p = std::make_shared<std::vector<int64_t>>(std::move(counts));
    auto rows_p = std::make_shared<std::vector<int>>(std::move(row_of));
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (int64_t i = 0; i < n; ++i) {
            const int r = (*rows_p)[i];
            if (r < 0) continue;
            const double inv = 1.0 / static_cast<double>((*counts_p)[r]);
            const double* g = self.grad.data() + static_cast<int64_t>(r) * m;
            double* gx = xn->grad.data() + i * m;
            for (int64_t j = 0; j < m; ++j) gx[j] += inv * g[j];
        }
    };
    return Tensor(node);
}

Tensor select_col(const Tensor& x, int64_t j) {
    check_rank(x, 2, "select_col input");
    const int64_t n = x.dim(0), m = x.dim(1);
    if (j < 0 || j >= m)
        throw std::invalid_argument("select_col: column " + std::to_string(j) + " out of " +
                                    shape_str(x.shape()));
    auto node = make_node({n}, {x.node()});
    for (int64_t i = 0; i < n; ++i) node->value[i] = x.values()[i * m + j];
    auto xn = x.node();
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        for (int64_t i = 0; i < n; ++i) xn->grad[i * m + j] += self.grad[i];
    };
    return Tensor(node);
}

Tensor kde_density(const Tensor& samples, const std::vector<double>& grid, double bandwidth,
                   double floor) {
    if (samples.size() < 2)
        throw std::invalid_argument("kde_density needs at least 2 samples, got " +
                                    std::to_string(samples.size()));
    if (bandwidth <= 0.0) throw std::invalid_argument("kde_density bandwidth must be positive");
    const int64_t ns = samples.size();
    const int64_t np = static_cast<int64_t>(grid.size());
    auto node = make_node({np}, {samples.node()});
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    const double* xs = samples.values().data();
    const double norm = 1.0 / (static_cast<double>(ns) * bandwidth);
    auto floored = std::make_shared<std::vector<uint8_t>>(np, 0);
    for (int64_t p = 0; p < np; ++p) {
        double q = 0.0;
        for (int64_t s = 0; s < ns; ++s) {
            const double z = (grid[p] - xs[s]) / bandwidth;
            q += inv_sqrt2pi * std::exp(-0.5 * z * z);
        }
        q *= norm;
        if (q < floor) {
            q = floor;
            (*floored)[p] = 1;
        }
        node->value[p] = q;
    }
    auto xn = samples.node();
    auto grid_copy = std::make_shared<std::vector<double>>(grid);
    node->backward_fn = [=](Node& self) {
        if (xn->grad.empty()) return;
        const double inv_nh2 = 1.0 / (static_cast<double>(ns) * bandwidth * bandwidth);
        for (int64_t p = 0; p < np; ++p) {
            if ((*floored)[p]) continue;
            const double gp = self.grad[p];
            if (gp == 0.0) continue;
            for (int64_t s = 0; s < ns; ++s) {
                const double z = ((*grid_copy)[p] - xn->value[s]) / bandwidth;
                // dq/dx_s = z * phi(z) / (n h^2)
                xn->grad[s] += gp * z * inv_sqrt2pi * std::exp(-0.5 * z * z) * inv_nh2;
            }
        }
    };
    return Tensor(node);
}

Tensor kl_beta_vs_kde(const Tensor& q, const std::vector<double>& beta_vals) {
    if (q.size() != static_cast<int64_t>(beta_vals.size()))
        throw std::invalid_argument("kl_beta_vs_kde: grid size mismatch");
    for (int64_t p = 0; p < q.size(); ++p)
        if (q.values()[p] <= 0.0)
            throw std::invalid_argument("kl_beta_vs_kde: q must be strictly positive");
    auto node = make_node({1}, {q.node()});
    double d = 0.0;
    for (size_t p = 0; p < beta_vals.size(); ++p)
        d += beta_vals[p] * (std::log(beta_vals[p]) - std::log(q.values()[p]));
    node->value[0] = d;
    auto qn = q.node();
    auto beta_copy = std::make_shared<std::vector<double>>(beta_vals);
    node->backward_fn = [=](Node& self) {
        if (qn->grad.empty()) return;
        const double g = self.grad[0];
        for (size_t p = 0; p < beta_copy->size(); ++p)
            qn->grad[p] -= g * (*beta_copy)[p] / qn->value[p];
    };
    return Tensor(node);
}

}  // namespace macnet::ops
