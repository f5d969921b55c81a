#include "macnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <thread>

#include "macnet/ops.hpp"
#include "macnet/rng.hpp"

namespace macnet {

void NetworkConfig::validate() const {
    if (categories < 2) throw std::invalid_argument("config: need at least 2 categories");
    if (attributes < 1) throw std::invalid_argument("config: need at least 1 attribute");
    if (trunk_channels.empty()) throw std::invalid_argument("config: empty trunk");
    if (patch_size < 1) throw std::invalid_argument("config: bad patch size");
    int s = patch_size;
    for (size_t i = 0; i < trunk_channels.size(); ++i) {
        if (trunk_channels[i] < 1) throw std::invalid_argument("config: bad channel count");
        if (s % 2 != 0)
            throw std::invalid_argument("config: patch size " + std::to_string(patch_size) +
                                        " not divisible by 2^" +
                                        std::to_string(trunk_channels.size()) + " pool stages");
        s /= 2;
    }
    if (lambda_attr < 0.0 || lambda_dist < 0.0)
        throw std::invalid_argument("config: loss weights must be non-negative");
    if (grid_points < 1) throw std::invalid_argument("config: need at least one grid point");
    if (kde_bandwidth <= 0.0) throw std::invalid_argument("config: kde bandwidth must be positive");
    if (classifier_width < 1) throw std::invalid_argument("config: bad classifier width");
    beta.validate();
}

int MacNetwork::add_param(const std::string& name, Shape shape, double init_limit, uint64_t seed) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    if (init_limit > 0.0) {
        auto eng = named_engine(seed, name);
        std::uniform_real_distribution<double> uni(-init_limit, init_limit);
        for (double& v : t.values()) v = uni(eng);
    }
    params_.emplace_back(name, std::move(t));
    return static_cast<int>(params_.size() - 1);
}

MacNetwork MacNetwork::build(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    MacNetwork net;
    net.cfg_ = cfg;
    net.params_.reserve(4 * cfg.trunk_channels.size() + 2 * cfg.trunk_channels.size() + 6);

    int in_ch = 3;
    int spatial = cfg.patch_size;
    for (size_t b = 0; b < cfg.trunk_channels.size(); ++b) {
        const int out_ch = cfg.trunk_channels[b];
        std::array<int, 4> idx{};
        for (int conv = 0; conv < 2; ++conv) {
            const int cin = conv == 0 ? in_ch : out_ch;
            const std::string base = "trunk.b" + std::to_string(b) + ".conv" + std::to_string(conv);
            // He-uniform for conv+relu
            const double limit = std::sqrt(6.0 / (static_cast<double>(cin) * 9.0));
            idx[conv * 2] = net.add_param(base + ".w", {out_ch, cin, 3, 3}, limit, seed);
            idx[conv * 2 + 1] = net.add_param(base + ".b", {out_ch}, 0.0, seed);
        }
        net.trunk_.push_back(idx);
        in_ch = out_ch;
        spatial /= 2;
    }

    const int stages = cfg.pool_stages();
    if (cfg.with_aux_heads) {
        int s = cfg.patch_size;
        for (int i = 0; i < stages; ++i) {
            s /= 2;
            const int fan_in = cfg.trunk_channels[i] * s * s;
            const double limit = std::sqrt(6.0 / (fan_in + cfg.attributes));
            const std::string base = "aux." + std::to_string(i);
            net.aux_.push_back({net.add_param(base + ".w", {fan_in, cfg.attributes}, limit, seed),
                                net.add_param(base + ".b", {cfg.attributes}, 0.0, seed)});
        }
        const int comb_in = stages * cfg.attributes;
        const double climit = std::sqrt(6.0 / (comb_in + cfg.attributes));
        net.comb_w_ = net.add_param("comb.w", {comb_in, cfg.attributes}, climit, seed);
        net.comb_b_ = net.add_param("comb.b", {cfg.attributes}, 0.0, seed);
    }

    const int cls_in = in_ch * spatial * spatial;
    const double l1 = std::sqrt(6.0 / (cls_in + cfg.classifier_width));
    net.cls1_w_ = net.add_param("cls.fc1.w", {cls_in, cfg.classifier_width}, l1, seed);
    net.cls1_b_ = net.add_param("cls.fc1.b", {cfg.classifier_width}, 0.0, seed);
    const double l2 = std::sqrt(6.0 / (cfg.classifier_width + cfg.categories));
    net.cls2_w_ = net.add_param("cls.fc2.w", {cfg.classifier_width, cfg.categories}, l2, seed);
    net.cls2_b_ = net.add_param("cls.fc2.b", {cfg.categories}, 0.0, seed);
    return net;
}

int MacNetwork::aux_input_size(int stage) const {
    int s = cfg_.patch_size;
    for (int i = 0; i <= stage; ++i) s /= 2;
    return cfg_.trunk_channels[stage] * s * s;
}

ForwardOutputs MacNetwork::forward(const Tensor& images, int zero_tap) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.patch_size ||
        images.dim(3) != cfg_.patch_size)
        throw std::invalid_argument("forward expects {N,3," + std::to_string(cfg_.patch_size) +
                                    "," + std::to_string(cfg_.patch_size) + "}, got " +
                                    shape_str(images.shape()));
    if (images.dim(0) < 1) throw std::invalid_argument("forward: empty batch");

    ForwardOutputs out;
    Tensor h = images;
    std::vector<Tensor> taps;
    for (size_t b = 0; b < trunk_.size(); ++b) {
        h = ops::relu(ops::conv2d(h, params_[trunk_[b][0]].value, params_[trunk_[b][1]].value, 1, 1));
        h = ops::relu(ops::conv2d(h, params_[trunk_[b][2]].value, params_[trunk_[b][3]].value, 1, 1));
        h = ops::maxpool2x2(h);
        taps.push_back(h);
    }

    if (cfg_.with_aux_heads) {
        for (size_t i = 0; i < aux_.size(); ++i) {
            Tensor pre = ops::linear(ops::flatten(taps[i]), params_[aux_[i][0]].value,
                                     params_[aux_[i][1]].value);
            Tensor phi = ops::clamp01(pre);
            if (static_cast<int>(i) == zero_tap)
                phi = Tensor::zeros({phi.dim(0), phi.dim(1)});
            out.per_layer_preacts.push_back(pre);
            out.per_layer_attrs.push_back(phi);
        }
        out.final_preact = ops::linear(ops::concat_cols(out.per_layer_attrs),
                                       params_[comb_w_].value, params_[comb_b_].value);
        out.final_attrs = ops::clamp01(out.final_preact);
    }

    Tensor z = ops::relu(ops::linear(ops::flatten(taps.back()), params_[cls1_w_].value,
                                     params_[cls1_b_].value));
    out.logits = ops::linear(z, params_[cls2_w_].value, params_[cls2_b_].value);
    out.probabilities = ops::softmax_rows(out.logits);
    return out;
}

LossBreakdown MacNetwork::compute_loss(const ForwardOutputs& out, const std::vector<int>& labels,
                                       const CategoryAttributeMatrix& a) const {
    if (labels.empty()) throw std::invalid_argument("compute_loss: empty batch");
    if (static_cast<int64_t>(labels.size()) != out.logits.dim(0))
        throw std::invalid_argument("compute_loss: label count does not match batch");
    if (a.k != cfg_.categories || a.m != cfg_.attributes)
        throw std::invalid_argument("compute_loss: attribute matrix is " + std::to_string(a.k) +
                                    "x" + std::to_string(a.m) + ", network expects " +
                                    std::to_string(cfg_.categories) + "x" +
                                    std::to_string(cfg_.attributes));

    LossBreakdown loss;
    Tensor total = ops::softmax_cross_entropy(out.logits, labels);
    loss.cross_entropy = total.scalar();

    if (cfg_.with_aux_heads) {
        // categories present in this batch, ascending
        std::set<int> present_set(labels.begin(), labels.end());
        std::vector<int> present(present_set.begin(), present_set.end());
        std::vector<double> target_rows;
        for (int k : present)
            for (int mcol = 0; mcol < a.m; ++mcol) target_rows.push_back(a.at(k, mcol));
        Tensor targets = Tensor::from_data({static_cast<int64_t>(present.size()), a.m},
                                           std::move(target_rows));
        const double inv_kp = 1.0 / static_cast<double>(present.size());

        std::vector<Tensor> heads = out.per_layer_attrs;
        heads.push_back(out.final_attrs);
        for (const Tensor& phi : heads) {
            Tensor u = ops::scale(ops::l1_loss(ops::category_mean(phi, labels, present), targets),
                                  inv_kp);
            loss.u.push_back(u.scalar());
            if (cfg_.lambda_attr > 0.0) total = ops::add(total, ops::scale(u, cfg_.lambda_attr));
        }

        const DensityGrid grid = cfg_.grid();
        std::vector<double> beta_vals(grid.points.size());
        for (size_t p = 0; p < grid.points.size(); ++p)
            beta_vals[p] = beta_pdf(grid.points[p], cfg_.beta);

        Tensor d_term;
        if (cfg_.dist_mode == DistLossMode::pooled) {
            const int64_t n = out.final_attrs.size();
            if (n >= 2) {
                Tensor pooled = ops::reshape(out.final_attrs, {n});
                d_term = ops::kl_beta_vs_kde(
                    ops::kde_density(pooled, grid.points, cfg_.kde_bandwidth), beta_vals);
            }
        } else {
            // one KDE per attribute column, averaged
            if (out.final_attrs.dim(0) >= 2) {
                Tensor acc;
                for (int mcol = 0; mcol < cfg_.attributes; ++mcol) {
                    Tensor col = ops::select_col(out.final_attrs, mcol);
                    Tensor kl = ops::kl_beta_vs_kde(
                        ops::kde_density(col, grid.points, cfg_.kde_bandwidth), beta_vals);
                    acc = acc.defined() ? ops::add(acc, kl) : kl;
                }
                d_term = ops::scale(acc, 1.0 / static_cast<double>(cfg_.attributes));
            }
        }
        if (d_term.defined()) {
            loss.d = d_term.scalar();
            if (cfg_.lambda_dist > 0.0)
                total = ops::add(total, ops::scale(d_term, cfg_.lambda_dist));
        }
    }

    loss.total = total;
    loss.total_value = total.scalar();
    return loss;
}

std::vector<Parameter*> MacNetwork::parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> MacNetwork::parameters() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<Parameter*> MacNetwork::trainable_parameters() {
    if (!cfg_.with_aux_heads || cfg_.lambda_attr > 0.0 || cfg_.lambda_dist > 0.0)
        return parameters();
    // aux losses disabled: heads stay frozen, gradients never reach them
    std::vector<Parameter*> out;
    for (auto& p : params_)
        if (p.name.rfind("aux.", 0) != 0 && p.name.rfind("comb.", 0) != 0) out.push_back(&p);
    return out;
}

Parameter* MacNetwork::find_parameter(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

MacNetwork::Snapshot MacNetwork::snapshot() const {
    Snapshot s;
    for (const auto& p : params_) {
        s.values.emplace_back(p.value.values().begin(), p.value.values().end());
        s.momentum.push_back(p.momentum);
    }
    return s;
}

void MacNetwork::restore(const Snapshot& snap) {
    if (snap.values.size() != params_.size())
        throw std::invalid_argument("snapshot does not match network");
    for (size_t i = 0; i < params_.size(); ++i) {
        std::copy(snap.values[i].begin(), snap.values[i].end(), params_[i].value.values().begin());
        params_[i].momentum = snap.momentum[i];
        params_[i].value.zero_grad();
    }
}

std::vector<double> predict_map(const MacNetwork& net, const Image& image, int stride,
                                MapTarget target, int threads) {
    const int patch = net.config().patch_size;
    if (stride < 1) throw std::invalid_argument("predict_map: stride must be >= 1");
    if (image.height < patch || image.width < patch)
        throw std::invalid_argument("predict_map: image " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + " smaller than one " +
                                    std::to_string(patch) + "-pixel patch");

    const int ny = (image.height - patch) / stride + 1;
    const int nx = (image.width - patch) / stride + 1;
    const int channels =
        target == MapTarget::attributes ? net.config().attributes : net.config().categories;
    if (target == MapTarget::attributes && !net.config().with_aux_heads)
        throw std::invalid_argument("predict_map: network has no attribute heads");

    // per-window channel vectors, row-major over the window grid
    std::vector<double> window_vals(static_cast<size_t>(ny) * nx * channels);

    auto eval_range = [&](int begin, int end) {
        constexpr int kChunk = 64;
        for (int start = begin; start < end; start += kChunk) {
            const int count = std::min(kChunk, end - start);
            Tensor batch = Tensor::zeros({count, 3, patch, patch});
            auto bv = batch.values();
            for (int i = 0; i < count; ++i) {
                const int wy = (start + i) / nx, wx = (start + i) % nx;
                const int y0 = wy * stride, x0 = wx * stride;
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < patch; ++y)
                        for (int x = 0; x < patch; ++x)
                            bv[((static_cast<int64_t>(i) * 3 + c) * patch + y) * patch + x] =
                                image.at(c, y0 + y, x0 + x);
            }
            ForwardOutputs out = net.forward(batch);
            for (int i = 0; i < count; ++i)
                for (int c = 0; c < channels; ++c)
                    window_vals[static_cast<size_t>(start + i) * channels + c] =
                        target == MapTarget::attributes
                            ? out.final_attrs.values()[static_cast<int64_t>(i) * channels + c]
                            : out.probabilities[static_cast<size_t>(i) * channels + c];
        }
    };
    const int total_windows = ny * nx;
    const int nthreads = std::max(1, threads);
    if (nthreads == 1 || total_windows < 2 * nthreads) {
        eval_range(0, total_windows);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (total_windows + nthreads - 1) / nthreads;
        for (int t = 0; t < nthreads; ++t) {
            const int begin = std::min(total_windows, t * chunk);
            const int end = std::min(total_windows, begin + chunk);
            if (begin < end) pool.emplace_back(eval_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    // nearest evaluated center per axis; ties round toward the lower index
    const int c0 = patch / 2;
    auto nearest = [&](int p, int n) {
        if (p <= c0) return 0;
        const int idx = (p - c0 + (stride - 1) / 2) / stride;
        return std::min(idx, n - 1);
    };
    std::vector<int> ny_of(image.height), nx_of(image.width);
    for (int y = 0; y < image.height; ++y) ny_of[y] = nearest(y, ny);
    for (int x = 0; x < image.width; ++x) nx_of[x] = nearest(x, nx);

    std::vector<double> map(static_cast<size_t>(channels) * image.height * image.width);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const double* src =
                window_vals.data() + (static_cast<size_t>(ny_of[y]) * nx + nx_of[x]) * channels;
            for (int c = 0; c < channels; ++c)
                map[(static_cast<size_t>(c) * image.height + y) * image.width + x] = src[c];
        }
    return map;
}

}  // namespace macnet
