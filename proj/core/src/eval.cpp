#include "macnet/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "macnet/ops.hpp"
#include "macnet/rng.hpp"
#include "json.hpp"

namespace macnet {

LogicTree LogicTree::single_leaf(int attr, bool negated) {
    LogicTree t;
    t.set_root(t.add_leaf(attr, negated));
    return t;
}

int LogicTree::add_leaf(int attr, bool negated) {
    nodes_.push_back({Kind::leaf, -1, -1, attr, negated});
    return static_cast<int>(nodes_.size() - 1);
}

int LogicTree::add_not(int child) {
    nodes_.push_back({Kind::not_op, child, -1, 0, false});
    return static_cast<int>(nodes_.size() - 1);
}

int LogicTree::add_op(Kind kind, int left, int right) {
    nodes_.push_back({kind, left, right, 0, false});
    return static_cast<int>(nodes_.size() - 1);
}

bool LogicTree::eval(std::span<const uint8_t> bits) const {
    auto rec = [&](auto&& self, int idx) -> bool {
        const Node& n = nodes_[idx];
        switch (n.kind) {
            case Kind::leaf: {
                const bool v = bits[n.attr] != 0;
                return n.negated ? !v : v;
            }
            case Kind::not_op: return !self(self, n.left);
            case Kind::and_op: return self(self, n.left) && self(self, n.right);
            default: return self(self, n.left) || self(self, n.right);
        }
    };
    return rec(rec, root_);
}

int LogicTree::leaf_count() const {
    auto rec = [&](auto&& self, int idx) -> int {
        const Node& n = nodes_[idx];
        if (n.kind == Kind::leaf) return 1;
        if (n.kind == Kind::not_op) return self(self, n.left);
        return self(self, n.left) + self(self, n.right);
    };
    return rec(rec, root_);
}

void LogicTree::validate(int attribute_count) const {
    if (root_ < 0 || root_ >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("logic tree has no root");
    auto rec = [&](auto&& self, int idx) -> void {
        if (idx < 0 || idx >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("logic tree child index out of range");
        const Node& n = nodes_[idx];
        switch (n.kind) {
            case Kind::leaf:
                if (n.attr < 0 || n.attr >= attribute_count)
                    throw std::invalid_argument("logic tree leaf attribute out of range");
                return;
            case Kind::not_op:
                if (n.right != -1) throw std::invalid_argument("NOT takes exactly one child");
                self(self, n.left);
                return;
            default:
                self(self, n.left);
                self(self, n.right);
        }
    };
    rec(rec, root_);
}

std::string LogicTree::to_string() const {
    auto rec = [&](auto&& self, int idx) -> std::string {
        const Node& n = nodes_[idx];
        switch (n.kind) {
            case Kind::leaf:
                return (n.negated ? "NOT a" : "a") + std::to_string(n.attr);
            case Kind::not_op: return "NOT (" + self(self, n.left) + ")";
            case Kind::and_op:
                return "(" + self(self, n.left) + " AND " + self(self, n.right) + ")";
            default: return "(" + self(self, n.left) + " OR " + self(self, n.right) + ")";
        }
    };
    return rec(rec, root_);
}

namespace {

// Bit-packed evaluation: one word column per attribute, 64 samples per word.
struct BitColumns {
    int64_t samples = 0;
    size_t words = 0;
    std::vector<std::vector<uint64_t>> cols;
    std::vector<uint64_t> tail_mask_vec;  // ones for the valid sample bits

    static BitColumns pack(const std::vector<std::vector<uint8_t>>& rows, int m) {
        BitColumns bc;
        bc.samples = static_cast<int64_t>(rows.size());
        bc.words = (rows.size() + 63) / 64;
        bc.cols.assign(m, std::vector<uint64_t>(bc.words, 0));
        for (size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < m; ++j)
                if (rows[i][j]) bc.cols[j][i / 64] |= 1ULL << (i % 64);
        bc.tail_mask_vec.assign(bc.words, ~0ULL);
        const int rem = static_cast<int>(rows.size() % 64);
        if (rem) bc.tail_mask_vec.back() = (1ULL << rem) - 1;
        return bc;
    }
};

std::vector<uint64_t> pack_bits(const std::vector<uint8_t>& bits) {
    std::vector<uint64_t> out((bits.size() + 63) / 64, 0);
    for (size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) out[i / 64] |= 1ULL << (i % 64);
    return out;
}

void eval_tree_words(const LogicTree& tree, int idx, const BitColumns& bc,
                     std::vector<uint64_t>& out) {
    const auto& n = tree.nodes()[idx];
    switch (n.kind) {
        case LogicTree::Kind::leaf: {
            out = bc.cols[n.attr];
            if (n.negated)
                for (auto& w : out) w = ~w;
            return;
        }
        case LogicTree::Kind::not_op: {
            eval_tree_words(tree, n.left, bc, out);
            for (auto& w : out) w = ~w;
            return;
        }
        default: {
            std::vector<uint64_t> right;
            eval_tree_words(tree, n.left, bc, out);
            eval_tree_words(tree, n.right, bc, right);
            if (n.kind == LogicTree::Kind::and_op)
                for (size_t i = 0; i < out.size(); ++i) out[i] &= right[i];
            else
                for (size_t i = 0; i < out.size(); ++i) out[i] |= right[i];
        }
    }
}

// misclassification count
int64_t tree_errors(const LogicTree& tree, const BitColumns& bc,
                    const std::vector<uint64_t>& trait_words) {
    std::vector<uint64_t> pred;
    eval_tree_words(tree, tree.root(), bc, pred);
    int64_t errors = 0;
    for (size_t w = 0; w < bc.words; ++w)
        errors += std::popcount((pred[w] ^ trait_words[w]) & bc.tail_mask_vec[w]);
    return errors;
}

// Rebuild a tree keeping only nodes reachable from the root (moves leave
// garbage entries behind).
LogicTree compact(const LogicTree& src) {
    LogicTree dst;
    auto rec = [&](auto&& self, int idx) -> int {
        const auto& n = src.nodes()[idx];
        switch (n.kind) {
            case LogicTree::Kind::leaf: return dst.add_leaf(n.attr, n.negated);
            case LogicTree::Kind::not_op: return dst.add_not(self(self, n.left));
            default: {
                const int l = self(self, n.left);
                const int r = self(self, n.right);
                return dst.add_op(n.kind, l, r);
            }
        }
    };
    dst.set_root(rec(rec, src.root()));
    return dst;
}

struct TreeIndex {
    std::vector<int> leaves;
    std::vector<int> binaries;  // AND/OR nodes
    std::vector<int> nots;
    std::vector<std::pair<int, int>> parent_slot;  // parent index, slot (0=left,1=right), -1 root
};

TreeIndex index_tree(const LogicTree& t) {
    TreeIndex ti;
    ti.parent_slot.assign(t.nodes().size(), {-2, -2});
    auto rec = [&](auto&& self, int idx, int parent, int slot) -> void {
        ti.parent_slot[idx] = {parent, slot};
        const auto& n = t.nodes()[idx];
        switch (n.kind) {
            case LogicTree::Kind::leaf: ti.leaves.push_back(idx); return;
            case LogicTree::Kind::not_op:
                ti.nots.push_back(idx);
                self(self, n.left, idx, 0);
                return;
            default:
                ti.binaries.push_back(idx);
                self(self, n.left, idx, 0);
                self(self, n.right, idx, 1);
        }
    };
    rec(rec, t.root(), -1, -1);
    return ti;
}

}  // namespace

double logic_tree_accuracy(const LogicTree& tree, const std::vector<std::vector<uint8_t>>& attr_rows,
                           const std::vector<uint8_t>& trait) {
    if (attr_rows.empty() || attr_rows.size() != trait.size())
        throw std::invalid_argument("logic_tree_accuracy: row/trait mismatch");
    const int m = static_cast<int>(attr_rows[0].size());
    const auto bc = BitColumns::pack(attr_rows, m);
    const auto tw = pack_bits(trait);
    const int64_t errors = tree_errors(tree, bc, tw);
    return 1.0 - static_cast<double>(errors) / static_cast<double>(trait.size());
}

LogicFitResult fit_logic_tree(const std::vector<std::vector<uint8_t>>& attr_rows,
                              const std::vector<uint8_t>& trait, const AnnealConfig& cfg,
                              uint64_t seed) {
    if (attr_rows.empty() || attr_rows.size() != trait.size())
        throw std::invalid_argument("fit_logic_tree: need matching attribute rows and traits");
    const int m = static_cast<int>(attr_rows[0].size());
    if (m < 1) throw std::invalid_argument("fit_logic_tree: no attributes");
    int64_t positives = 0;
    for (uint8_t t : trait) positives += t ? 1 : 0;
    if (positives == 0 || positives == static_cast<int64_t>(trait.size()))
        throw std::invalid_argument("fit_logic_tree: trait column is constant, nothing to fit");

    const auto bc = BitColumns::pack(attr_rows, m);
    const auto tw = pack_bits(trait);
    const double n = static_cast<double>(trait.size());

    auto eng = named_engine(seed, "logic-anneal");
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto rand_int = [&](int count) {
        return static_cast<int>(std::uniform_int_distribution<int>(0, count - 1)(eng));
    };

    LogicTree cur = LogicTree::single_leaf(rand_int(m), uni(eng) < 0.5);
    double cur_score = static_cast<double>(tree_errors(cur, bc, tw)) / n;
    LogicFitResult best{cur, 1.0 - cur_score};
    double best_score = cur_score;

    double temp = cfg.t0;
    for (int p = 0; p < cfg.proposals; ++p) {
        LogicTree cand = cur;
        const TreeIndex ti = index_tree(cand);
        const int move = rand_int(5);
        bool changed = false;
        switch (move) {
            case 0: {  // replace-leaf
                auto& node = cand.node_mut(ti.leaves[rand_int(static_cast<int>(ti.leaves.size()))]);
                node.attr = rand_int(m);
                node.negated = uni(eng) < 0.5;
                changed = true;
                break;
            }
            case 1: {  // negate-leaf
                auto& node = cand.node_mut(ti.leaves[rand_int(static_cast<int>(ti.leaves.size()))]);
                node.negated = !node.negated;
                changed = true;
                break;
            }
            case 2: {  // swap-operator
                if (ti.binaries.empty()) break;
                auto& node = cand.node_mut(ti.binaries[rand_int(static_cast<int>(ti.binaries.size()))]);
                node.kind = node.kind == LogicTree::Kind::and_op ? LogicTree::Kind::or_op
                                                                 : LogicTree::Kind::and_op;
                changed = true;
                break;
            }
            case 3: {  // grow: leaf -> op(leaf, fresh leaf), sometimes behind a NOT
                if (cand.leaf_count() >= cfg.max_leaves) break;
                const int leaf = ti.leaves[rand_int(static_cast<int>(ti.leaves.size()))];
                const auto old = cand.nodes()[leaf];
                const int kept = cand.add_leaf(old.attr, old.negated);
                int fresh = cand.add_leaf(rand_int(m), uni(eng) < 0.5);
                if (uni(eng) < 0.25) fresh = cand.add_not(fresh);
                auto& slot = cand.node_mut(leaf);
                slot.kind = uni(eng) < 0.5 ? LogicTree::Kind::and_op : LogicTree::Kind::or_op;
                slot.left = kept;
                slot.right = fresh;
                changed = true;
                break;
            }
            default: {  // prune: binary node -> one child; NOT -> its child
                if (!ti.binaries.empty() || !ti.nots.empty()) {
                    const int total =
                        static_cast<int>(ti.binaries.size() + ti.nots.size());
                    const int pick = rand_int(total);
                    int target, child;
                    if (pick < static_cast<int>(ti.binaries.size())) {
                        target = ti.binaries[pick];
                        const auto& tn = cand.nodes()[target];
                        child = uni(eng) < 0.5 ? tn.left : tn.right;
                    } else {
                        target = ti.nots[pick - static_cast<int>(ti.binaries.size())];
                        child = cand.nodes()[target].left;
                    }
                    cand.node_mut(target) = cand.nodes()[child];
                    changed = true;
                }
                break;
            }
        }
        if (changed) {
            const double cand_score = static_cast<double>(tree_errors(cand, bc, tw)) / n;
            const double delta = cand_score - cur_score;
            if (delta <= 0.0 || uni(eng) < std::exp(-delta / std::max(temp, 1e-300))) {
                cur = compact(cand);
                cur_score = cand_score;
                if (cur_score < best_score) {
                    best_score = cur_score;
                    best.tree = cur;
                    best.accuracy = 1.0 - cur_score;
                }
            }
        }
        temp *= cfg.cooling;
    }
    best.tree.validate(m);
    return best;
}

SpatialConsistency spatial_consistency(const std::vector<double>& map, int height, int width,
                                       const std::vector<int>& region_mask) {
    if (map.size() != static_cast<size_t>(height) * width ||
        region_mask.size() != map.size())
        throw std::invalid_argument("spatial_consistency: map/mask size mismatch");
    std::set<int> regions(region_mask.begin(), region_mask.end());
    if (regions.size() < 2)
        throw std::invalid_argument("spatial_consistency: mask must contain at least two regions");
    double within = 0.0, cross = 0.0;
    int64_t nwithin = 0, ncross = 0;
    auto visit = [&](int64_t i, int64_t j) {
        const double diff = std::abs(map[i] - map[j]);
        if (region_mask[i] == region_mask[j]) {
            within += diff;
            ++nwithin;
        } else {
            cross += diff;
            ++ncross;
        }
    };
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int64_t i = static_cast<int64_t>(y) * width + x;
            if (x + 1 < width) visit(i, i + 1);
            if (y + 1 < height) visit(i, i + width);
        }
    if (ncross == 0)
        throw std::invalid_argument("spatial_consistency: regions share no 4-adjacent boundary");
    SpatialConsistency out;
    out.within_tv = nwithin ? within / static_cast<double>(nwithin) : 0.0;
    out.cross_tv = cross / static_cast<double>(ncross);
    return out;
}

double cluster_separation(const std::vector<std::vector<double>>& vectors,
                          const std::vector<int>& labels) {
    const size_t n = vectors.size();
    if (n != labels.size() || n < 2)
        throw std::invalid_argument("cluster_separation: need matching vectors and labels");
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2)
        throw std::invalid_argument("cluster_separation: need at least two labels");

    std::vector<int> ids(distinct.begin(), distinct.end());
    std::vector<int> idx_of(n);
    std::vector<int64_t> counts(ids.size(), 0);
    for (size_t i = 0; i < n; ++i) {
        const auto it = std::lower_bound(ids.begin(), ids.end(), labels[i]);
        idx_of[i] = static_cast<int>(it - ids.begin());
        ++counts[idx_of[i]];
    }

    auto dist = [&](size_t i, size_t j) {
        double s = 0.0;
        for (size_t c = 0; c < vectors[i].size(); ++c) {
            const double d = vectors[i][c] - vectors[j][c];
            s += d * d;
        }
        return std::sqrt(s);
    };

    double total = 0.0;
    std::vector<double> sums(ids.size());
    for (size_t i = 0; i < n; ++i) {
        if (counts[idx_of[i]] < 2) continue;  // singleton cluster: silhouette 0
        std::fill(sums.begin(), sums.end(), 0.0);
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            sums[idx_of[j]] += dist(i, j);
        }
        const double a = sums[idx_of[i]] / static_cast<double>(counts[idx_of[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < ids.size(); ++c) {
            if (static_cast<int>(c) == idx_of[i] || counts[c] == 0) continue;
            b = std::min(b, sums[c] / static_cast<double>(counts[c]));
        }
        const double mx = std::max(a, b);
        total += mx > 0.0 ? (b - a) / mx : 0.0;
    }
    return total / static_cast<double>(n);
}

double distribution_match(const std::vector<double>& values, const BetaParams& beta,
                          const DensityGrid& grid) {
    const auto est = kde_eval(values, grid);
    return kl_beta_vs_kde(grid, beta, est.q);
}

PatchFeatures extract_features(const MacNetwork& net, const SplitData& split) {
    PatchFeatures f;
    f.attr_dim = net.config().with_aux_heads ? net.config().attributes : 0;
    f.prob_dim = net.config().categories;
    const int64_t n = split.count();
    constexpr int64_t kChunk = 64;
    for (int64_t start = 0; start < n; start += kChunk) {
        std::vector<int64_t> idx(std::min(kChunk, n - start));
        std::iota(idx.begin(), idx.end(), start);
        const ForwardOutputs out = net.forward(make_batch_tensor(split, idx));
        if (f.attr_dim) {
            const auto av = out.final_attrs.values();
            f.attrs.insert(f.attrs.end(), av.begin(), av.end());
        }
        f.probs.insert(f.probs.end(), out.probabilities.begin(), out.probabilities.end());
    }
    return f;
}

LinearSvm LinearSvm::fit(const std::vector<std::vector<double>>& positives,
                         const std::vector<std::vector<double>>& negatives, double c, int epochs,
                         uint64_t seed) {
    if (positives.empty() || negatives.empty())
        throw std::invalid_argument("LinearSvm::fit: need samples of both classes");
    const size_t dim = positives[0].size();
    const size_t n = positives.size() + negatives.size();
    const double lambda = 1.0 / (c * static_cast<double>(n));

    LinearSvm svm;
    svm.w.assign(dim + 1, 0.0);  // trailing bias feature
    std::vector<std::pair<const std::vector<double>*, double>> data;
    data.reserve(n);
    for (const auto& x : positives) data.push_back({&x, 1.0});
    for (const auto& x : negatives) data.push_back({&x, -1.0});

    auto eng = named_engine(seed, "svm");
    int64_t t = 1;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), eng);
        for (size_t i : order) {
            const auto& [x, y] = data[i];
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            double margin = svm.w[dim];
            for (size_t j = 0; j < dim; ++j) margin += svm.w[j] * (*x)[j];
            margin *= y;
            for (size_t j = 0; j <= dim; ++j) svm.w[j] *= 1.0 - eta * lambda;
            if (margin < 1.0) {
                for (size_t j = 0; j < dim; ++j) svm.w[j] += eta * y * (*x)[j];
                svm.w[dim] += eta * y;
            }
            ++t;
        }
    }
    return svm;
}

double LinearSvm::decision(std::span<const double> x) const {
    double s = w.back();
    for (size_t j = 0; j + 1 < w.size(); ++j) s += w[j] * x[j];
    return s;
}

const char* feature_set_name(FeatureSet f) {
    switch (f) {
        case FeatureSet::attributes: return "attributes";
        case FeatureSet::materials: return "materials";
        default: return "combined";
    }
}

double NShotReport::recall(int shots, FeatureSet f) const {
    for (const auto& c : cells)
        if (c.shots == shots && c.features == f) return c.mean_recall;
    throw std::invalid_argument("no such N-shot cell");
}

namespace {

// random 32x32 crops of a freshly generated canvas
void extract_crops(const CategorySpec& spec, uint64_t canvas_seed, int canvas_size, int patch_size,
                   int count, SplitData& out) {
    const Image canvas = gen_patch(spec, canvas_seed, canvas_size);
    auto eng = named_engine(canvas_seed, "crops");
    std::uniform_int_distribution<int> off(0, canvas_size - patch_size);
    const size_t len = static_cast<size_t>(3) * patch_size * patch_size;
    for (int i = 0; i < count; ++i) {
        const int y0 = off(eng), x0 = off(eng);
        const size_t base = out.pixels.size();
        out.pixels.resize(base + len);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    out.pixels[base + (static_cast<size_t>(c) * patch_size + y) * patch_size + x] =
                        canvas.at(c, y0 + y, x0 + x);
        out.labels.push_back(0);
        out.traits.push_back({});
    }
}

std::vector<std::vector<double>> feature_rows(const PatchFeatures& f, FeatureSet set, int64_t begin,
                                              int64_t end) {
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(end - begin));
    for (int64_t i = begin; i < end; ++i) {
        std::vector<double> row;
        if (set != FeatureSet::materials)
            row.insert(row.end(), f.attrs.begin() + i * f.attr_dim,
                       f.attrs.begin() + (i + 1) * f.attr_dim);
        if (set != FeatureSet::attributes)
            row.insert(row.end(), f.probs.begin() + i * f.prob_dim,
                       f.probs.begin() + (i + 1) * f.prob_dim);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

NShotReport nshot_eval(const MacNetwork& net, const std::vector<CategorySpec>& all_categories,
                       int held_out, const LoadedCorpus& seen_corpus, const NShotConfig& cfg) {
    if (held_out < 0 || held_out >= static_cast<int>(all_categories.size()))
        throw std::invalid_argument("nshot_eval: held-out index out of range");
    if (cfg.repeats < 1) throw std::invalid_argument("nshot_eval: need at least one repeat");
    for (int nshot : cfg.shots)
        if (nshot > cfg.pool_images)
            throw std::invalid_argument("nshot_eval: N=" + std::to_string(nshot) +
                                        " exceeds the " + std::to_string(cfg.pool_images) +
                                        " available images");
    if (net.config().categories != static_cast<int>(all_categories.size()) - 1)
        throw std::invalid_argument("nshot_eval: network must be trained without the held-out "
                                    "category");

    const CategorySpec& held_spec = all_categories[held_out];
    const int patch_size = net.config().patch_size;
    const int ppi = cfg.patches_per_image;

    NShotReport report;
    report.held_out = held_out;
    report.held_out_name = held_spec.name;
    report.repeats = cfg.repeats;

    // accumulated recalls: [shots][featureset][repeat]
    std::vector<std::array<std::vector<double>, 3>> recalls(cfg.shots.size());

    for (int rep = 0; rep < cfg.repeats; ++rep) {
        const uint64_t rep_seed = mix_seed(cfg.seed, 7000 + rep);

        SplitData pos_pool;
        pos_pool.patch_size = patch_size;
        for (int img = 0; img < cfg.pool_images; ++img)
            extract_crops(held_spec, mix_seed(rep_seed, img), cfg.canvas_size, patch_size, ppi,
                          pos_pool);
        SplitData test_pool;
        test_pool.patch_size = patch_size;
        for (int img = 0; img < cfg.test_images; ++img)
            extract_crops(held_spec, mix_seed(rep_seed, 100000 + img), cfg.canvas_size, patch_size,
                          ppi, test_pool);

        // class-balanced negatives from the seen categories' train split
        SplitData neg_pool;
        neg_pool.patch_size = patch_size;
        {
            const int seen_k = seen_corpus.category_count();
            std::vector<std::vector<int64_t>> by_cat(seen_k);
            for (int64_t i = 0; i < seen_corpus.train.count(); ++i)
                by_cat[seen_corpus.train.labels[i]].push_back(i);
            auto eng = named_engine(rep_seed, "negatives");
            for (auto& v : by_cat) std::shuffle(v.begin(), v.end(), eng);
            const int64_t need = static_cast<int64_t>(cfg.pool_images) * ppi;
            const size_t len = static_cast<size_t>(3) * patch_size * patch_size;
            for (int64_t i = 0; i < need; ++i) {
                const int cat = static_cast<int>(i % seen_k);
                const auto& list = by_cat[cat];
                const int64_t src = list[(i / seen_k) % list.size()];
                const auto patch = seen_corpus.train.patch(src);
                neg_pool.pixels.insert(neg_pool.pixels.end(), patch.begin(), patch.end());
                neg_pool.labels.push_back(0);
                neg_pool.traits.push_back({});
            }
            (void)len;
        }

        const PatchFeatures pos_f = extract_features(net, pos_pool);
        const PatchFeatures neg_f = extract_features(net, neg_pool);
        const PatchFeatures test_f = extract_features(net, test_pool);

        for (size_t si = 0; si < cfg.shots.size(); ++si) {
            const int nshot = cfg.shots[si];
            const int64_t npos = static_cast<int64_t>(nshot) * ppi;
            for (int fs = 0; fs < 3; ++fs) {
                const FeatureSet set = static_cast<FeatureSet>(fs);
                const auto pos_rows = feature_rows(pos_f, set, 0, npos);
                const auto neg_rows = feature_rows(neg_f, set, 0, npos);
                const LinearSvm svm = LinearSvm::fit(pos_rows, neg_rows, cfg.svm_c, cfg.svm_epochs,
                                                     mix_seed(rep_seed, 500 + si * 8 + fs));
                const auto test_rows = feature_rows(test_f, set, 0, test_pool.count());
                int64_t hit = 0;
                for (const auto& row : test_rows)
                    if (svm.decision(row) > 0.0) ++hit;
                recalls[si][fs].push_back(static_cast<double>(hit) /
                                          static_cast<double>(test_rows.size()));
            }
        }
    }

    for (size_t si = 0; si < cfg.shots.size(); ++si)
        for (int fs = 0; fs < 3; ++fs) {
            const auto& r = recalls[si][fs];
            double mean = 0.0;
            for (double v : r) mean += v;
            mean /= static_cast<double>(r.size());
            double var = 0.0;
            for (double v : r) var += (v - mean) * (v - mean);
            NShotCell cell;
            cell.shots = cfg.shots[si];
            cell.features = static_cast<FeatureSet>(fs);
            cell.mean_recall = mean;
            cell.std_recall = r.size() > 1 ? std::sqrt(var / static_cast<double>(r.size() - 1)) : 0.0;
            report.cells.push_back(cell);
        }
    return report;
}

void save_nshot_json(const std::filesystem::path& path, const NShotReport& report) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells)
        cells.push_back({{"n", c.shots},
                         {"feature_set", feature_set_name(c.features)},
                         {"mean", c.mean_recall},
                         {"std", c.std_recall}});
    nlohmann::json doc = {{"held_out", report.held_out},
                          {"held_out_name", report.held_out_name},
                          {"repeats", report.repeats},
                          {"cells", cells}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

void save_nshot_csv(const std::filesystem::path& path, const NShotReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "N,feature_set,mean,std\n";
    char buf[64];
    for (const auto& c : report.cells) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g", c.shots, feature_set_name(c.features),
                      c.mean_recall, c.std_recall);
        out << buf << "\n";
    }
}

TraitDecodeResult decode_traits(const MacNetwork& net, const LoadedCorpus& corpus,
                                const AnnealConfig& cfg, uint64_t seed) {
    if (!net.config().with_aux_heads)
        throw std::invalid_argument("decode_traits: network has no attribute heads");
    const int m = net.config().attributes;

    auto binarize = [&](const SplitData& split) {
        const PatchFeatures f = extract_features(net, split);
        std::vector<std::vector<uint8_t>> rows(split.count(), std::vector<uint8_t>(m));
        for (int64_t i = 0; i < split.count(); ++i)
            for (int j = 0; j < m; ++j)
                rows[i][j] = f.attrs[static_cast<size_t>(i) * m + j] >= 0.5 ? 1 : 0;
        return rows;
    };
    const auto train_rows = binarize(corpus.train);
    const auto test_rows = binarize(corpus.test);

    TraitDecodeResult result;
    double sum = 0.0;
    int counted = 0;
    for (int t = 0; t < kTraitCount; ++t) {
        std::vector<uint8_t> train_bits, test_bits;
        for (const auto& tr : corpus.train.traits) train_bits.push_back(tr[t]);
        for (const auto& tr : corpus.test.traits) test_bits.push_back(tr[t]);

        TraitDecodeResult::PerTrait pt;
        pt.name = kTraitNames[t];
        const LogicFitResult fit =
            fit_logic_tree(train_rows, train_bits, cfg, mix_seed(seed, 40 + t));
        pt.train_accuracy = fit.accuracy;
        pt.test_accuracy = logic_tree_accuracy(fit.tree, test_rows, test_bits);
        pt.expression = fit.tree.to_string();
        sum += pt.test_accuracy;
        ++counted;
        result.traits.push_back(std::move(pt));
    }
    result.mean_test_accuracy = counted ? sum / counted : 0.0;
    return result;
}

}  // namespace macnet
