#include "macnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "macnet/checkpoint.hpp"
#include "macnet/ops.hpp"
#include "macnet/rng.hpp"
#include "json.hpp"

namespace macnet {

void TrainConfig::validate(int categories) const {
    if (batch_size < 1 || batch_size % categories != 0)
        throw std::invalid_argument("batch size " + std::to_string(batch_size) +
                                    " must be divisible by " + std::to_string(categories) +
                                    " categories for stratified batching");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(lr_floor > 0.0) || lr_floor >= learning_rate)
        throw std::invalid_argument("learning-rate floor must lie below the initial rate");
    if (lr_decay_factor <= 1.0) throw std::invalid_argument("decay factor must exceed 1");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
}

std::string EpochRecord::to_jsonl() const {
    nlohmann::json j = {{"epoch", epoch},
                        {"lr", learning_rate},
                        {"train_total", train_total},
                        {"train_ce", train_cross_entropy},
                        {"train_u_mean", train_u_mean},
                        {"train_d", train_d},
                        {"val_ce", val_cross_entropy},
                        {"val_accuracy", val_accuracy},
                        {"val_u_final", val_u_final},
                        {"val_d", val_d}};
    return j.dump();
}

EpochRecord EpochRecord::from_jsonl(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.learning_rate = j.at("lr").get<double>();
    r.train_total = j.at("train_total").get<double>();
    r.train_cross_entropy = j.at("train_ce").get<double>();
    r.train_u_mean = j.at("train_u_mean").get<double>();
    r.train_d = j.at("train_d").get<double>();
    r.val_cross_entropy = j.at("val_ce").get<double>();
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.val_u_final = j.at("val_u_final").get<double>();
    r.val_d = j.at("val_d").get<double>();
    return r;
}

namespace {

SplitData load_split(const std::filesystem::path& root, const std::vector<ManifestEntry>& entries,
                     int patch_size) {
    SplitData split;
    split.patch_size = patch_size;
    const size_t len = static_cast<size_t>(3) * patch_size * patch_size;
    split.pixels.resize(entries.size() * len);
    split.labels.reserve(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        const Image img = load_png(root / entries[i].file);
        if (img.height != patch_size || img.width != patch_size)
            throw std::runtime_error(entries[i].file + ": patch is " + std::to_string(img.width) +
                                     "x" + std::to_string(img.height) + ", expected " +
                                     std::to_string(patch_size));
        std::copy(img.pixels.begin(), img.pixels.end(), split.pixels.begin() + i * len);
        split.labels.push_back(entries[i].label);
        split.traits.push_back(entries[i].traits);
    }
    return split;
}

}  // namespace

LoadedCorpus load_corpus(const std::filesystem::path& corpus_dir) {
    const CorpusManifest manifest = load_manifest(corpus_dir / "manifest.json");
    if (manifest.train.empty() || manifest.val.empty() || manifest.test.empty())
        throw std::runtime_error("corpus at " + corpus_dir.string() + " has an empty split");
    // patch size from the first file
    const Image probe = load_png(corpus_dir / manifest.train.front().file);
    LoadedCorpus corpus;
    corpus.categories = manifest.categories;
    corpus.train = load_split(corpus_dir, manifest.train, probe.height);
    corpus.val = load_split(corpus_dir, manifest.val, probe.height);
    corpus.test = load_split(corpus_dir, manifest.test, probe.height);
    return corpus;
}

LoadedCorpus drop_category(const LoadedCorpus& corpus, int held_out) {
    const int k = corpus.category_count();
    if (held_out < 0 || held_out >= k) throw std::invalid_argument("held-out category out of range");
    LoadedCorpus out;
    for (int i = 0; i < k; ++i)
        if (i != held_out) out.categories.push_back(corpus.categories[i]);
    auto filter = [&](const SplitData& src) {
        SplitData dst;
        dst.patch_size = src.patch_size;
        const size_t len = static_cast<size_t>(3) * src.patch_size * src.patch_size;
        for (int64_t i = 0; i < src.count(); ++i) {
            if (src.labels[i] == held_out) continue;
            const auto patch = src.patch(i);
            dst.pixels.insert(dst.pixels.end(), patch.begin(), patch.end());
            dst.labels.push_back(src.labels[i] < held_out ? src.labels[i] : src.labels[i] - 1);
            dst.traits.push_back(src.traits[i]);
        }
        (void)len;
        return dst;
    };
    out.train = filter(corpus.train);
    out.val = filter(corpus.val);
    out.test = filter(corpus.test);
    return out;
}

std::vector<std::vector<int64_t>> stratified_batches(const std::vector<int>& labels, int categories,
                                                     int batch_size, uint64_t epoch_seed) {
    if (batch_size % categories != 0)
        throw std::invalid_argument("batch size must be divisible by the category count");
    const int per_cat = batch_size / categories;
    std::vector<std::vector<int64_t>> by_cat(categories);
    for (int64_t i = 0; i < static_cast<int64_t>(labels.size()); ++i) {
        if (labels[i] < 0 || labels[i] >= categories)
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range");
        by_cat[labels[i]].push_back(i);
    }
    int64_t batches = std::numeric_limits<int64_t>::max();
    for (int k = 0; k < categories; ++k) {
        if (static_cast<int>(by_cat[k].size()) < per_cat)
            throw std::invalid_argument("category " + std::to_string(k) + " has only " +
                                        std::to_string(by_cat[k].size()) + " samples, need " +
                                        std::to_string(per_cat) + " per batch");
        batches = std::min(batches, static_cast<int64_t>(by_cat[k].size()) / per_cat);
        auto eng = named_engine(epoch_seed, "shuffle-cat-" + std::to_string(k));
        std::shuffle(by_cat[k].begin(), by_cat[k].end(), eng);
    }
    std::vector<std::vector<int64_t>> result(batches);
    for (int64_t b = 0; b < batches; ++b) {
        result[b].reserve(batch_size);
        for (int k = 0; k < categories; ++k)
            for (int j = 0; j < per_cat; ++j) result[b].push_back(by_cat[k][b * per_cat + j]);
    }
    return result;
}

Tensor make_batch_tensor(const SplitData& split, const std::vector<int64_t>& indices) {
    const int s = split.patch_size;
    Tensor batch = Tensor::zeros({static_cast<int64_t>(indices.size()), 3, s, s});
    auto bv = batch.values();
    const size_t len = static_cast<size_t>(3) * s * s;
    for (size_t i = 0; i < indices.size(); ++i) {
        const auto patch = split.patch(indices[i]);
        std::copy(patch.begin(), patch.end(), bv.begin() + i * len);
    }
    return batch;
}

ValMetrics evaluate_split(const MacNetwork& net, const SplitData& split,
                          const CategoryAttributeMatrix& a, int batch_size) {
    if (split.count() == 0) throw std::invalid_argument("evaluate_split: empty split");
    ValMetrics m;
    const int64_t n = split.count();
    const int mattr = net.config().attributes;
    const bool aux = net.config().with_aux_heads;
    std::vector<double> final_attrs;
    if (aux) final_attrs.reserve(static_cast<size_t>(n) * mattr);
    int64_t correct = 0;
    double ce = 0.0;
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t count = std::min<int64_t>(batch_size, n - start);
        std::vector<int64_t> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        const ForwardOutputs out = net.forward(make_batch_tensor(split, idx));
        const int k = net.config().categories;
        for (int64_t i = 0; i < count; ++i) {
            const double* row = out.probabilities.data() + i * k;
            const int label = split.labels[start + i];
            int argmax = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[argmax]) argmax = j;
            if (argmax == label) ++correct;
            ce -= std::log(std::max(row[label], 1e-300));
        }
        if (aux) {
            const auto fv = out.final_attrs.values();
            final_attrs.insert(final_attrs.end(), fv.begin(), fv.end());
        }
    }
    m.cross_entropy = ce / static_cast<double>(n);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

    if (aux) {
        // Eq.-1 style loss over the whole split (all categories present)
        const int k = net.config().categories;
        std::vector<double> mean(static_cast<size_t>(k) * mattr, 0.0);
        std::vector<int64_t> counts(k, 0);
        for (int64_t i = 0; i < n; ++i) {
            ++counts[split.labels[i]];
            for (int j = 0; j < mattr; ++j)
                mean[static_cast<size_t>(split.labels[i]) * mattr + j] +=
                    final_attrs[static_cast<size_t>(i) * mattr + j];
        }
        double u = 0.0;
        int present = 0;
        for (int kk = 0; kk < k; ++kk) {
            if (counts[kk] == 0) continue;
            ++present;
            for (int j = 0; j < mattr; ++j)
                u += std::abs(a.at(kk, j) -
                              mean[static_cast<size_t>(kk) * mattr + j] / counts[kk]);
        }
        m.u_final = u / std::max(1, present);

        const DensityGrid grid = net.config().grid();
        const auto est = kde_eval(final_attrs, grid, net.config().kde_bandwidth);
        m.d = kl_beta_vs_kde(grid, net.config().beta, est.q);
    }
    return m;
}

namespace {

struct ScheduleState {
    int epoch = 0;  // last completed epoch
    double lr = 0.0;
    int best_epoch = 0;
    double best_val_accuracy = -1.0;
    double prev_val_error = -1.0;  // <0 means "no previous epoch"
};

CheckpointExtra make_extra(const MacNetwork& net, const MacNetwork::Snapshot& best,
                           const ScheduleState& st, uint64_t seed) {
    CheckpointExtra extra;
    const auto params = net.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        extra.tensors.emplace_back("momentum/" + params[i]->name, params[i]->momentum);
        extra.tensors.emplace_back("best/" + params[i]->name, best.values[i]);
        extra.tensors.emplace_back("best_momentum/" + params[i]->name, best.momentum[i]);
    }
    nlohmann::json state = {{"epoch", st.epoch},
                            {"lr", st.lr},
                            {"best_epoch", st.best_epoch},
                            {"best_val_accuracy", st.best_val_accuracy},
                            {"prev_val_error", st.prev_val_error},
                            {"seed", seed}};
    extra.state_json = state.dump();
    return extra;
}

}  // namespace

TrainResult train(MacNetwork& net, const LoadedCorpus& corpus, const CategoryAttributeMatrix& a,
                  const TrainConfig& cfg, const TrainHooks& hooks,
                  const std::optional<std::filesystem::path>& checkpoint_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
    const int k = corpus.category_count();
    cfg.validate(k);
    if (net.config().categories != k)
        throw std::invalid_argument("network expects " + std::to_string(net.config().categories) +
                                    " categories, corpus has " + std::to_string(k));
    if (net.config().with_aux_heads && (a.k != k || a.m != net.config().attributes))
        throw std::invalid_argument("attribute matrix " + std::to_string(a.k) + "x" +
                                    std::to_string(a.m) + " does not match corpus/network");
    if (corpus.train.count() == 0 || corpus.val.count() == 0)
        throw std::invalid_argument("train() needs non-empty train and val splits");

    ScheduleState st;
    st.lr = cfg.learning_rate;
    MacNetwork::Snapshot best = net.snapshot();
    TrainResult result;

    if (resume_from) {
        LoadedCheckpoint ck = load_checkpoint(*resume_from);
        nlohmann::json state = nlohmann::json::parse(ck.state_json);
        st.epoch = state.at("epoch").get<int>();
        st.lr = state.at("lr").get<double>();
        st.best_epoch = state.at("best_epoch").get<int>();
        st.best_val_accuracy = state.at("best_val_accuracy").get<double>();
        st.prev_val_error = state.at("prev_val_error").get<double>();
        auto params = net.parameters();
        for (size_t i = 0; i < params.size(); ++i) {
            const Parameter* loaded = ck.net.find_parameter(params[i]->name);
            std::copy(loaded->value.values().begin(), loaded->value.values().end(),
                      params[i]->value.values().begin());
            params[i]->momentum = ck.extra_tensors.at("momentum/" + params[i]->name);
            best.values[i] = ck.extra_tensors.at("best/" + params[i]->name);
            best.momentum[i] = ck.extra_tensors.at("best_momentum/" + params[i]->name);
        }
        result.best_epoch = st.best_epoch;
        result.best_val_accuracy = st.best_val_accuracy;
    }

    if (checkpoint_dir) std::filesystem::create_directories(*checkpoint_dir);

    auto trainable = net.trainable_parameters();
    OptimizerState opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;

    for (int epoch = st.epoch + 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto batches = stratified_batches(corpus.train.labels, k, cfg.batch_size,
                                                mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        double sum_total = 0, sum_ce = 0, sum_u = 0, sum_d = 0;
        opt.learning_rate = st.lr;
        for (size_t b = 0; b < batches.size(); ++b) {
            std::vector<int> labels;
            labels.reserve(batches[b].size());
            for (int64_t i : batches[b]) labels.push_back(corpus.train.labels[i]);
            const ForwardOutputs out = net.forward(make_batch_tensor(corpus.train, batches[b]));
            const LossBreakdown loss = net.compute_loss(out, labels, a);
            if (!std::isfinite(loss.total_value))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(b) +
                                         " (seed " + std::to_string(cfg.seed) + ")");
            loss.total.backward();
            sgd_step(trainable, opt);
            sum_total += loss.total_value;
            sum_ce += loss.cross_entropy;
            if (!loss.u.empty()) {
                double um = 0;
                for (double u : loss.u) um += u;
                sum_u += um / static_cast<double>(loss.u.size());
            }
            sum_d += loss.d;
        }

        const ValMetrics val = evaluate_split(net, corpus.val, a, cfg.batch_size);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = st.lr;
        const double nb = static_cast<double>(batches.size());
        rec.train_total = sum_total / nb;
        rec.train_cross_entropy = sum_ce / nb;
        rec.train_u_mean = sum_u / nb;
        rec.train_d = sum_d / nb;
        rec.val_cross_entropy = val.cross_entropy;
        rec.val_accuracy = val.accuracy;
        rec.val_u_final = val.u_final;
        rec.val_d = val.d;
        result.log.epochs.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        ++result.epochs_run;

        if (val.accuracy > st.best_val_accuracy) {
            st.best_val_accuracy = val.accuracy;
            st.best_epoch = epoch;
            best = net.snapshot();
        }

        double err = 1.0 - val.accuracy;
        if (hooks.val_error_override) err = hooks.val_error_override(epoch, err);

        bool stop = false;
        if (st.prev_val_error >= 0.0 && err > st.prev_val_error) {
            st.lr /= cfg.lr_decay_factor;
            net.restore(best);
            if (st.lr < cfg.lr_floor) stop = true;
        }
        st.prev_val_error = err;
        st.epoch = epoch;

        if (checkpoint_dir) {
            save_checkpoint(*checkpoint_dir / "last.ckpt", net, make_extra(net, best, st, cfg.seed));
            if (st.best_epoch == epoch) {
                // parameters currently equal the best snapshot
                MacNetwork::Snapshot cur = net.snapshot();
                net.restore(best);
                CheckpointExtra be;
                be.state_json = nlohmann::json({{"epoch", epoch},
                                                {"val_accuracy", st.best_val_accuracy}})
                                    .dump();
                save_checkpoint(*checkpoint_dir / "best.ckpt", net, be);
                net.restore(cur);
            }
        }
        if (stop) break;
    }

    net.restore(best);
    result.best_epoch = st.best_epoch;
    result.best_val_accuracy = st.best_val_accuracy;
    return result;
}

void save_train_log(const std::filesystem::path& path, const TrainLog& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : log.epochs) out << r.to_jsonl() << "\n";
}

TrainLog load_train_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    TrainLog log;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) log.epochs.push_back(EpochRecord::from_jsonl(line));
    return log;
}

}  // namespace macnet
