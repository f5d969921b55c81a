#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "macnet/corpus.hpp"
#include "macnet/network.hpp"

namespace macnet {

struct TrainConfig {
    int batch_size = 64;  // stratified; must be divisible by K
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_decay_factor = 10.0;
    double lr_floor = 1e-8;
    int max_epochs = 60;
    uint64_t seed = 0;

    void validate(int categories) const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double learning_rate = 0.0;
    double train_total = 0.0;
    double train_cross_entropy = 0.0;
    double train_u_mean = 0.0;
    double train_d = 0.0;
    double val_cross_entropy = 0.0;
    double val_accuracy = 0.0;
    double val_u_final = 0.0;  // Eq.-1 style loss of the final layer over the whole split
    double val_d = 0.0;

    std::string to_jsonl() const;
    static EpochRecord from_jsonl(const std::string& line);
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
};

// In-memory corpus split: patches as {3,S,S} blocks plus labels.
struct SplitData {
    int patch_size = 0;
    std::vector<double> pixels;  // contiguous {count,3,S,S}
    std::vector<int> labels;
    std::vector<std::array<uint8_t, kTraitCount>> traits;

    int64_t count() const { return static_cast<int64_t>(labels.size()); }
    std::span<const double> patch(int64_t i) const {
        const size_t len = static_cast<size_t>(3) * patch_size * patch_size;
        return {pixels.data() + static_cast<size_t>(i) * len, len};
    }
};

struct LoadedCorpus {
    std::vector<CategorySpec> categories;
    SplitData train, val, test;

    int category_count() const { return static_cast<int>(categories.size()); }
};

LoadedCorpus load_corpus(const std::filesystem::path& corpus_dir);
// Drops one category and remaps labels to a dense [0,K-2] range.
LoadedCorpus drop_category(const LoadedCorpus& corpus, int held_out);

// Deterministic stratified batches: each batch holds batch_size/K samples of
// every category; per-epoch shuffle from epoch_seed; leftovers dropped.
std::vector<std::vector<int64_t>> stratified_batches(const std::vector<int>& labels, int categories,
                                                     int batch_size, uint64_t epoch_seed);

struct TrainHooks {
    // test seam: replaces the measured validation error (1 - accuracy)
    std::function<double(int epoch, double measured_error)> val_error_override;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    TrainLog log;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    int epochs_run = 0;
};

struct ValMetrics {
    double cross_entropy = 0.0;
    double accuracy = 0.0;
    double u_final = 0.0;
    double d = 0.0;
};

ValMetrics evaluate_split(const MacNetwork& net, const SplitData& split,
                          const CategoryAttributeMatrix& a, int batch_size = 64);

// SGD with momentum over stratified batches. After any epoch whose validation
// error exceeds the previous epoch's, the learning rate is divided by the
// decay factor and training resumes from the best checkpoint so far; stops
// when the rate falls below the floor or max_epochs is reached. The network
// is left at the best-validation checkpoint. Aborts with batch index and seed
// on non-finite loss.
// checkpoint_dir, if given, receives best.ckpt/last.ckpt each epoch; training
// can later be resumed bitwise from last.ckpt via `resume_from`.
TrainResult train(MacNetwork& net, const LoadedCorpus& corpus, const CategoryAttributeMatrix& a,
                  const TrainConfig& cfg, const TrainHooks& hooks = {},
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

void save_train_log(const std::filesystem::path& path, const TrainLog& log);
TrainLog load_train_log(const std::filesystem::path& path);

Tensor make_batch_tensor(const SplitData& split, const std::vector<int64_t>& indices);

}  // namespace macnet
