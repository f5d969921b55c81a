#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macnet/corpus.hpp"
#include "macnet/network.hpp"
#include "macnet/percept.hpp"
#include "macnet/train.hpp"

namespace macnet {

// Boolean expression tree over binarized attributes: AND/OR take two
// children, NOT one, leaves name an attribute index with optional negation.
class LogicTree {
  public:
    enum class Kind : uint8_t { leaf, not_op, and_op, or_op };
    struct Node {
        Kind kind = Kind::leaf;
        int left = -1;
        int right = -1;
        int attr = 0;
        bool negated = false;
    };

    static LogicTree single_leaf(int attr, bool negated = false);

    bool eval(std::span<const uint8_t> bits) const;
    int leaf_count() const;
    void validate(int attribute_count) const;
    std::string to_string() const;

    const std::vector<Node>& nodes() const { return nodes_; }
    Node& node_mut(int idx) { return nodes_[idx]; }
    int root() const { return root_; }

    // construction helpers (also used by the annealer)
    int add_leaf(int attr, bool negated);
    int add_not(int child);
    int add_op(Kind kind, int left, int right);
    void set_root(int idx) { root_ = idx; }

  private:
    std::vector<Node> nodes_;
    int root_ = -1;
};

struct AnnealConfig {
    int proposals = 20000;
    double t0 = 1.0;
    double cooling = 0.97;
    int max_leaves = 8;
};

struct LogicFitResult {
    LogicTree tree;
    double accuracy = 0.0;  // on the fitting samples
};

// Simulated annealing over {replace-leaf, negate-leaf, swap-operator, grow,
// prune}; score is the misclassification rate; geometric cooling from t0.
// Returns the best tree visited. Rejects constant trait columns.
LogicFitResult fit_logic_tree(const std::vector<std::vector<uint8_t>>& attr_rows,
                              const std::vector<uint8_t>& trait, const AnnealConfig& cfg,
                              uint64_t seed);

double logic_tree_accuracy(const LogicTree& tree, const std::vector<std::vector<uint8_t>>& attr_rows,
                           const std::vector<uint8_t>& trait);

// Mean absolute difference of 4-adjacent map values within regions and
// across region boundaries. mask holds a region id per pixel and must
// contain at least two regions.
struct SpatialConsistency {
    double within_tv = 0.0;
    double cross_tv = 0.0;
};
SpatialConsistency spatial_consistency(const std::vector<double>& map, int height, int width,
                                       const std::vector<int>& region_mask);

// Mean silhouette with Euclidean distance. Samples in single-member clusters
// and samples with a == b contribute 0.
double cluster_separation(const std::vector<std::vector<double>>& vectors,
                          const std::vector<int>& labels);

// KDE (Silverman bandwidth) of the values against the Beta prior.
double distribution_match(const std::vector<double>& values, const BetaParams& beta,
                          const DensityGrid& grid);

// Frozen-network features for a pile of patches.
struct PatchFeatures {
    int attr_dim = 0;
    int prob_dim = 0;
    std::vector<double> attrs;  // n x attr_dim
    std::vector<double> probs;  // n x prob_dim
};
PatchFeatures extract_features(const MacNetwork& net, const SplitData& split);

// Linear SVM trained by subgradient descent on the hinge loss (Pegasos-style
// steps, lambda = 1/(C n)). Deterministic given seed.
struct LinearSvm {
    std::vector<double> w;  // last entry is the bias weight (constant-1 feature)

    static LinearSvm fit(const std::vector<std::vector<double>>& positives,
                         const std::vector<std::vector<double>>& negatives, double c, int epochs,
                         uint64_t seed);
    double decision(std::span<const double> x) const;
};

enum class FeatureSet { attributes, materials, combined };
const char* feature_set_name(FeatureSet f);

struct NShotConfig {
    std::vector<int> shots = {1, 2, 5, 10, 20};
    int repeats = 5;
    int patches_per_image = 16;
    int pool_images = 20;  // held-out images available per repeat; max shot count
    int test_images = 20;
    int canvas_size = 128;
    double svm_c = 1.0;
    int svm_epochs = 200;
    uint64_t seed = 0;
};

struct NShotCell {
    int shots = 0;
    FeatureSet features = FeatureSet::attributes;
    double mean_recall = 0.0;
    double std_recall = 0.0;
};

struct NShotReport {
    int held_out = -1;
    std::string held_out_name;
    int repeats = 0;
    std::vector<NShotCell> cells;

    double recall(int shots, FeatureSet f) const;
};

// net must have been trained with the held-out category absent (and the
// matching row dropped from A). seen_corpus provides the SVM negatives,
// class-balanced across the remaining categories; held-out positives come
// from fresh synthetic canvases. Recall is the fraction of held-out test
// patches classified as the held-out category.
NShotReport nshot_eval(const MacNetwork& net, const std::vector<CategorySpec>& all_categories,
                       int held_out, const LoadedCorpus& seen_corpus, const NShotConfig& cfg);

void save_nshot_json(const std::filesystem::path& path, const NShotReport& report);
void save_nshot_csv(const std::filesystem::path& path, const NShotReport& report);

struct TraitDecodeResult {
    struct PerTrait {
        std::string name;
        double train_accuracy = 0.0;
        double test_accuracy = 0.0;
        std::string expression;
    };
    std::vector<PerTrait> traits;
    double mean_test_accuracy = 0.0;
};

// Binarizes final-layer attributes at 0.5, fits one logic tree per trait on
// the train split and scores it on held-out patches. Constant traits are
// skipped with accuracy reported as NaN-free 0 entries removed from the mean.
TraitDecodeResult decode_traits(const MacNetwork& net, const LoadedCorpus& corpus,
                                const AnnealConfig& cfg, uint64_t seed);

}  // namespace macnet
