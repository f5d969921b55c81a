#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macnet/image.hpp"
#include "macnet/optim.hpp"
#include "macnet/percept.hpp"
#include "macnet/tensor.hpp"

namespace macnet {

enum class DistLossMode { pooled, per_attribute };

struct NetworkConfig {
    int patch_size = 32;
    std::vector<int> trunk_channels = {16, 32, 64, 64};  // one pool stage per block
    int categories = 8;   // K
    int attributes = 12;  // M
    double lambda_attr = 1.0;
    double lambda_dist = 0.1;
    BetaParams beta;
    int grid_points = 32;             // midpoint grid for the distribution loss
    double kde_bandwidth = 0.1;       // fixed bandwidth inside the loss graph
    DistLossMode dist_mode = DistLossMode::pooled;
    int classifier_width = 128;
    bool with_aux_heads = true;

    void validate() const;
    DensityGrid grid() const { return DensityGrid::midpoints(grid_points); }
    int pool_stages() const { return static_cast<int>(trunk_channels.size()); }
};

struct ForwardOutputs {
    std::vector<Tensor> per_layer_attrs;  // one {N,M} per pool stage (clamped)
    Tensor final_attrs;                   // {N,M}, combination head output (clamped)
    Tensor logits;                        // {N,K}
    std::vector<double> probabilities;    // detached softmax rows, N*K
    // pre-clamp head outputs, kept for diagnostics (e.g. kink margins in
    // finite-difference checks)
    std::vector<Tensor> per_layer_preacts;
    Tensor final_preact;
};

struct LossBreakdown {
    Tensor total;  // scalar graph node; backward() trains the network
    double cross_entropy = 0.0;
    std::vector<double> u;  // one per pool stage, then the final attribute layer
    double d = 0.0;         // distribution term on the final layer
    double total_value = 0.0;
};

class MacNetwork {
  public:
    // Deterministic in seed. Every parameter draws from its own named stream,
    // so trunk and classifier init do not depend on whether aux heads exist.
    static MacNetwork build(const NetworkConfig& cfg, uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }

    // images: {N,3,S,S}. zero_tap replaces that pool stage's attribute vector
    // with zeros before the combination head (probe used by tests).
    ForwardOutputs forward(const Tensor& images, int zero_tap = -1) const;

    LossBreakdown compute_loss(const ForwardOutputs& out, const std::vector<int>& labels,
                               const CategoryAttributeMatrix& a) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    // Parameters reached by the active loss; excludes aux/combination heads
    // when both attribute lambdas are zero (they receive no gradient).
    std::vector<Parameter*> trainable_parameters();

    Parameter* find_parameter(const std::string& name);

    // Snapshot of values and momentum buffers, keyed by parameter order.
    struct Snapshot {
        std::vector<std::vector<double>> values;
        std::vector<std::vector<double>> momentum;
    };
    Snapshot snapshot() const;
    void restore(const Snapshot& snap);

    int aux_input_size(int stage) const;  // flattened pool-tap length

  private:
    NetworkConfig cfg_;
    std::vector<Parameter> params_;
    // parameter indices
    std::vector<std::array<int, 4>> trunk_;  // per block: conv0.w, conv0.b, conv1.w, conv1.b
    std::vector<std::array<int, 2>> aux_;    // per stage: w, b
    int comb_w_ = -1, comb_b_ = -1;
    int cls1_w_ = -1, cls1_b_ = -1, cls2_w_ = -1, cls2_b_ = -1;

    int add_param(const std::string& name, Shape shape, double init_limit, uint64_t seed);
};

// Sliding-window per-pixel maps. Window predictions land on window centers;
// remaining pixels copy the nearest evaluated center (ties round toward the
// lower index). Returns {C,H,W} with C = M for "attributes", K for
// "materials".
enum class MapTarget { attributes, materials };
std::vector<double> predict_map(const MacNetwork& net, const Image& image, int stride,
                                MapTarget target, int threads = 1);

}  // namespace macnet
