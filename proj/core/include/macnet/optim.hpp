#pragma once

#include <string>
#include <vector>

#include "macnet/tensor.hpp"

namespace macnet {

// A named trainable tensor plus its SGD momentum buffer.
struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> momentum;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), momentum(value.size(), 0.0) {}
};

struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;

    void validate() const;
};

// buffer <- momentum*buffer + grad + weight_decay*value; value -= lr*buffer.
// Clears gradients afterwards. Rejects parameters with missing gradients.
void sgd_step(const std::vector<Parameter*>& params, const OptimizerState& opt);

}  // namespace macnet
