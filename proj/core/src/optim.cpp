#include "macnet/optim.hpp"

#include <stdexcept>

namespace macnet {

void OptimizerState::validate() const {
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
}

void sgd_step(const std::vector<Parameter*>& params, const OptimizerState& opt) {
    opt.validate();
    for (Parameter* p : params)
        if (!p->value.has_grad())
            throw std::runtime_error("sgd_step: parameter '" + p->name + "' has no gradient");
    for (Parameter* p : params) {
        auto v = p->value.values();
        auto g = p->value.grad();
        for (size_t i = 0; i < v.size(); ++i) {
            double b = opt.momentum * p->momentum[i] + g[i] + opt.weight_decay * v[i];
            p->momentum[i] = b;
            v[i] -= opt.learning_rate * b;
        }
        p->value.zero_grad();
    }
}

}  // namespace macnet
