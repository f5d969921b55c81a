#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace macnet {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the recorded computation graph. Value and gradient buffers are
// dense row-major float64. backward_fn scatters this node's grad into the
// grads of its parents (the op inputs).
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;  // set on leaves (parameters)
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar_value(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }

    std::span<double> values() { return node_->value; }
    std::span<const double> values() const { return node_->value; }
    double scalar() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    // Reverse-mode sweep from a scalar. Rejects non-scalar roots. Gradients
    // accumulate into every reachable node with requires_grad set (directly
    // or through its inputs).
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

  private:
    std::shared_ptr<detail::Node> node_;
};

}  // namespace macnet
