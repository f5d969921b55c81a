#include "macnet/tensor.hpp"

#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace macnet {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(static_cast<size_t>(numel(shape)), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.node()->value) x = v;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar_value(double v) { return from_data({1}, {v}); }

double Tensor::scalar() const {
    if (size() != 1)
        throw std::invalid_argument("scalar() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

namespace {

using detail::Node;

// A node needs a gradient if it is a requires_grad leaf or any of its inputs
// does. Memoized over the DAG.
bool needs_grad(Node* n, std::unordered_map<Node*, bool>& memo) {
    auto it = memo.find(n);
    if (it != memo.end()) return it->second;
    memo[n] = false;  // break cycles defensively; graphs are acyclic by construction
    bool need = n->requires_grad;
    for (auto& p : n->parents)
        if (needs_grad(p.get(), memo)) need = true;
    memo[n] = need;
    return need;
}

void topo_sort(const std::shared_ptr<Node>& root, std::vector<Node*>& order) {
    // iterative post-order DFS
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
}

}  // namespace

void Tensor::backward() const {
    if (!node_) throw std::invalid_argument("backward() on undefined tensor");
    if (size() != 1)
        throw std::invalid_argument("backward() requires a scalar loss, got shape " + shape_str(shape()));

    std::unordered_map<Node*, bool> memo;
    std::vector<Node*> order;
    topo_sort(node_, order);

    node_->ensure_grad();
    node_->grad[0] += 1.0;

    // order is post-order (inputs before consumers); walk consumers first
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn || n->grad.empty()) continue;
        if (!needs_grad(n, memo)) continue;
        for (auto& p : n->parents)
            if (needs_grad(p.get(), memo)) p->ensure_grad();
        n->backward_fn(*n);
    }
}

}  // namespace macnet
