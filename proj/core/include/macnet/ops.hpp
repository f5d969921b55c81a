#pragma once

#include <vector>

#include "macnet/tensor.hpp"

namespace macnet::ops {

// Direct cross-correlation. x: {N,C,H,W}, w: {O,C,KH,KW}, b: {O} (may be
// undefined for no bias). Output spatial size floor((H+2p-K)/s)+1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);

// 2x2 max pooling, stride 2. Requires even H and W. Ties go to the first
// element in scan order.
Tensor maxpool2x2(const Tensor& x);

Tensor relu(const Tensor& x);

// min(max(x,0),1). Backward passes 1 on [0,1] (inclusive at the boundary),
// 0 outside.
Tensor clamp01(const Tensor& x);

// x: {N,F}, w: {F,M}, b: {M} -> {N,M}
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor flatten(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Concatenate {N,Mi} tensors along columns.
Tensor concat_cols(const std::vector<Tensor>& xs);

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Detached row-wise softmax of the current logit values.
std::vector<double> softmax_rows(const Tensor& logits);

// Sum of absolute differences.
Tensor l1_loss(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add(const Tensor& a, const Tensor& b);

// x: {N,M}; rows of per-category means for the categories listed in cats
// (every category must occur in labels). Output {len(cats),M}.
Tensor category_mean(const Tensor& x, const std::vector<int>& labels, const std::vector<int>& cats);

// Column j of a {N,M} tensor as a {N} vector.
Tensor select_col(const Tensor& x, int64_t j);

// Gaussian KDE of the flattened sample tensor evaluated at fixed grid points,
// floored. Differentiable w.r.t. the samples; bandwidth is a fixed input.
Tensor kde_density(const Tensor& samples, const std::vector<double>& grid, double bandwidth,
                   double floor = 1e-6);

// sum_p beta[p] * (ln beta[p] - ln q[p]); differentiable w.r.t. q.
Tensor kl_beta_vs_kde(const Tensor& q, const std::vector<double>& beta_vals);

}  // namespace macnet::ops
