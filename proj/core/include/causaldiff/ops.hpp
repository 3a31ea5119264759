#pragma once

#include <vector>

#include "causaldiff/tensor.hpp"

namespace causaldiff {

// Composite ops built from the differentiable primitives in tensor.hpp.
// Everything here stays twice-differentiable for free.

// X*W + b with X:[m,in], W:[in,out], b:[out].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Zero-mean unit-variance over the feature axis (per row), then learned
// affine gamma*xhat + beta. eps=1e-5 keeps the constant-row case finite; for a
// constant row the normalized part is exactly 0 and the output is beta.
Tensor feature_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Stable per-row log-sum-exp: [m,n] -> [m].
Tensor logsumexp_rows(const Tensor& x);

// Per-row softmax probabilities.
Tensor softmax_rows(const Tensor& x);

// Mean cross-entropy of integer labels under softmax(logits).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Per-sample variant: [m].
Tensor softmax_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

Tensor mse(const Tensor& a, const Tensor& b);

// Sum of squares per row: [m,n] -> [m].
Tensor sq_norm_rows(const Tensor& x);

// Diagonal-Gaussian log density per row, summed over dims: [m].
Tensor gaussian_log_density_rows(const Tensor& x, const Tensor& mu, const Tensor& logvar);

// Cosine similarity per row: [m]. Throws on a zero-norm row.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

// KL(N(mu, diag(exp(logvar))) || N(0, I)) per row: [m].
Tensor kl_to_std_normal_rows(const Tensor& mu, const Tensor& logvar);

// argmax per row with ties broken toward the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

double l2_norm(const Tensor& t);
double linf_norm(const Tensor& t);

}  // namespace causaldiff
