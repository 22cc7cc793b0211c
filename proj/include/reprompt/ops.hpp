#pragma once

#include "reprompt/tensor.hpp"

namespace reprompt::ops {

/// Exp-normalize with max subtraction. Rank 1: softmax of the whole vector.
/// Rank 2: softmax along each row.
Tensor softmax(const Tensor& v);

/// Scales a vector to unit Euclidean norm. Throws on norm <= 1e-12.
Tensor l2_normalize(const Tensor& v);
double norm(const Tensor& v);

/// Per-token standardization followed by the affine (gain, bias). Tokens are
/// columns for rank-2 input; a rank-1 input is a single token.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// 2-D convolution, zero padding, stride 1. x is C_in x H x W, kernel is
/// C_out x C_in x kh x kw; output is C_out x H' x W' with
/// H' = H + 2*padding - kh + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding);

/// a (m x k) times b (k x n or k); vector b yields a length-m vector.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

double dot(const double* a, const double* b, std::size_t n);

}  // namespace reprompt::ops
