#pragma once

// Differentiable operations over Tensor. Each op computes its forward value
// eagerly and, when the tape records and some input requires a gradient,
// appends the matching backward closure.

#include <cstddef>
#include <span>
#include <vector>

#include "fsdag/kernels.hpp"
#include "fsdag/tensor.hpp"

namespace fsdag::ops {

// Defaults used throughout the model.
inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kL2NormEps = 1e-12;

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
// x[m x n] + bias[n] broadcast over rows
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor sum(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Concatenate along `axis` (0 or 1 for matrices, 0 for vectors).
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
// Rows [begin, end) of a matrix.
Tensor row_slice(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
// out[r] = table[indices[r]]
Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> indices);
// out[r] = x[r] * factors[r] (constant per-row factors)
Tensor scale_rows(Tape& tape, const Tensor& x, std::span<const double> factors);

// Rank-1 Kronecker product: out[i*q + j] = a[i] * b[j].
Tensor kron(Tape& tape, const Tensor& a, const Tensor& b);
// Row-wise Kronecker product of a[L x p] and b[L x q] -> [L x p*q].
Tensor kron_rows(Tape& tape, const Tensor& a, const Tensor& b);

Tensor softmax(Tape& tape, const Tensor& x);
// Row softmax of an L x L score matrix over j != i; the diagonal is 0.
// Reductions visit columns in `order` so the result is independent of node ids.
Tensor masked_softmax_rows(Tape& tape, const Tensor& scores, std::span<const std::size_t> order);

// Per-row standardization, no affine parameters.
Tensor instance_norm(Tape& tape, const Tensor& x, double eps = kInstanceNormEps);
Tensor l2_normalize(Tape& tape, const Tensor& x, double eps = kL2NormEps);
Tensor l2_normalize_rows(Tape& tape, const Tensor& x, double eps = kL2NormEps);

// out[i*L + j] = a[i] + b[j] + c[i*L + j]
Tensor pair_sum(Tape& tape, const Tensor& a, const Tensor& b, const Tensor& c);
// out[i] = sum_j alpha[i][j] * msg[i*L + j]
Tensor attend(Tape& tape, const Tensor& alpha, const Tensor& msg, std::span<const std::size_t> order);

// 2-D convolution over a [C_in x H x W] input with [C_out x C_in x k x k] weights.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad);

// Smoothed target mass q_k for true class `label` out of `classes`.
double smoothed_target(std::size_t k, std::size_t label, std::size_t classes, double epsilon);

// Mean over nodes of -sum_c q_c log softmax(logits)_c with q = (1-eps) onehot + eps/C.
Tensor smoothed_cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels,
                              double epsilon);

}  // namespace fsdag::ops
