#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "tqnet/tensor.hpp"

// Differentiable primitives. Every op takes an optional tape: when `tape` is
// null, or no input requires gradients, nothing is recorded and the result is
// a plain value tensor. Shapes are validated up front and reported through
// DimensionError naming both operands.
namespace tqnet {

using Rng = std::mt19937_64;

// out = a * b
template <typename T>
DiffTensor<T> matmul(const DiffTensor<T>& a, const DiffTensor<T>& b,
                     Tape<T>* tape);

// out = x * weight (+ bias broadcast over rows). `bias` may be null; when
// present it must be 1 x weight.cols().
template <typename T>
DiffTensor<T> linear_apply(const DiffTensor<T>& x, const DiffTensor<T>& weight,
                           const DiffTensor<T>* bias, Tape<T>* tape);

template <typename T>
DiffTensor<T> linear_apply(const DiffTensor<T>& x, const DiffTensor<T>& weight,
                           Tape<T>* tape) {
  return linear_apply(x, weight, static_cast<const DiffTensor<T>*>(nullptr), tape);
}

template <typename T>
DiffTensor<T> add(const DiffTensor<T>& a, const DiffTensor<T>& b,
                  Tape<T>* tape);

template <typename T>
DiffTensor<T> scale(const DiffTensor<T>& x, T factor, Tape<T>* tape);

// Row-wise softmax with max subtraction. NaN inputs propagate to the row.
template <typename T>
DiffTensor<T> softmax_rows(const DiffTensor<T>& x, Tape<T>* tape);

// Exact GeLU: x * Phi(x), Phi the standard normal CDF.
template <typename T>
DiffTensor<T> gelu(const DiffTensor<T>& x, Tape<T>* tape);

// Inverted dropout. Identity in eval mode or when p == 0. Throws
// ParameterError unless 0 <= p < 1.
template <typename T>
DiffTensor<T> dropout(const DiffTensor<T>& x, double p, Mode mode, Rng& rng,
                      Tape<T>* tape);

// For every start index t in `starts`, emits the rows of `bank` sampled at
// columns ((t mod W) + j) mod W for j in [0, length), W = bank.cols().
// Output is (starts.size() * bank.rows()) x length, sample-major.
template <typename T>
DiffTensor<T> periodic_segments(const DiffTensor<T>& bank,
                                std::span<const std::size_t> starts,
                                std::size_t length, Tape<T>* tape);

// Both operands are stacks of `block`-row matrices with equal row counts.
// For every block i: out_i = a_i * b_i^T (block x block).
template <typename T>
DiffTensor<T> block_matmul_nt(const DiffTensor<T>& a, const DiffTensor<T>& b,
                              std::size_t block, Tape<T>* tape);

// p is a stack of block x block matrices, v a stack of block x k matrices.
// For every block i: out_i = p_i * v_i.
template <typename T>
DiffTensor<T> block_matmul(const DiffTensor<T>& p, const DiffTensor<T>& v,
                           std::size_t block, Tape<T>* tape);

template <typename T>
DiffTensor<T> concat_cols(const std::vector<DiffTensor<T>>& parts,
                          Tape<T>* tape);

// out[r, :] = x[r, :] * row_scale[r] + row_shift[r]; scale and shift are
// constants.
template <typename T>
DiffTensor<T> row_affine(const DiffTensor<T>& x, std::span<const T> row_scale,
                         std::span<const T> row_shift, Tape<T>* tape);

template <typename T>
DiffTensor<T> select_rows(const DiffTensor<T>& x,
                          std::span<const std::size_t> rows, Tape<T>* tape);

// Mean squared error over all entries, as a 1x1 tensor. `target` is treated
// as a constant.
template <typename T>
DiffTensor<T> mse_loss(const DiffTensor<T>& pred, const DiffTensor<T>& target,
                       Tape<T>* tape);

// Standard normal CDF used by gelu, exposed for tests and tools.
double normal_cdf(double x);

}  // namespace tqnet
