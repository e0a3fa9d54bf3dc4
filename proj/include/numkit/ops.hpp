#pragma once

#include <cstdint>
#include <vector>

#include "numkit/tensor.hpp"

namespace numkit {

// All kernels validate operand shapes up front and name the offending
// shapes in the error. 1-D operands are treated as a single row where a
// row-wise op makes sense.

/// C = A B for 2-D A [n,k] and B [k,m].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);

/// Elementwise (Hadamard) product, identical shapes.
Tensor mul(const Tensor& a, const Tensor& b);

/// x * c for a plain constant.
Tensor scale(const Tensor& x, double c);

/// Broadcast a length-C row vector over every row of x [R,C].
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor mul_row(const Tensor& x, const Tensor& row);

/// Row-wise softmax over the last axis, max-subtracted for stability.
Tensor softmax_rows(const Tensor& x);

/// Row-wise layer normalization over the last axis: (x - mean) / sqrt(var + eps),
/// population variance, no affine terms (compose with mul_row/add_row for those).
Tensor layernorm_rows(const Tensor& x, double eps = 1e-5);

/// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x);

/// Gather rows of table [V,d] by token id; ids out of range are rejected.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

/// Stack 2-D parts with equal column counts along the row axis.
Tensor concat_rows(const std::vector<Tensor>& parts);

/// Rows [start, start+len) of a 2-D tensor.
Tensor slice_rows(const Tensor& x, int start, int len);

/// 2-D transpose.
Tensor transpose(const Tensor& x);

/// Scalar mean over every element.
Tensor mean_all(const Tensor& x);

/// Copy of x with delta added into rows [start, start+delta.rows); all other
/// rows are carried over bit-identically.
Tensor add_rows(const Tensor& x, int start, const Tensor& delta);

/// Mean cross-entropy of logits [n,V] against targets at rows where mask is
/// nonzero. Rejects an all-zero mask and out-of-range targets.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<std::uint8_t>& mask);

}  // namespace numkit
