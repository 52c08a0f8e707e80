#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "evssl/numerics/tape.hpp"

// Differentiable primitives. Every op validates shapes (ShapeError naming both
// operands) and rejects non-finite results (NumericError). Matrices are rank-2
// [rows x cols]; a rank-1 operand acts as a single row.
namespace evssl::num {

// Products.
Var matmul(const Var& a, const Var& b);     // [n x k] * [k x m]
Var matmul_nt(const Var& a, const Var& b);  // [n x k] * [m x k]^T
Var affine(const Var& x, const Var& w, const Var& b);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_row(const Var& a, const Var& row);
Var broadcast_rows(const Var& row, std::size_t n);
Var gelu(const Var& a);

// Normalizations.
Var softmax(const Var& a, int axis);
/// Row softmax restricted to entries with allowed[r * cols + c] != 0. Each row
/// needs at least one allowed entry; excluded entries get probability 0.
Var masked_softmax(const Var& a, const std::vector<std::uint8_t>& allowed);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Structural.
Var mean_rows(const Var& x);
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
/// Contiguous run of the flattened input reinterpreted with `shape`.
Var segment(const Var& flat, std::size_t offset, const Shape& shape);
Var detach(const Var& x);

// Reductions to a scalar of shape [1].
Var sum(const Var& x);
Var squared_error(const Var& a, const Var& b);
Var mse(const Var& a, const Var& b);
/// mean_r (1 - <a_r, b_r> / (max(|a_r|, eps) * max(|b_r|, eps)))
Var cosine_distance_rows(const Var& a, const Var& b, double eps = 1e-8);
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

double gelu_value(double x);

}  // namespace evssl::num
