#pragma once
// Differentiable operations on tape Vars.
//
// Elementwise binary operations broadcast any dimension of size 1 against the
// other operand. Min/max style operations send the derivative to the first
// attaining argument on ties. Every operation checks its output for
// non-finite values and throws NonFiniteError naming itself.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fpr/ad/tape.hpp"

namespace fpr::ad {

// Elementwise arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var pow(Var base, Var exponent);  // base must be positive
Var pow(Var base, double exponent);
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sin(Var a);
Var cos(Var a);
// Hinge [a]_+ = max(a, 0).
Var relu(Var a);

// Reductions.
Var sum(Var a);
Var sum_rows(Var a);  // m x n -> m x 1
Var sum_cols(Var a);  // m x n -> 1 x n
Var logsumexp(Var a);
Var logsumexp_rows(Var a);  // m x n -> m x 1
Var min(Var a);
Var max(Var a);
Var dot(Var a, Var b);
Var norm(Var a);       // Euclidean; subgradient 0 at the origin
Var row_norms(Var a);  // m x n -> m x 1

// Linear algebra.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var transpose(Var a);
// Ascending eigenvalues of the symmetric part of a square matrix, n x 1.
// The derivative of eigenvalue k is v_k v_k^T and requires eigenvalue k to be
// separated from its neighbours by more than kEigenGapTolerance.
Var sym_eigvals(Var a);
inline constexpr double kEigenGapTolerance = 1e-9;
// Solution Z of A Z = B for square A.
Var solve(Var a, Var b);

// Structure.
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Contiguous flat range [offset, offset + rows*cols) reshaped to rows x cols.
Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols);
Var slice(Var a, std::size_t offset, std::size_t len);
Var row(Var a, std::size_t r);
Var element(Var a, std::size_t i);
Var gather(Var a, std::span<const std::uint32_t> indices);
// out (size x 1), out[indices[i]] += a[i]
Var scatter_add(Var a, std::span<const std::uint32_t> indices, std::size_t size);
Var concat(std::span<const Var> parts);
// Stacks equally sized parts as the rows of a matrix.
Var stack_rows(std::span<const Var> parts);
// p: T x 2n, q: T x 2m -> T x (n*m) Euclidean distances between the 2-D
// points of each row; subgradient 0 at coincident points.
Var pairwise_distances(Var p, Var q);

// Smooth minimum -(1/b) logsumexp(-b v) and smooth maximum (1/b) logsumexp(b v).
Var smooth_min(Var v, double sharpness);
Var smooth_max(Var v, double sharpness);
Var smooth_min_rows(Var v, double sharpness);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double b) { return add_scalar(a, b); }
inline Var operator+(double a, Var b) { return add_scalar(b, a); }
inline Var operator-(Var a, double b) { return add_scalar(a, -b); }
inline Var operator-(double a, Var b) { return add_scalar(neg(b), a); }
inline Var operator*(Var a, double b) { return scale(a, b); }
inline Var operator*(double a, Var b) { return scale(b, a); }
inline Var operator/(Var a, double b) { return scale(a, 1.0 / b); }
inline Var operator/(double a, Var b) { return scale(pow(b, -1.0), a); }

}  // namespace fpr::ad
