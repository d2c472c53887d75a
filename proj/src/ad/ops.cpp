#include "fpr/ad/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "access.hpp"
#include "fpr/kernels/kernels.hpp"

namespace fpr::ad {

using detail::check_finite;
using detail::Node;
using detail::Op;
using detail::OpAccess;

namespace {

std::string shape_str(const Node& n) {
  return std::to_string(n.rows) + "x" + std::to_string(n.cols);
}

void same_tape(Var a, Var b, Op op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw Error(std::string(detail::op_name(op)) + ": operands from different tapes");
  }
}

Node make_node(Op op, std::size_t rows, std::size_t cols) {
  Node n;
  n.op = op;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  return n;
}

std::uint32_t broadcast_dim(std::uint32_t a, std::uint32_t b, Op op, const Node& na,
                            const Node& nb) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(std::string(detail::op_name(op)) + ": cannot broadcast " + shape_str(na) +
                   " with " + shape_str(nb));
}

double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return a / b;
    case Op::Pow: return std::pow(a, b);
    case Op::Minimum: return b < a ? b : a;
    case Op::Maximum: return b > a ? b : a;
    default: return 0.0;
  }
}

Var binary(Op op, Var a, Var b) {
  same_tape(a, b, op);
  Tape& t = a.tape();
  const Node na = t.node(a.id());
  const Node nb = t.node(b.id());
  Node n = make_node(op, broadcast_dim(na.rows, nb.rows, op, na, nb),
                     broadcast_dim(na.cols, nb.cols, op, na, nb));
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = na.needs_grad || nb.needs_grad;
  if (op == Op::Pow) {
    for (double v : a.value()) {
      if (!(v > 0.0)) throw NonFiniteError("pow", "base must be positive, got " + std::to_string(v));
    }
  }
  auto [v, out] = OpAccess::emit(t, n);
  const double* x = OpAccess::value(t, a.id());
  const double* z = OpAccess::value(t, b.id());
  if (na.rows == nb.rows && na.cols == nb.cols) {
    const std::size_t len = n.size();
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < len; ++i) out[i] = x[i] + z[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < len; ++i) out[i] = x[i] - z[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < len; ++i) out[i] = x[i] * z[i];
        break;
      default:
        for (std::size_t i = 0; i < len; ++i) out[i] = apply_binary(op, x[i], z[i]);
    }
  } else {
    const std::size_t ar = na.rows == n.rows ? na.cols : 0;
    const std::size_t ac = na.cols == n.cols ? 1 : 0;
    const std::size_t br = nb.rows == n.rows ? nb.cols : 0;
    const std::size_t bc = nb.cols == n.cols ? 1 : 0;
    for (std::size_t i = 0; i < n.rows; ++i)
      for (std::size_t j = 0; j < n.cols; ++j)
        out[i * n.cols + j] = apply_binary(op, x[i * ar + j * ac], z[i * br + j * bc]);
  }
  check_finite(op, {out, n.size()});
  return v;
}

Var unary(Op op, Var a, double p0 = 0.0) {
  Tape& t = a.tape();
  const Node na = t.node(a.id());
  Node n = make_node(op, na.rows, na.cols);
  n.a = a.id();
  n.needs_grad = na.needs_grad;
  n.p0 = p0;
  const std::size_t len = n.size();
  if (op == Op::Log || op == Op::Sqrt) {
    for (double v : a.value()) {
      if (op == Op::Log && !(v > 0.0)) {
        throw NonFiniteError("log", "argument must be positive, got " + std::to_string(v));
      }
      if (op == Op::Sqrt && !(v >= 0.0)) {
        throw NonFiniteError("sqrt", "argument must be non-negative, got " + std::to_string(v));
      }
    }
  }
  auto [v, out] = OpAccess::emit(t, n);
  const double* x = OpAccess::value(t, a.id());
  switch (op) {
    case Op::Neg:
      for (std::size_t i = 0; i < len; ++i) out[i] = -x[i];
      break;
    case Op::Scale:
      for (std::size_t i = 0; i < len; ++i) out[i] = p0 * x[i];
      break;
    case Op::AddScalar:
      for (std::size_t i = 0; i < len; ++i) out[i] = x[i] + p0;
      break;
    case Op::PowScalar:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::pow(x[i], p0);
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::exp(x[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::log(x[i]);
      break;
    case Op::Tanh:
      kernels::tanh(x, out, len);
      break;
    case Op::Sigmoid:
      for (std::size_t i = 0; i < len; ++i) out[i] = -std::abs(x[i]);
      kernels::active().exp(out, out, len);
      for (std::size_t i = 0; i < len; ++i) {
        const double e = out[i];
        out[i] = x[i] >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
      }
      break;
    case Op::Sqrt:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::sqrt(x[i]);
      break;
    case Op::Square:
      for (std::size_t i = 0; i < len; ++i) out[i] = x[i] * x[i];
      break;
    case Op::Sin:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::sin(x[i]);
      break;
    case Op::Cos:
      for (std::size_t i = 0; i < len; ++i) out[i] = std::cos(x[i]);
      break;
    case Op::Relu:
      for (std::size_t i = 0; i < len; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Op::Reshape:
      std::copy(x, x + len, out);
      break;
    default:
      break;
  }
  check_finite(op, {out, len});
  return v;
}

Var reduce_to(Op op, Var a, std::size_t rows, std::size_t cols) {
  Tape& t = a.tape();
  Node n = make_node(op, rows, cols);
  n.a = a.id();
  n.needs_grad = t.node(a.id()).needs_grad;
  return OpAccess::emit(t, n).first;
}

double* out_of(Var v) {
  Tape& t = v.tape();
  return const_cast<double*>(OpAccess::value(t, v.id()));
}

// Row-wise log-sum-exp of a rows x cols block.
void logsumexp_block(const double* x, std::size_t rows, std::size_t cols, double* out) {
  const auto& k = kernels::active();
  std::vector<double> w(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    const double m = k.max(xr, cols);
    out[r] = m;
    // A non-finite row maximum is propagated as is and caught by the caller.
    const double shift = std::isfinite(m) ? m : 0.0;
    for (std::size_t j = 0; j < cols; ++j) w[r * cols + j] = xr[j] - shift;
  }
  k.exp(w.data(), w.data(), w.size());
  for (std::size_t r = 0; r < rows; ++r) {
    if (!std::isfinite(out[r])) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += w[r * cols + j];
    out[r] += std::log(s);
  }
}

}  // namespace

Var add(Var a, Var b) { return binary(Op::Add, a, b); }
Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var div(Var a, Var b) { return binary(Op::Div, a, b); }
Var pow(Var base, Var exponent) { return binary(Op::Pow, base, exponent); }
Var minimum(Var a, Var b) { return binary(Op::Minimum, a, b); }
Var maximum(Var a, Var b) { return binary(Op::Maximum, a, b); }

Var pow(Var base, double exponent) { return unary(Op::PowScalar, base, exponent); }
Var neg(Var a) { return unary(Op::Neg, a); }
Var scale(Var a, double factor) { return unary(Op::Scale, a, factor); }
Var add_scalar(Var a, double offset) { return unary(Op::AddScalar, a, offset); }
Var exp(Var a) { return unary(Op::Exp, a); }
Var log(Var a) { return unary(Op::Log, a); }
Var tanh(Var a) { return unary(Op::Tanh, a); }
Var sigmoid(Var a) { return unary(Op::Sigmoid, a); }
Var sqrt(Var a) { return unary(Op::Sqrt, a); }
Var square(Var a) { return unary(Op::Square, a); }
Var sin(Var a) { return unary(Op::Sin, a); }
Var cos(Var a) { return unary(Op::Cos, a); }
Var relu(Var a) { return unary(Op::Relu, a); }

Var sum(Var a) {
  Var v = reduce_to(Op::Sum, a, 1, 1);
  const auto x = a.value();
  double s = 0.0;
  for (double e : x) s += e;
  out_of(v)[0] = s;
  check_finite(Op::Sum, v.value());
  return v;
}

Var sum_rows(Var a) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  Var v = reduce_to(Op::SumRows, a, rows, 1);
  const double* x = a.value().data();
  double* out = out_of(v);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += x[i * cols + j];
    out[i] = s;
  }
  check_finite(Op::SumRows, v.value());
  return v;
}

Var sum_cols(Var a) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  Var v = reduce_to(Op::SumCols, a, 1, cols);
  const double* x = a.value().data();
  double* out = out_of(v);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += x[i * cols + j];
  check_finite(Op::SumCols, v.value());
  return v;
}

Var logsumexp(Var a) {
  if (a.size() == 0) throw ShapeError("logsumexp: empty input");
  Var v = reduce_to(Op::LogSumExp, a, 1, 1);
  logsumexp_block(a.value().data(), 1, a.size(), out_of(v));
  check_finite(Op::LogSumExp, v.value());
  return v;
}

Var logsumexp_rows(Var a) {
  if (a.cols() == 0) throw ShapeError("logsumexp_rows: empty rows");
  Var v = reduce_to(Op::LogSumExpRows, a, a.rows(), 1);
  logsumexp_block(a.value().data(), a.rows(), a.cols(), out_of(v));
  check_finite(Op::LogSumExpRows, v.value());
  return v;
}

namespace {

Var extremum(Op op, Var a) {
  if (a.size() == 0) throw ShapeError(std::string(detail::op_name(op)) + ": empty input");
  const auto x = a.value();
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (op == Op::MinAll ? x[i] < x[best] : x[i] > x[best]) best = i;
  }
  const double value = x[best];
  Var v = reduce_to(op, a, 1, 1);
  detail::OpAccess::node(v.tape(), v.id()).p0 = static_cast<double>(best);
  out_of(v)[0] = value;
  return v;
}

}  // namespace

Var min(Var a) { return extremum(Op::MinAll, a); }
Var max(Var a) { return extremum(Op::MaxAll, a); }

Var dot(Var a, Var b) {
  same_tape(a, b, Op::Dot);
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  Tape& t = a.tape();
  Node n = make_node(Op::Dot, 1, 1);
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = a.needs_grad() || b.needs_grad();
  auto [v, out] = OpAccess::emit(t, n);
  out[0] = kernels::active().dot(OpAccess::value(t, a.id()), OpAccess::value(t, b.id()), a.size());
  check_finite(Op::Dot, v.value());
  return v;
}

Var norm(Var a) {
  Var v = reduce_to(Op::Norm, a, 1, 1);
  const double* x = a.value().data();
  out_of(v)[0] = std::sqrt(kernels::active().dot(x, x, a.size()));
  check_finite(Op::Norm, v.value());
  return v;
}

Var row_norms(Var a) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  Var v = reduce_to(Op::RowNorms, a, rows, 1);
  const double* x = a.value().data();
  double* out = out_of(v);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += x[i * cols + j] * x[i * cols + j];
    out[i] = std::sqrt(s);
  }
  check_finite(Op::RowNorms, v.value());
  return v;
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  same_tape(a, b, Op::MatMul);
  Tape& t = a.tape();
  const Node na = t.node(a.id());
  const Node nb = t.node(b.id());
  const std::size_t m = trans_a ? na.cols : na.rows;
  const std::size_t k = trans_a ? na.rows : na.cols;
  const std::size_t kb = trans_b ? nb.cols : nb.rows;
  const std::size_t cols = trans_b ? nb.rows : nb.cols;
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_str(na) + " * " +
                     shape_str(nb) + ")");
  }
  Node n = make_node(Op::MatMul, m, cols);
  n.a = a.id();
  n.b = b.id();
  n.p0 = trans_a ? 1.0 : 0.0;
  n.p1 = trans_b ? 1.0 : 0.0;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  auto [v, out] = OpAccess::emit(t, n);
  kernels::active().gemm_acc(trans_a, trans_b, m, cols, k, OpAccess::value(t, a.id()),
                             OpAccess::value(t, b.id()), out);
  check_finite(Op::MatMul, v.value());
  return v;
}

Var transpose(Var a) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  Var v = reduce_to(Op::Transpose, a, cols, rows);
  const double* x = a.value().data();
  double* out = out_of(v);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return v;
}

Var sym_eigvals(Var a) {
  const std::size_t dim = a.rows();
  if (a.cols() != dim) throw ShapeError("sym_eigvals: matrix must be square");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
      a.value().data(), dim, dim);
  const Eigen::MatrixXd sym = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw Error("sym_eigvals: eigensolver did not converge");
  const Eigen::MatrixXd& vecs = solver.eigenvectors();  // column-major
  Tape& t = a.tape();
  Node n = make_node(Op::SymEigvals, dim, 1);
  n.a = a.id();
  n.needs_grad = a.needs_grad();
  n.aux = OpAccess::push_aux(t, {vecs.data(), dim * dim});
  n.aux_len = dim * dim;
  auto [v, out] = OpAccess::emit(t, n);
  for (std::size_t i = 0; i < dim; ++i) out[i] = solver.eigenvalues()(static_cast<Eigen::Index>(i));
  check_finite(Op::SymEigvals, v.value());
  return v;
}

Var solve(Var a, Var b) {
  same_tape(a, b, Op::Solve);
  const std::size_t dim = a.rows();
  if (a.cols() != dim || b.rows() != dim) throw ShapeError("solve: incompatible shapes");
  const std::size_t rhs = b.cols();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
      a.value().data(), dim, dim);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
      b.value().data(), dim, rhs);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(A)};
  if (!(lu.rcond() > 1e-14)) {
    throw SingularMatrixError("solve: matrix is singular to working precision");
  }
  const Eigen::MatrixXd z = lu.solve(Eigen::MatrixXd(B));
  Tape& t = a.tape();
  Node n = make_node(Op::Solve, dim, rhs);
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = a.needs_grad() || b.needs_grad();
  auto [v, out] = OpAccess::emit(t, n);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < rhs; ++j)
      out[i * rhs + j] = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  check_finite(Op::Solve, v.value());
  return v;
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.tape().node(a.id())) + " to " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Var v = reduce_to(Op::Reshape, a, rows, cols);
  std::copy(a.value().begin(), a.value().end(), out_of(v));
  return v;
}

Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols) {
  if (offset + rows * cols > a.size()) throw ShapeError("slice: range out of bounds");
  Var v = reduce_to(Op::Slice, a, rows, cols);
  OpAccess::node(v.tape(), v.id()).p0 = static_cast<double>(offset);
  const double* x = a.value().data() + offset;
  std::copy(x, x + rows * cols, out_of(v));
  return v;
}

Var slice(Var a, std::size_t offset, std::size_t len) { return slice(a, offset, len, 1); }

Var row(Var a, std::size_t r) {
  if (r >= a.rows()) throw ShapeError("row: index out of bounds");
  return slice(a, r * a.cols(), 1, a.cols());
}

Var element(Var a, std::size_t i) { return slice(a, i, 1, 1); }

Var gather(Var a, std::span<const std::uint32_t> indices) {
  const std::size_t len = a.size();
  for (std::uint32_t i : indices) {
    if (i >= len) throw ShapeError("gather: index out of bounds");
  }
  Tape& t = a.tape();
  Node n = make_node(Op::Gather, indices.size(), 1);
  n.a = a.id();
  n.needs_grad = a.needs_grad();
  n.idx = OpAccess::push_indices(t, indices);
  n.idx_len = indices.size();
  auto [v, out] = OpAccess::emit(t, n);
  const double* x = OpAccess::value(t, a.id());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = x[indices[i]];
  return v;
}

Var scatter_add(Var a, std::span<const std::uint32_t> indices, std::size_t size) {
  if (indices.size() != a.size()) throw ShapeError("scatter_add: one index per element required");
  for (std::uint32_t i : indices) {
    if (i >= size) throw ShapeError("scatter_add: index out of bounds");
  }
  Tape& t = a.tape();
  Node n = make_node(Op::ScatterAdd, size, 1);
  n.a = a.id();
  n.needs_grad = a.needs_grad();
  n.idx = OpAccess::push_indices(t, indices);
  n.idx_len = indices.size();
  auto [v, out] = OpAccess::emit(t, n);
  const double* x = OpAccess::value(t, a.id());
  for (std::size_t i = 0; i < indices.size(); ++i) out[indices[i]] += x[i];
  return v;
}

namespace {

Var join(Op op, std::span<const Var> parts, std::size_t rows, std::size_t cols) {
  Tape& t = parts.front().tape();
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  Node n = make_node(op, rows, cols);
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw Error("concat: parts from different tapes");
    ids.push_back(p.id());
    n.needs_grad = n.needs_grad || p.needs_grad();
  }
  n.idx = OpAccess::push_indices(t, ids);
  n.idx_len = ids.size();
  auto [v, out] = OpAccess::emit(t, n);
  std::size_t off = 0;
  for (std::uint32_t id : ids) {
    const Node& pn = t.node(id);
    const double* x = OpAccess::value(t, id);
    std::copy(x, x + pn.size(), out + off);
    off += pn.size();
  }
  return v;
}

}  // namespace

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  std::size_t total = 0;
  for (const Var& p : parts) total += p.size();
  return join(Op::Concat, parts, total, 1);
}

Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no parts");
  const std::size_t width = parts.front().size();
  for (const Var& p : parts) {
    if (p.size() != width) throw ShapeError("stack_rows: parts differ in size");
  }
  return join(Op::StackRows, parts, parts.size(), width);
}

Var pairwise_distances(Var p, Var q) {
  same_tape(p, q, Op::PairwiseDistances);
  if (p.rows() != q.rows() || p.cols() % 2 != 0 || q.cols() % 2 != 0) {
    throw ShapeError("pairwise_distances: expected T x 2n and T x 2m inputs");
  }
  Tape& t = p.tape();
  const std::size_t rows = p.rows();
  const std::size_t n_p = p.cols() / 2;
  const std::size_t n_q = q.cols() / 2;
  Node n = make_node(Op::PairwiseDistances, rows, n_p * n_q);
  n.a = p.id();
  n.b = q.id();
  n.needs_grad = p.needs_grad() || q.needs_grad();
  auto [v, out] = OpAccess::emit(t, n);
  kernels::active().pairwise_distances(rows, n_p, n_q, OpAccess::value(t, p.id()),
                                       OpAccess::value(t, q.id()), out);
  check_finite(Op::PairwiseDistances, v.value());
  return v;
}

Var smooth_min(Var v, double sharpness) {
  return scale(logsumexp(scale(v, -sharpness)), -1.0 / sharpness);
}

Var smooth_max(Var v, double sharpness) {
  return scale(logsumexp(scale(v, sharpness)), 1.0 / sharpness);
}

Var smooth_min_rows(Var v, double sharpness) {
  return scale(logsumexp_rows(scale(v, -sharpness)), -1.0 / sharpness);
}

}  // namespace fpr::ad
