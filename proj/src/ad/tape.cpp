#include "fpr/ad/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "access.hpp"
#include "fpr/ad/ops.hpp"
#include "fpr/kernels/kernels.hpp"

namespace fpr::ad {

using detail::kNoInput;
using detail::Node;
using detail::Op;
using detail::OpAccess;

std::size_t Var::rows() const { return tape_->node(id_).rows; }
std::size_t Var::cols() const { return tape_->node(id_).cols; }
std::size_t Var::size() const { return tape_->node(id_).size(); }
std::span<const double> Var::value() const { return tape_->value_of(id_); }
bool Var::needs_grad() const { return tape_->node(id_).needs_grad; }

double Var::scalar() const {
  if (size() != 1) {
    throw ShapeError("scalar() on a " + std::to_string(rows()) + "x" + std::to_string(cols()) +
                     " value");
  }
  return value()[0];
}

namespace detail {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "variable";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Pow: return "pow";
    case Op::Minimum: return "minimum";
    case Op::Maximum: return "maximum";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::PowScalar: return "pow";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Relu: return "hinge";
    case Op::Sum: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::SumCols: return "sum_cols";
    case Op::LogSumExp: return "logsumexp";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::MinAll: return "min";
    case Op::MaxAll: return "max";
    case Op::Dot: return "dot";
    case Op::Norm: return "norm";
    case Op::RowNorms: return "row_norms";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::SymEigvals: return "sym_eigvals";
    case Op::Solve: return "solve";
    case Op::Reshape: return "reshape";
    case Op::Slice: return "slice";
    case Op::Gather: return "gather";
    case Op::ScatterAdd: return "scatter_add";
    case Op::Concat: return "concat";
    case Op::StackRows: return "stack_rows";
    case Op::PairwiseDistances: return "pairwise_distances";
    case Op::Custom: return "custom";
  }
  return "unknown";
}

std::pair<Var, double*> OpAccess::emit(Tape& t, Node node) {
  node.value = t.values_.size();
  t.values_.resize(t.values_.size() + node.size(), 0.0);
  Var v = t.push(node);
  return {v, t.values_.data() + node.value};
}

}  // namespace detail

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  aux_.clear();
  indices_.clear();
  customs_.clear();
  grads_.clear();
  touched_.clear();
}

Var Tape::push(Node node) {
  nodes_.push_back(node);
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::span<const double> Tape::value_of(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return {values_.data() + n.value, n.size()};
}

Var Tape::variable(std::span<const double> values) {
  return variable(values, values.size(), 1);
}

Var Tape::variable(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (rows * cols != values.size()) throw ShapeError("variable: shape does not match data");
  Node n;
  n.op = Op::Leaf;
  n.needs_grad = true;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  auto [v, out] = OpAccess::emit(*this, n);
  std::copy(values.begin(), values.end(), out);
  detail::check_finite(Op::Leaf, values);
  return v;
}

Var Tape::constant(std::span<const double> values) {
  return constant(values, values.size(), 1);
}

Var Tape::constant(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (rows * cols != values.size()) throw ShapeError("constant: shape does not match data");
  Node n;
  n.op = Op::Constant;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  auto [v, out] = OpAccess::emit(*this, n);
  std::copy(values.begin(), values.end(), out);
  detail::check_finite(Op::Constant, values);
  return v;
}

Var Tape::constant(double value) {
  const double data[1] = {value};
  return constant(data, 1, 1);
}

Var Tape::custom(std::string name, std::span<const Var> inputs, std::vector<double> value,
                 std::size_t rows, std::size_t cols, CustomBackward backward) {
  if (rows * cols != value.size()) throw ShapeError("custom: shape does not match data");
  for (double v : value) {
    if (!std::isfinite(v)) throw NonFiniteError(name, "result " + std::to_string(v));
  }
  CustomOp op;
  op.name = std::move(name);
  op.backward = std::move(backward);
  Node n;
  n.op = Op::Custom;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("custom: input from another tape");
    op.inputs.push_back(in.id());
    n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
  }
  n.aux = customs_.size();
  customs_.push_back(std::move(op));
  auto [v, out] = OpAccess::emit(*this, n);
  std::copy(value.begin(), value.end(), out);
  return v;
}

void Tape::backward(Var out) {
  if (out.size() != 1) throw ShapeError("backward: output is not a scalar");
  const double one[1] = {1.0};
  backward(out, one);
}

void Tape::backward(Var out, std::span<const double> cotangent) {
  if (&out.tape() != this) throw Error("backward: output belongs to another tape");
  const Node& n = nodes_[out.id()];
  if (cotangent.size() != n.size()) throw ShapeError("backward: cotangent size mismatch");
  grads_.assign(values_.size(), 0.0);
  touched_.assign(nodes_.size(), 0);
  std::copy(cotangent.begin(), cotangent.end(), grads_.begin() + static_cast<std::ptrdiff_t>(n.value));
  touched_[out.id()] = 1;
  run_backward(out.id());
}

std::span<const double> Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (grads_.size() < n.value + n.size()) {
    throw Error("grad: no backward sweep has been run");
  }
  return {grads_.data() + n.value, n.size()};
}

void Tape::run_backward(std::uint32_t out_id) {
  for (std::uint32_t id = out_id + 1; id-- > 0;) {
    if (!touched_[id] || !nodes_[id].needs_grad) continue;
    backward_node(id);
  }
}

namespace {

struct Strides {
  std::size_t row;
  std::size_t col;
};

Strides broadcast_strides(const Node& in, const Node& out) {
  return {in.rows == out.rows ? in.cols : 0, in.cols == out.cols ? 1u : 0u};
}

}  // namespace

void Tape::backward_node(std::uint32_t id) {
  const Node n = nodes_[id];
  const double* g = grads_.data() + n.value;
  const double* y = values_.data() + n.value;
  const std::size_t size = n.size();

  auto wants = [&](std::uint32_t in) { return in != kNoInput && nodes_[in].needs_grad; };
  auto grad_of = [&](std::uint32_t in) {
    touched_[in] = 1;
    return grads_.data() + nodes_[in].value;
  };
  auto val = [&](std::uint32_t in) { return values_.data() + nodes_[in].value; };

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;

    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
    case Op::Minimum:
    case Op::Maximum: {
      const Node& na = nodes_[n.a];
      const Node& nb = nodes_[n.b];
      const Strides sa = broadcast_strides(na, n);
      const Strides sb = broadcast_strides(nb, n);
      const double* a = val(n.a);
      const double* b = val(n.b);
      double* ga = wants(n.a) ? grad_of(n.a) : nullptr;
      double* gb = wants(n.b) ? grad_of(n.b) : nullptr;
      for (std::size_t i = 0; i < n.rows; ++i) {
        for (std::size_t j = 0; j < n.cols; ++j) {
          const std::size_t o = i * n.cols + j;
          const std::size_t ia = i * sa.row + j * sa.col;
          const std::size_t ib = i * sb.row + j * sb.col;
          const double go = g[o];
          if (go == 0.0) continue;
          switch (n.op) {
            case Op::Add:
              if (ga) ga[ia] += go;
              if (gb) gb[ib] += go;
              break;
            case Op::Sub:
              if (ga) ga[ia] += go;
              if (gb) gb[ib] -= go;
              break;
            case Op::Mul:
              if (ga) ga[ia] += go * b[ib];
              if (gb) gb[ib] += go * a[ia];
              break;
            case Op::Div:
              if (ga) ga[ia] += go / b[ib];
              if (gb) gb[ib] -= go * a[ia] / (b[ib] * b[ib]);
              break;
            case Op::Pow:
              if (ga) ga[ia] += go * b[ib] * std::pow(a[ia], b[ib] - 1.0);
              if (gb) gb[ib] += go * y[o] * std::log(a[ia]);
              break;
            case Op::Minimum:
              if (a[ia] <= b[ib]) {
                if (ga) ga[ia] += go;
              } else if (gb) {
                gb[ib] += go;
              }
              break;
            case Op::Maximum:
              if (a[ia] >= b[ib]) {
                if (ga) ga[ia] += go;
              } else if (gb) {
                gb[ib] += go;
              }
              break;
            default:
              break;
          }
        }
      }
      return;
    }

    case Op::Neg:
    case Op::Scale:
    case Op::AddScalar:
    case Op::PowScalar:
    case Op::Exp:
    case Op::Log:
    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Sqrt:
    case Op::Square:
    case Op::Sin:
    case Op::Cos:
    case Op::Relu:
    case Op::Reshape: {
      if (!wants(n.a)) return;
      const double* x = val(n.a);
      double* ga = grad_of(n.a);
      for (std::size_t i = 0; i < size; ++i) {
        const double go = g[i];
        switch (n.op) {
          case Op::Neg: ga[i] -= go; break;
          case Op::Scale: ga[i] += go * n.p0; break;
          case Op::AddScalar:
          case Op::Reshape: ga[i] += go; break;
          case Op::PowScalar: ga[i] += go * n.p0 * std::pow(x[i], n.p0 - 1.0); break;
          case Op::Exp: ga[i] += go * y[i]; break;
          case Op::Log: ga[i] += go / x[i]; break;
          case Op::Tanh: ga[i] += go * (1.0 - y[i] * y[i]); break;
          case Op::Sigmoid: ga[i] += go * y[i] * (1.0 - y[i]); break;
          case Op::Sqrt:
            if (go != 0.0) {
              if (y[i] == 0.0) throw NonFiniteError("sqrt", "derivative at 0");
              ga[i] += go * 0.5 / y[i];
            }
            break;
          case Op::Square: ga[i] += go * 2.0 * x[i]; break;
          case Op::Sin: ga[i] += go * std::cos(x[i]); break;
          case Op::Cos: ga[i] -= go * std::sin(x[i]); break;
          case Op::Relu: ga[i] += x[i] > 0.0 ? go : 0.0; break;
          default: break;
        }
      }
      return;
    }

    case Op::Sum: {
      if (!wants(n.a)) return;
      double* ga = grad_of(n.a);
      const std::size_t len = nodes_[n.a].size();
      for (std::size_t i = 0; i < len; ++i) ga[i] += g[0];
      return;
    }
    case Op::SumRows:
    case Op::SumCols: {
      if (!wants(n.a)) return;
      const Node& na = nodes_[n.a];
      double* ga = grad_of(n.a);
      for (std::size_t i = 0; i < na.rows; ++i)
        for (std::size_t j = 0; j < na.cols; ++j)
          ga[i * na.cols + j] += n.op == Op::SumRows ? g[i] : g[j];
      return;
    }
    case Op::LogSumExp:
    case Op::LogSumExpRows: {
      if (!wants(n.a)) return;
      const Node& na = nodes_[n.a];
      const double* x = val(n.a);
      double* ga = grad_of(n.a);
      const std::size_t rows = n.op == Op::LogSumExp ? 1 : na.rows;
      const std::size_t cols = n.op == Op::LogSumExp ? na.size() : na.cols;
      // d/dx_rj = g_r * exp(x_rj - y_r), with one exp call over the block.
      std::vector<double> w(rows * cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) w[r * cols + j] = x[r * cols + j] - y[r];
      kernels::active().exp(w.data(), w.data(), w.size());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += g[r] * w[r * cols + j];
      return;
    }
    case Op::MinAll:
    case Op::MaxAll: {
      if (!wants(n.a)) return;
      grad_of(n.a)[static_cast<std::size_t>(n.p0)] += g[0];
      return;
    }
    case Op::Dot: {
      const std::size_t len = nodes_[n.a].size();
      if (wants(n.a)) kernels::active().axpy(g[0], val(n.b), grad_of(n.a), len);
      if (wants(n.b)) kernels::active().axpy(g[0], val(n.a), grad_of(n.b), len);
      return;
    }
    case Op::Norm: {
      if (!wants(n.a) || y[0] == 0.0) return;
      kernels::active().axpy(g[0] / y[0], val(n.a), grad_of(n.a), nodes_[n.a].size());
      return;
    }
    case Op::RowNorms: {
      if (!wants(n.a)) return;
      const Node& na = nodes_[n.a];
      const double* x = val(n.a);
      double* ga = grad_of(n.a);
      for (std::size_t r = 0; r < na.rows; ++r) {
        if (y[r] == 0.0) continue;
        const double s = g[r] / y[r];
        for (std::size_t j = 0; j < na.cols; ++j) ga[r * na.cols + j] += s * x[r * na.cols + j];
      }
      return;
    }

    case Op::MatMul: {
      const bool ta = n.p0 != 0.0;
      const bool tb = n.p1 != 0.0;
      const Node& na = nodes_[n.a];
      const std::size_t m = n.rows;
      const std::size_t cols = n.cols;
      const std::size_t k = ta ? na.rows : na.cols;
      const double* a = val(n.a);
      const double* b = val(n.b);
      const auto& kern = kernels::active();
      if (wants(n.a)) {
        double* ga = grad_of(n.a);
        if (!ta) {
          kern.gemm_acc(false, !tb, m, k, cols, g, b, ga);
        } else {
          kern.gemm_acc(tb, true, k, m, cols, b, g, ga);
        }
      }
      if (wants(n.b)) {
        double* gb = grad_of(n.b);
        if (!tb) {
          kern.gemm_acc(!ta, false, k, cols, m, a, g, gb);
        } else {
          kern.gemm_acc(true, ta, cols, k, m, g, a, gb);
        }
      }
      return;
    }
    case Op::Transpose: {
      if (!wants(n.a)) return;
      double* ga = grad_of(n.a);
      for (std::size_t i = 0; i < n.rows; ++i)
        for (std::size_t j = 0; j < n.cols; ++j) ga[j * n.rows + i] += g[i * n.cols + j];
      return;
    }
    case Op::SymEigvals: {
      if (!wants(n.a)) return;
      const std::size_t dim = n.rows;
      const double* vecs = OpAccess::aux(*this, n.aux);  // column-major eigenvectors
      double* ga = grad_of(n.a);
      for (std::size_t k = 0; k < dim; ++k) {
        if (g[k] == 0.0) continue;
        const bool close_below = k > 0 && std::abs(y[k] - y[k - 1]) <= kEigenGapTolerance;
        const bool close_above =
            k + 1 < dim && std::abs(y[k + 1] - y[k]) <= kEigenGapTolerance;
        if (close_below || close_above) {
          throw RepeatedEigenvalueError("sym_eigvals: eigenvalue " + std::to_string(k) + " (" +
                                        std::to_string(y[k]) +
                                        ") is repeated; its derivative is undefined");
        }
        const double* v = vecs + k * dim;
        for (std::size_t i = 0; i < dim; ++i)
          for (std::size_t j = 0; j < dim; ++j) ga[i * dim + j] += g[k] * v[i] * v[j];
      }
      return;
    }
    case Op::Solve: {
      const Node& na = nodes_[n.a];
      const std::size_t dim = na.rows;
      const std::size_t rhs = n.cols;
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          A(val(n.a), dim, dim);
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          Z(y, dim, rhs);
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
          G(g, dim, rhs);
      const Eigen::MatrixXd bbar = Eigen::PartialPivLU<Eigen::MatrixXd>(A.transpose()).solve(
          Eigen::MatrixXd(G));
      if (wants(n.b)) {
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gb(
            grad_of(n.b), dim, rhs);
        gb += bbar;
      }
      if (wants(n.a)) {
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> ga(
            grad_of(n.a), dim, dim);
        ga -= bbar * Z.transpose();
      }
      return;
    }

    case Op::Slice: {
      if (!wants(n.a)) return;
      double* ga = grad_of(n.a) + static_cast<std::size_t>(n.p0);
      for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      return;
    }
    case Op::Gather: {
      if (!wants(n.a)) return;
      double* ga = grad_of(n.a);
      const std::uint32_t* idx = OpAccess::indices(*this, n.idx);
      for (std::size_t i = 0; i < size; ++i) ga[idx[i]] += g[i];
      return;
    }
    case Op::ScatterAdd: {
      if (!wants(n.a)) return;
      double* ga = grad_of(n.a);
      const std::uint32_t* idx = OpAccess::indices(*this, n.idx);
      for (std::size_t i = 0; i < n.idx_len; ++i) ga[i] += g[idx[i]];
      return;
    }
    case Op::Concat:
    case Op::StackRows: {
      const std::uint32_t* parts = OpAccess::indices(*this, n.idx);
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.idx_len; ++p) {
        const std::uint32_t in = parts[p];
        const std::size_t len = nodes_[in].size();
        if (wants(in)) {
          double* gi = grad_of(in);
          for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
        }
        off += len;
      }
      return;
    }
    case Op::PairwiseDistances: {
      const Node& np = nodes_[n.a];
      const Node& nq = nodes_[n.b];
      const std::size_t rows = np.rows;
      const std::size_t pn = np.cols / 2;
      const std::size_t qm = nq.cols / 2;
      const double* p = val(n.a);
      const double* q = val(n.b);
      double* gp = wants(n.a) ? grad_of(n.a) : nullptr;
      double* gq = wants(n.b) ? grad_of(n.b) : nullptr;
      for (std::size_t t = 0; t < rows; ++t) {
        const double* pr = p + t * 2 * pn;
        const double* qr = q + t * 2 * qm;
        const double* dr = y + t * pn * qm;
        const double* gr = g + t * pn * qm;
        for (std::size_t i = 0; i < pn; ++i) {
          for (std::size_t j = 0; j < qm; ++j) {
            const double d = dr[i * qm + j];
            const double go = gr[i * qm + j];
            if (d == 0.0 || go == 0.0) continue;
            const double s = go / d;
            const double dx = s * (pr[2 * i] - qr[2 * j]);
            const double dy = s * (pr[2 * i + 1] - qr[2 * j + 1]);
            if (gp) {
              gp[t * 2 * pn + 2 * i] += dx;
              gp[t * 2 * pn + 2 * i + 1] += dy;
            }
            if (gq) {
              gq[t * 2 * qm + 2 * j] -= dx;
              gq[t * 2 * qm + 2 * j + 1] -= dy;
            }
          }
        }
      }
      return;
    }
    case Op::Custom: {
      CustomOp& op = customs_[n.aux];
      CustomGradients cg;
      cg.output_grad = {g, size};
      for (std::uint32_t in : op.inputs) {
        if (wants(in)) {
          cg.input_grads.emplace_back(grad_of(in), nodes_[in].size());
        } else {
          cg.input_grads.emplace_back();
        }
      }
      op.backward(cg);
      return;
    }
  }
}

}  // namespace fpr::ad
