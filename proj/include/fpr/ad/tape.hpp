#pragma once
// Reverse-mode differentiation over dense row-major tensors.
//
// A Tape records every operation applied to its Vars. Values live in one
// arena owned by the tape, so a Var is just a (tape, node) handle and is
// cheap to copy. Tapes are independent of each other; there is no global
// state, so separate threads may each drive their own tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fpr::ad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation produced (or would consume) a non-finite number.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string op, const std::string& detail)
      : Error("non-finite value in '" + op + "': " + detail), op_(std::move(op)) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class UnsupportedOperationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Eigenvalue derivative requested for an eigenvalue that is not simple.
class RepeatedEigenvalueError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }

  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;
  std::span<const double> value() const;
  double scalar() const;
  double operator[](std::size_t i) const { return value()[i]; }
  bool needs_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

namespace detail {

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  // elementwise binary (broadcasting)
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Minimum,
  Maximum,
  // elementwise unary
  Neg,
  Scale,
  AddScalar,
  PowScalar,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Sqrt,
  Square,
  Sin,
  Cos,
  Relu,
  // reductions
  Sum,
  SumRows,
  SumCols,
  LogSumExp,
  LogSumExpRows,
  MinAll,
  MaxAll,
  Dot,
  Norm,
  RowNorms,
  // linear algebra
  MatMul,
  Transpose,
  SymEigvals,
  Solve,
  // structure
  Reshape,
  Slice,
  Gather,
  ScatterAdd,
  Concat,
  StackRows,
  PairwiseDistances,
  Custom,
};

constexpr std::uint32_t kNoInput = 0xffffffffu;

struct Node {
  Op op = Op::Constant;
  bool needs_grad = false;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::size_t value = 0;  // offset into the value arena
  std::uint32_t a = kNoInput;
  std::uint32_t b = kNoInput;
  double p0 = 0.0;
  double p1 = 0.0;
  std::size_t aux = 0;  // offset into the auxiliary double arena
  std::size_t aux_len = 0;
  std::size_t idx = 0;  // offset into the index arena
  std::size_t idx_len = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct OpAccess;

}  // namespace detail

// Gradient storage handed to a custom op's backward function. input_grads[i]
// is empty when input i does not require a gradient.
struct CustomGradients {
  std::span<const double> output_grad;
  std::vector<std::span<double>> input_grads;
};

using CustomBackward = std::function<void(CustomGradients&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Drops all nodes, keeping allocated capacity.
  void clear();

  // Leaf requiring a gradient. Default shape is a column vector.
  Var variable(std::span<const double> values);
  Var variable(std::span<const double> values, std::size_t rows, std::size_t cols);

  Var constant(std::span<const double> values);
  Var constant(std::span<const double> values, std::size_t rows, std::size_t cols);
  Var constant(double value);

  // Records an operation whose value was computed outside the tape.
  // `backward` receives the output cotangent and must accumulate into the
  // input gradients it is given.
  Var custom(std::string name, std::span<const Var> inputs, std::vector<double> value,
             std::size_t rows, std::size_t cols, CustomBackward backward);

  // Reverse sweep seeded with d(out)/d(out) = 1; `out` must be 1 x 1.
  void backward(Var out);
  // Reverse sweep seeded with an arbitrary cotangent of out's shape.
  void backward(Var out, std::span<const double> cotangent);

  // Gradient accumulated into v by the last backward sweep (zeros if v was
  // not reached).
  std::span<const double> grad(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Shape and value access used by Var.
  const detail::Node& node(std::uint32_t id) const { return nodes_[id]; }
  std::span<const double> value_of(std::uint32_t id) const;

 private:
  friend struct detail::OpAccess;

  struct CustomOp {
    std::string name;
    std::vector<std::uint32_t> inputs;
    CustomBackward backward;
  };

  Var push(detail::Node node);
  void run_backward(std::uint32_t out_id);
  void backward_node(std::uint32_t id);

  std::vector<detail::Node> nodes_;
  std::vector<double> values_;
  std::vector<double> aux_;
  std::vector<std::uint32_t> indices_;
  std::vector<CustomOp> customs_;
  std::vector<double> grads_;
  std::vector<char> touched_;
};

}  // namespace fpr::ad
