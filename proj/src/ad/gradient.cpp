#include "fpr/ad/gradient.hpp"

#include <map>

namespace fpr::ad {

GradientResult value_and_grad(Tape& tape, const ScalarFunction& f, std::span<const double> x) {
  tape.clear();
  Var in = tape.variable(x);
  Var out = f(tape, in);
  if (out.size() != 1) throw ShapeError("value_and_grad: function output is not a scalar");
  GradientResult r;
  r.value = out.scalar();
  tape.backward(out);
  const auto g = tape.grad(in);
  r.gradient.assign(g.begin(), g.end());
  return r;
}

namespace {

// Per-thread tape reused between calls; nested calls get a fresh tape.
struct ScratchTape {
  Tape tape;
  bool busy = false;
};

ScratchTape& scratch_tape() {
  thread_local ScratchTape s;
  return s;
}

template <class Fn>
auto with_scratch(Fn&& fn) {
  ScratchTape& scratch = scratch_tape();
  if (scratch.busy) {
    Tape local;
    return fn(local);
  }
  scratch.busy = true;
  struct Release {
    bool& flag;
    ~Release() { flag = false; }
  } release{scratch.busy};
  scratch.tape.clear();
  return fn(scratch.tape);
}

}  // namespace

GradientResult value_and_grad(const ScalarFunction& f, std::span<const double> x) {
  return with_scratch([&](Tape& tape) { return value_and_grad(tape, f, x); });
}

double value_only(const ScalarFunction& f, std::span<const double> x) {
  return with_scratch([&](Tape& tape) {
    Var out = f(tape, tape.constant(x));
    return out.scalar();
  });
}

namespace {

using Unary = Var (*)(Var);
using Binary = Var (*)(Var, Var);

const std::map<std::string, Unary, std::less<>>& unary_ops() {
  static const std::map<std::string, Unary, std::less<>> ops = {
      {"neg", [](Var a) { return neg(a); }},
      {"exp", [](Var a) { return exp(a); }},
      {"log", [](Var a) { return log(a); }},
      {"tanh", [](Var a) { return tanh(a); }},
      {"sigmoid", [](Var a) { return sigmoid(a); }},
      {"sqrt", [](Var a) { return sqrt(a); }},
      {"square", [](Var a) { return square(a); }},
      {"sin", [](Var a) { return sin(a); }},
      {"cos", [](Var a) { return cos(a); }},
      {"hinge", [](Var a) { return relu(a); }},
      {"sum", [](Var a) { return sum(a); }},
      {"logsumexp", [](Var a) { return logsumexp(a); }},
      {"min", [](Var a) { return min(a); }},
      {"max", [](Var a) { return max(a); }},
      {"norm", [](Var a) { return norm(a); }},
      {"transpose", [](Var a) { return transpose(a); }},
      {"sym_eigvals", [](Var a) { return sym_eigvals(a); }},
  };
  return ops;
}

const std::map<std::string, Binary, std::less<>>& binary_ops() {
  static const std::map<std::string, Binary, std::less<>> ops = {
      {"add", [](Var a, Var b) { return add(a, b); }},
      {"sub", [](Var a, Var b) { return sub(a, b); }},
      {"mul", [](Var a, Var b) { return mul(a, b); }},
      {"div", [](Var a, Var b) { return div(a, b); }},
      {"pow", [](Var a, Var b) { return pow(a, b); }},
      {"minimum", [](Var a, Var b) { return minimum(a, b); }},
      {"maximum", [](Var a, Var b) { return maximum(a, b); }},
      {"dot", [](Var a, Var b) { return dot(a, b); }},
      {"matmul", [](Var a, Var b) { return matmul(a, b); }},
      {"solve", [](Var a, Var b) { return solve(a, b); }},
  };
  return ops;
}

}  // namespace

const std::vector<std::string>& elementary_op_set() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, v] : unary_ops()) out.push_back(k);
    for (const auto& [k, v] : binary_ops()) out.push_back(k);
    return out;
  }();
  return names;
}

Var apply(std::string_view name, Var a) {
  const auto& ops = unary_ops();
  auto it = ops.find(name);
  if (it == ops.end()) {
    throw UnsupportedOperationError("unsupported unary operation '" + std::string(name) + "'");
  }
  return it->second(a);
}

Var apply(std::string_view name, Var a, Var b) {
  const auto& ops = binary_ops();
  auto it = ops.find(name);
  if (it == ops.end()) {
    throw UnsupportedOperationError("unsupported binary operation '" + std::string(name) + "'");
  }
  return it->second(a, b);
}

}  // namespace fpr::ad
