#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpr/ad/ops.hpp"
#include "fpr/ad/tape.hpp"

namespace fpr {

using RealVector = std::vector<double>;

struct GradientResult {
  double value = 0.0;
  RealVector gradient;
};

namespace ad {

// A scalar function built on a tape from a single variable input.
using ScalarFunction = std::function<Var(Tape&, Var)>;

GradientResult value_and_grad(const ScalarFunction& f, std::span<const double> x);
// Same as value_and_grad but reuses `tape` (cleared first) to avoid reallocations.
GradientResult value_and_grad(Tape& tape, const ScalarFunction& f, std::span<const double> x);
double value_only(const ScalarFunction& f, std::span<const double> x);

// Names of the elementwise and reduction operations reachable by name.
const std::vector<std::string>& elementary_op_set();

// Applies a named unary operation or reduction. Unknown names raise
// UnsupportedOperationError before anything is recorded.
Var apply(std::string_view name, Var a);
// Applies a named binary operation.
Var apply(std::string_view name, Var a, Var b);

}  // namespace ad
}  // namespace fpr
