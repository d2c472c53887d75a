#include "fpr/env/environment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fpr {

namespace {

// Per-thread tape reused across value-only evaluations to keep its buffers.
// A nested evaluation (a cost that evaluates another environment) falls back
// to a fresh tape.
struct Scratch {
  ad::Tape tape;
  bool busy = false;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

template <class Fn>
auto with_scratch(Fn&& fn) {
  Scratch& s = scratch();
  if (s.busy) {
    ad::Tape local;
    return fn(local);
  }
  s.busy = true;
  struct Release {
    bool& flag;
    ~Release() { flag = false; }
  } release{s.busy};
  s.tape.clear();
  return fn(s.tape);
}

}  // namespace

void Environment::check_dims(std::size_t nx, std::size_t ny) const {
  if (nx != dim_x() || ny != dim_y()) {
    throw std::invalid_argument(name() + ": expected x of length " + std::to_string(dim_x()) +
                                " and y of length " + std::to_string(dim_y()) + ", got " +
                                std::to_string(nx) + " and " + std::to_string(ny));
  }
}

ad::Var Environment::costs_vs_failures(ad::Tape& tape, ad::Var x,
                                       std::span<const RealVector> ys) const {
  std::vector<ad::Var> parts;
  parts.reserve(ys.size());
  for (const RealVector& y : ys) parts.push_back(cost(tape, x, tape.constant(y)));
  return ad::concat(parts);
}

ad::Var Environment::costs_vs_designs(ad::Tape& tape, std::span<const RealVector> xs,
                                      ad::Var y) const {
  std::vector<ad::Var> parts;
  parts.reserve(xs.size());
  for (const RealVector& x : xs) parts.push_back(cost(tape, tape.constant(x), y));
  return ad::concat(parts);
}

double Environment::cost_value(std::span<const double> x, std::span<const double> y) const {
  check_dims(x.size(), y.size());
  return with_scratch(
      [&](ad::Tape& tape) { return cost(tape, tape.constant(x), tape.constant(y)).scalar(); });
}

std::vector<double> Environment::cost_values(std::span<const double> x,
                                             std::span<const RealVector> ys) const {
  if (ys.empty()) return {};
  check_dims(x.size(), ys.front().size());
  return with_scratch([&](ad::Tape& tape) {
    ad::Var c = costs_vs_failures(tape, tape.constant(x), ys);
    return std::vector<double>(c.value().begin(), c.value().end());
  });
}

FunctionEnvironment::FunctionEnvironment(std::string name, DistributionPtr prior_x,
                                         DistributionPtr prior_y, CostFn cost)
    : name_(std::move(name)),
      prior_x_(std::move(prior_x)),
      prior_y_(std::move(prior_y)),
      cost_(std::move(cost)) {}

ad::Var FunctionEnvironment::cost(ad::Tape& tape, ad::Var x, ad::Var y) const {
  check_dims(x.size(), y.size());
  return cost_(tape, x, y);
}

Trajectory FunctionEnvironment::trace(std::span<const double> x, std::span<const double> y) const {
  Trajectory t;
  t.times = {0.0};
  RealVector state(x.begin(), x.end());
  state.insert(state.end(), y.begin(), y.end());
  t.states.push_back(std::move(state));
  return t;
}

namespace {

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

double bernstein(std::size_t n, std::size_t j, double t) {
  return binomial(n, j) * std::pow(1.0 - t, static_cast<double>(n - j)) *
         std::pow(t, static_cast<double>(j));
}

}  // namespace

BezierPoint bezier_eval(std::span<const double> control_points, double t) {
  if (control_points.size() < 4 || control_points.size() % 2 != 0) {
    throw std::invalid_argument("bezier_eval: need at least two 2-D control points");
  }
  BezierPoint p;
  if (t < 0.0 || t > 1.0 || std::isnan(t)) {
    p.clamped = true;
    t = std::isnan(t) ? 0.0 : std::clamp(t, 0.0, 1.0);
  }
  const std::size_t n = control_points.size() / 2 - 1;
  for (std::size_t j = 0; j <= n; ++j) {
    const double w = bernstein(n, j, t);
    p.x += w * control_points[2 * j];
    p.y += w * control_points[2 * j + 1];
  }
  return p;
}

std::vector<double> bernstein_matrix(std::size_t samples, std::size_t n_points) {
  std::vector<double> w(samples * n_points);
  const std::size_t n = n_points - 1;
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = samples > 1 ? static_cast<double>(k) / static_cast<double>(samples - 1) : 0.0;
    for (std::size_t j = 0; j <= n; ++j) w[k * n_points + j] = bernstein(n, j, t);
  }
  return w;
}

std::vector<double> bernstein_derivative_matrix(std::size_t samples, std::size_t n_points) {
  // d/dt B_{j,n} = n (B_{j-1,n-1} - B_{j,n-1})
  std::vector<double> w(samples * n_points, 0.0);
  const std::size_t n = n_points - 1;
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = samples > 1 ? static_cast<double>(k) / static_cast<double>(samples - 1) : 0.0;
    for (std::size_t j = 0; j <= n; ++j) {
      double d = 0.0;
      if (j >= 1) d += bernstein(n - 1, j - 1, t);
      if (j <= n - 1) d -= bernstein(n - 1, j, t);
      w[k * n_points + j] = static_cast<double>(n) * d;
    }
  }
  return w;
}

double smooth_min(std::span<const double> values, double b) {
  if (values.empty()) throw std::invalid_argument("smooth_min: empty input");
  if (!(b > 0.0)) throw std::invalid_argument("smooth_min: sharpness must be positive");
  const double m = *std::min_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(-b * (v - m));
  return m - std::log(s) / b;
}

}  // namespace fpr
