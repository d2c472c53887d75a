#pragma once
// Environment contract: priors over designs x and exogenous parameters y, a
// differentiable simulate-then-score cost J(S(x, y)), and a trace of the
// simulated behaviour.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpr/ad/gradient.hpp"
#include "fpr/distributions.hpp"

namespace fpr {

// Time-indexed snapshots. For robot environments each state is the flattened
// agent positions; for the power grid there is a single snapshot.
struct Trajectory {
  std::vector<double> times;
  std::vector<RealVector> states;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim_x() const = 0;
  virtual std::size_t dim_y() const = 0;
  virtual const Distribution& prior_x() const = 0;
  virtual const Distribution& prior_y() const = 0;

  // J(S(x, y)) recorded on `tape`. Either argument may be a constant.
  virtual ad::Var cost(ad::Tape& tape, ad::Var x, ad::Var y) const = 0;
  virtual Trajectory trace(std::span<const double> x, std::span<const double> y) const = 0;

  // Costs of one (usually variable) design against fixed exogenous vectors,
  // as an n x 1 column. Overrides may share work across the batch.
  virtual ad::Var costs_vs_failures(ad::Tape& tape, ad::Var x,
                                    std::span<const RealVector> ys) const;
  // Costs of fixed designs against one (usually variable) exogenous vector.
  virtual ad::Var costs_vs_designs(ad::Tape& tape, std::span<const RealVector> xs,
                                   ad::Var y) const;

  // Value-only convenience.
  double cost_value(std::span<const double> x, std::span<const double> y) const;
  // Value-only batch over fixed ys.
  std::vector<double> cost_values(std::span<const double> x, std::span<const RealVector> ys) const;

 protected:
  void check_dims(std::size_t nx, std::size_t ny) const;
};

using EnvironmentPtr = std::shared_ptr<const Environment>;

// Environment defined by a cost callback; used for toy problems.
class FunctionEnvironment final : public Environment {
 public:
  using CostFn = std::function<ad::Var(ad::Tape&, ad::Var, ad::Var)>;

  FunctionEnvironment(std::string name, DistributionPtr prior_x, DistributionPtr prior_y,
                      CostFn cost);

  std::string name() const override { return name_; }
  std::size_t dim_x() const override { return prior_x_->dim(); }
  std::size_t dim_y() const override { return prior_y_->dim(); }
  const Distribution& prior_x() const override { return *prior_x_; }
  const Distribution& prior_y() const override { return *prior_y_; }
  ad::Var cost(ad::Tape& tape, ad::Var x, ad::Var y) const override;
  Trajectory trace(std::span<const double> x, std::span<const double> y) const override;

 private:
  std::string name_;
  DistributionPtr prior_x_;
  DistributionPtr prior_y_;
  CostFn cost_;
};

struct BezierPoint {
  double x = 0.0;
  double y = 0.0;
  bool clamped = false;  // t was outside [0, 1]
};

// Bezier curve with control points (x0, y0, x1, y1, ...) at parameter t.
// t outside [0, 1] is clamped and flagged.
BezierPoint bezier_eval(std::span<const double> control_points, double t);

// T x n matrix of Bernstein weights for degree n-1 at s_k = k / (T - 1).
std::vector<double> bernstein_matrix(std::size_t samples, std::size_t n_points);
// Time derivative d/ds of the Bernstein weights at the same parameters.
std::vector<double> bernstein_derivative_matrix(std::size_t samples, std::size_t n_points);

// -(1/b) log sum exp(-b v).
double smooth_min(std::span<const double> values, double b);

}  // namespace fpr
