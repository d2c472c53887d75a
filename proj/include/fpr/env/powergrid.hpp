#pragma once
// Power dispatch under line outages. Design x = (P_g for every generator,
// |V|_g for every generator, P_l and Q_l for every load), all per-unit.
// Exogenous y holds one state per line; line l carries sigmoid(y_l) times
// its nominal admittance. The cost is generation cost plus L-weighted hinge
// penalties on P_g, Q_g, P_l, Q_l and every bus voltage magnitude.

#include <memory>

#include "fpr/env/environment.hpp"
#include "fpr/env/power_flow.hpp"

namespace fpr {

struct PowerGridConfig {
  double penalty = 100.0;              // L
  double line_state_mean = 1.6449;     // P(y < 0) = 0.05 under N(mean, 1)
  double line_state_stddev = 1.0;
  double nonconvergence_cost = 1e4;
  PowerFlowOptions flow{};
  double prior_tail = SmoothedUniformBox::kDefaultTail;

  void validate() const;
};

// sigmoid(y) * Y_nom as a (G, B) pair.
struct ComplexAdmittance {
  double g = 0.0, b = 0.0;
};
ComplexAdmittance line_admittance(double state, const Line& line);

class PowerGridEnvironment final : public Environment {
 public:
  PowerGridEnvironment(GridCase grid, PowerGridConfig config = {});

  std::string name() const override { return "powergrid"; }
  std::size_t dim_x() const override;
  std::size_t dim_y() const override { return grid_.lines.size(); }
  const Distribution& prior_x() const override { return *prior_x_; }
  const Distribution& prior_y() const override { return *prior_y_; }
  const GridCase& grid() const { return grid_; }
  const PowerGridConfig& config() const { return config_; }

  ad::Var cost(ad::Tape& tape, ad::Var x, ad::Var y) const override;
  // One state: (|V|, theta, P, Q) per bus at the solved operating point.
  Trajectory trace(std::span<const double> x, std::span<const double> y) const override;

  // Newton solve for a given design and line states.
  PowerFlowSolution solve(std::span<const double> x, std::span<const double> y) const;

  // Per-bus targets implied by a design: net P / Q injections and |V|
  // setpoints at PV / slack buses.
  void bus_targets(std::span<const double> x, std::span<double> p_spec, std::span<double> q_spec,
                   std::span<double> v_set) const;

  // Cost from an already-solved state o = (|V|, theta, P, Q) (4 n_bus x 1).
  ad::Var cost_from_state(ad::Tape& tape, ad::Var x, ad::Var state) const;

  // Power-flow state as a differentiable function of (x, y): the implicit
  // node. Its backward pass solves J^T lambda = dJ/du once.
  ad::Var flow_state(ad::Tape& tape, ad::Var x, ad::Var y, const PowerFlowSolution& sol) const;

  // Residual F and state outputs g = (|V|, theta, P, Q) as elementary ops of
  // z = (u, x, y). Used by the adjoint and as an independent residual check.
  ad::Var flow_graph(ad::Tape& tape, ad::Var z) const;

  // Design-vector offsets.
  std::size_t pg_offset() const { return 0; }
  std::size_t vg_offset() const { return grid_.generators.size(); }
  std::size_t pl_offset() const { return 2 * grid_.generators.size(); }
  std::size_t ql_offset() const { return 2 * grid_.generators.size() + grid_.loads.size(); }

 private:
  GridCase grid_;
  PowerGridConfig config_;
  FlowLayout layout_;
  DistributionPtr prior_x_;
  DistributionPtr prior_y_;
};

}  // namespace fpr
