#pragma once
// Formation control: double-integrator agents track Bezier paths with a PD
// controller while a neural wind field (exogenous) pushes them around. The
// cost penalizes missing the goal with the formation's centre of mass and
// losing communication connectivity (second Laplacian eigenvalue).

#include <memory>

#include "fpr/env/environment.hpp"

namespace fpr {

struct FormationConfig {
  std::size_t n_agents = 5;
  std::size_t control_points = 3;
  double comm_radius = 1.0;       // m
  double horizon = 30.0;          // s
  double dt = 0.05;               // s
  double kp = 2.0;
  double kd = 3.0;
  double mass = 1.0;              // kg
  std::vector<std::size_t> hidden{26, 41};
  double wind_cap = 0.5;          // N
  double goal_x = 0.5;            // m
  double goal_y = 0.0;
  double goal_weight = 10.0;
  double smoothing = 100.0;       // b in the smooth maximum over time
  double connectivity_floor = 1e-2;
  double half_extent = 1.0;       // design prior box [-h, h]^2 per control point
  double bias_stddev = 0.1;       // prior on wind-network biases
  double prior_tail = SmoothedUniformBox::kDefaultTail;

  std::size_t steps() const;
  std::size_t wind_parameter_count() const;
  std::size_t pair_count() const { return n_agents * (n_agents - 1) / 2; }
  void validate() const;
};

// Wind force on each row of `positions` (n x 2); params in the layout
// [W1 (2 x h1), b1, W2 (h1 x h2), b2, W3 (h2 x 2), b3], weights row-major
// input x output. Each force component is wind_cap / sqrt(2) * tanh(.), so
// the force norm never exceeds wind_cap.
ad::Var wind_force(ad::Tape& tape, ad::Var params, ad::Var positions,
                   const std::vector<std::size_t>& hidden, double wind_cap);

// a_ij = w_ij * sigmoid(20 (R^2 - d_ij^2)), zero diagonal. `weights` is n x n.
ad::Var adjacency(ad::Var positions, ad::Var weights, double radius);

// Second-smallest eigenvalue of L = D - A, built from elementary ops.
ad::Var lambda2(ad::Tape& tape, ad::Var adjacency_matrix);

// lambda2 of the adjacency at every row of `positions` (steps x 2n, agent a
// in columns 2a, 2a+1) as one fused op; steps x 1. Raises
// RepeatedEigenvalueError when a step with a nonzero cotangent has lambda2
// within kEigenGapTolerance of lambda3.
ad::Var lambda2_series(ad::Tape& tape, ad::Var positions, ad::Var weights, double radius);

// Symmetric n x n matrix with sigmoid(strength) per unordered pair (i < j,
// row-major pair order) and zero diagonal.
ad::Var pair_weights(ad::Tape& tape, ad::Var strengths, std::size_t n_agents);

// goal_weight * ||COM_T - goal|| + smooth_max_t 1 / (lambda2(q_t) + floor)
// for stacked positions (steps x 2n) and pair weights (n x n).
ad::Var formation_score(ad::Tape& tape, ad::Var positions, ad::Var weights,
                        const FormationConfig& config);
// Same score from per-step n x 2 positions with elementary ops only.
ad::Var formation_score_reference(ad::Tape& tape, std::span<const ad::Var> positions,
                                  ad::Var weights, const FormationConfig& config);

class FormationEnvironment final : public Environment {
 public:
  explicit FormationEnvironment(FormationConfig config);

  std::string name() const override { return "formation"; }
  std::size_t dim_x() const override;
  std::size_t dim_y() const override;
  const Distribution& prior_x() const override { return *prior_x_; }
  const Distribution& prior_y() const override { return *prior_y_; }
  const FormationConfig& config() const { return config_; }

  ad::Var cost(ad::Tape& tape, ad::Var x, ad::Var y) const override;
  Trajectory trace(std::span<const double> x, std::span<const double> y) const override;

  // Positions of every agent at every step (steps x 2n), fused rollout with
  // a hand-written adjoint.
  ad::Var rollout(ad::Tape& tape, ad::Var x, ad::Var y) const;

  // Elementary-op versions of rollout and cost, for validation.
  std::vector<ad::Var> simulate_reference(ad::Tape& tape, ad::Var x, ad::Var y) const;
  ad::Var cost_reference(ad::Tape& tape, ad::Var x, ad::Var y) const;

 private:
  FormationConfig config_;
  std::vector<double> weights_;       // steps x control_points
  std::vector<double> weights_dot_;   // d/dt of the above (per second)
  DistributionPtr prior_x_;
  DistributionPtr prior_y_;
  std::vector<std::uint32_t> order_;  // x index of each entry of the cp x 2n matrix
};

}  // namespace fpr
