#pragma once
// Search-evasion: seekers (design) and hiders (exogenous) follow Bezier
// reference paths with a saturated proportional tracking controller. The cost
// is the summed smooth-minimum distance of each hider to the seekers, minus
// the sensing radius; hiders escaping detection make it large.

#include <memory>

#include "fpr/env/environment.hpp"

namespace fpr {

struct SearchConfig {
  std::size_t n_seek = 6;
  std::size_t n_hide = 10;
  std::size_t control_points = 5;
  double half_width = 1.6;   // arena is [-half_width, half_width] x [-half_height, half_height]
  double half_height = 1.0;
  double radius = 0.25;      // sensing radius (m)
  double smoothing = 100.0;  // b in the smooth minimum
  double horizon = 100.0;    // s
  double dt = 0.1;           // s
  double v_max = 0.2;        // m/s
  double kp = 1.0;           // 1/s
  double prior_tail = SmoothedUniformBox::kDefaultTail;

  std::size_t steps() const;
  void validate() const;
};

// Saturated tracking of Bezier references for `n_agents` agents whose control
// points are laid out [agent][point][coord]. Returns steps x 2*n_agents
// positions; the first row is the first control point of every agent.
std::vector<double> simulate_tracking(std::span<const double> control_points,
                                      std::size_t n_agents, const SearchConfig& config);

class SearchEnvironment final : public Environment {
 public:
  explicit SearchEnvironment(SearchConfig config);

  std::string name() const override { return "search"; }
  std::size_t dim_x() const override;
  std::size_t dim_y() const override;
  const Distribution& prior_x() const override { return *prior_x_; }
  const Distribution& prior_y() const override { return *prior_y_; }
  const SearchConfig& config() const { return config_; }

  ad::Var cost(ad::Tape& tape, ad::Var x, ad::Var y) const override;
  ad::Var costs_vs_failures(ad::Tape& tape, ad::Var x,
                            std::span<const RealVector> ys) const override;
  ad::Var costs_vs_designs(ad::Tape& tape, std::span<const RealVector> xs,
                           ad::Var y) const override;
  Trajectory trace(std::span<const double> x, std::span<const double> y) const override;

  // Positions (steps x 2*n_agents) of agents driven by `control_points`, as a
  // single fused tape operation with a hand-written adjoint.
  ad::Var track(ad::Tape& tape, ad::Var control_points, std::size_t n_agents) const;
  // The same trajectory built from elementary tape operations only.
  ad::Var track_reference(ad::Tape& tape, ad::Var control_points, std::size_t n_agents) const;
  // Cost from hider and seeker position matrices.
  ad::Var score(ad::Var hiders, ad::Var seekers) const;

 private:
  SearchConfig config_;
  std::shared_ptr<const std::vector<double>> weights_;  // steps x control_points
  DistributionPtr prior_x_;
  DistributionPtr prior_y_;
};

}  // namespace fpr
