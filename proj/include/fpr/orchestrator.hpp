#pragma once
// Alternating failure prediction and repair. Designs are sampled from
//   log p_x0(x) - (lambda / n_y) sum_i J(x, y_i)
// and failures from
//   log p_y0(y) + lambda min_j J(x_j, y),
// with lambda following a tempering schedule and the last n_q rounds
// replaced by gradient ascent (quench).

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpr/env/environment.hpp"
#include "fpr/samplers.hpp"

namespace fpr {

// A chain whose log-density is still -inf after a full round.
class StuckChainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PredictRepairConfig {
  std::size_t n_x = 10;
  std::size_t n_y = 10;
  int rounds = 50;        // K
  int substeps = 10;      // M
  Stepsize tau_x{1e-2};
  Stepsize tau_y{1e-2};
  int quench_rounds = 0;  // n_q
  double tempering_rate = 5.0;
  // Overrides the schedule in every round when set (e.g. 0 to sample the priors).
  std::optional<double> fixed_lambda;
  KernelKind kernel = KernelKind::Mala;
  std::uint64_t seed = 0;
  // Failure update couples to the designs from the previous round instead of
  // the ones just updated.
  bool stale_designs = false;
  int workers = 1;

  // Throws std::invalid_argument naming the offending field.
  void validate(std::size_t dim_x, std::size_t dim_y) const;
};

struct Population {
  std::vector<RealVector> members;
  std::size_t size() const { return members.size(); }
};

// J(x_j, y_i) for the current design and failure members, rows indexed by
// design. Refreshed whenever either population changes.
class CostCache {
 public:
  void refresh(const Environment& env, const Population& designs, const Population& failures,
               int workers = 1);
  double at(std::size_t design, std::size_t failure) const { return costs_[design * n_y_ + failure]; }
  double mean_for_design(std::size_t design) const;
  std::size_t n_x() const { return n_x_; }
  std::size_t n_y() const { return n_y_; }

 private:
  std::size_t n_x_ = 0, n_y_ = 0;
  std::vector<double> costs_;
};

struct RoundRecord {
  int round = 0;  // 1-based
  double lambda = 0.0;
  KernelKind kernel = KernelKind::Mala;
  std::size_t best_index = 0;
  RealVector best_design;
  double best_cost = 0.0;           // mean J of the best design over current failures
  double mean_failure_cost = 0.0;   // mean over all (design, failure) pairs
  std::vector<double> design_acceptance;
  std::vector<double> failure_acceptance;
  double wall_seconds = 0.0;
};

struct PredictRepairResult {
  RealVector best_design;
  Population designs;
  Population failures;
  std::vector<RoundRecord> records;
};

// J(S(x, y)) + log p_y0(y).
double risk_adjusted_cost(const Environment& env, std::span<const double> x,
                          std::span<const double> y);
ad::Var risk_adjusted_cost(ad::Tape& tape, const Environment& env, ad::Var x, ad::Var y);

// lambda in [0, 1]. At lambda = 0 the cost is not evaluated.
double failure_log_density(const Environment& env, const Population& designs,
                           std::span<const double> y, double lambda);
double repair_log_density(const Environment& env, const Population& failures,
                          std::span<const double> x, double lambda);

// The same densities as sampler targets (value and optional gradient).
Target failure_target(const Environment& env, const Population& designs, double lambda);
Target repair_target(const Environment& env, const Population& failures, double lambda);

// lambda_i = exp(-rate (K - i) / K), 1 <= i <= K.
double tempering_schedule(int round, int rounds, double rate);

// Argmax of repair_log_density at lambda = 1; ties go to the lowest index.
std::size_t select_best_index(const Environment& env, const Population& designs,
                              const Population& failures);
RealVector select_best_design(const Environment& env, const Population& designs,
                              const Population& failures);

PredictRepairResult predict_and_repair(const Environment& env, const PredictRepairConfig& config);

// Domain randomization: n_y fresh prior failures per round, gradient ascent
// on the design density at lambda = 1. `failures` holds the last round's draw.
PredictRepairResult baseline_dr(const Environment& env, const PredictRepairConfig& config);

// predict_and_repair with the GD kernel for every round and lambda = 1.
PredictRepairResult baseline_gd(const Environment& env, const PredictRepairConfig& config);

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// is rethrown after all workers finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace fpr
