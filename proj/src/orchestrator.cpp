#include "fpr/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <thread>

#include "fpr/rng.hpp"

namespace fpr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Scratch {
  ad::Tape tape;
  bool busy = false;
};

// Value (and gradient) of f at x on a per-thread tape.
Evaluation evaluate(const ad::ScalarFunction& f, std::span<const double> x, bool with_gradient) {
  thread_local Scratch s;
  ad::Tape local;
  const bool reuse = !s.busy;
  ad::Tape& tape = reuse ? s.tape : local;
  if (reuse) s.busy = true;
  struct Release {
    Scratch& s;
    bool active;
    ~Release() {
      if (active) s.busy = false;
    }
  } release{s, reuse};
  Evaluation e;
  if (with_gradient) {
    GradientResult g = ad::value_and_grad(tape, f, x);
    e.log_density = g.value;
    e.gradient = std::move(g.gradient);
  } else {
    tape.clear();
    e.log_density = f(tape, tape.constant(x)).value()[0];
  }
  return e;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

void check_stepsize(const Stepsize& tau, std::size_t dim, const std::string& field) {
  if (tau.size() != 1 && tau.size() != dim) {
    throw std::invalid_argument(field + ": expected 1 or " + std::to_string(dim) + " entries");
  }
  for (double t : tau) {
    if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument(field + ": must be positive");
  }
}

Population sample_population(const Distribution& prior, std::size_t n, std::uint64_t seed,
                             StreamPurpose purpose, std::uint64_t round) {
  Population p;
  p.members.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    Rng rng = make_stream(seed, purpose, round, j);
    p.members.push_back(prior.sample(rng));
  }
  return p;
}

std::size_t best_from_cache(const Environment& env, const Population& designs,
                            const CostCache& cache) {
  std::size_t best = 0;
  double best_value = kNegInf;
  for (std::size_t j = 0; j < designs.size(); ++j) {
    const double v = env.prior_x().log_density(designs.members[j]) - cache.mean_for_design(j);
    if (j == 0 || v > best_value) {
      best = j;
      best_value = v;
    }
  }
  return best;
}

// Advances every chain of `pop` against `target`; returns acceptance rates.
std::vector<double> advance(Population& pop, const Target& target, const KernelConfig& kc,
                            std::uint64_t seed, StreamPurpose purpose, int round, int workers,
                            const char* label) {
  const bool gradient = kc.kernel != KernelKind::Rmh;
  std::vector<double> acceptance(pop.size());
  parallel_for(pop.size(), workers, [&](std::size_t j) {
    Rng rng = make_stream(seed, purpose, static_cast<std::uint64_t>(round), j);
    ChainState state = make_state(pop.members[j], target, gradient);
    ChainRun run = run_chain(std::move(state), target, kc, rng);
    if (run.state.log_density == kNegInf) {
      throw StuckChainError(std::string(label) + " chain " + std::to_string(j) +
                            " has log-density -inf after round " + std::to_string(round));
    }
    pop.members[j] = std::move(run.state.position);
    acceptance[j] = run.acceptance_rate;
  });
  return acceptance;
}

RoundRecord make_record(const Environment& env, const Population& designs,
                        const Population& failures, int workers) {
  CostCache cache;
  cache.refresh(env, designs, failures, workers);
  RoundRecord r;
  r.best_index = best_from_cache(env, designs, cache);
  r.best_design = designs.members[r.best_index];
  r.best_cost = cache.mean_for_design(r.best_index);
  double total = 0.0;
  for (std::size_t j = 0; j < cache.n_x(); ++j) total += cache.mean_for_design(j);
  r.mean_failure_cost = total / static_cast<double>(cache.n_x());
  return r;
}

}  // namespace

void PredictRepairConfig::validate(std::size_t dim_x, std::size_t dim_y) const {
  if (n_x < 1) throw std::invalid_argument("n_x: must be >= 1");
  if (n_y < 1) throw std::invalid_argument("n_y: must be >= 1");
  if (rounds < 1) throw std::invalid_argument("rounds: must be >= 1");
  if (substeps < 1) throw std::invalid_argument("substeps: must be >= 1");
  if (quench_rounds < 0 || quench_rounds > rounds) {
    throw std::invalid_argument("quench_rounds: must lie in [0, rounds]");
  }
  if (!(tempering_rate >= 0.0) || !std::isfinite(tempering_rate)) {
    throw std::invalid_argument("tempering_rate: must be finite and >= 0");
  }
  if (fixed_lambda && !(*fixed_lambda >= 0.0 && *fixed_lambda <= 1.0)) {
    throw std::invalid_argument("fixed_lambda: must lie in [0, 1]");
  }
  if (workers < 1) throw std::invalid_argument("workers: must be >= 1");
  check_stepsize(tau_x, dim_x, "tau_x");
  check_stepsize(tau_y, dim_y, "tau_y");
}

void CostCache::refresh(const Environment& env, const Population& designs,
                        const Population& failures, int workers) {
  n_x_ = designs.size();
  n_y_ = failures.size();
  costs_.assign(n_x_ * n_y_, 0.0);
  parallel_for(n_x_, workers, [&](std::size_t j) {
    const std::vector<double> row = env.cost_values(designs.members[j], failures.members);
    std::copy(row.begin(), row.end(), costs_.begin() + static_cast<std::ptrdiff_t>(j * n_y_));
  });
}

double CostCache::mean_for_design(std::size_t design) const {
  double s = 0.0;
  for (std::size_t i = 0; i < n_y_; ++i) s += at(design, i);
  return s / static_cast<double>(n_y_);
}

double risk_adjusted_cost(const Environment& env, std::span<const double> x,
                          std::span<const double> y) {
  return env.cost_value(x, y) + env.prior_y().log_density(y);
}

ad::Var risk_adjusted_cost(ad::Tape& tape, const Environment& env, ad::Var x, ad::Var y) {
  return ad::add(env.cost(tape, x, y), env.prior_y().log_density(tape, y));
}

Target failure_target(const Environment& env, const Population& designs, double lambda) {
  check_lambda(lambda);
  if (designs.size() == 0) throw std::invalid_argument("failure_target: no designs");
  auto xs = std::make_shared<const std::vector<RealVector>>(designs.members);
  return [&env, xs, lambda](std::span<const double> y, bool with_gradient) {
    ad::ScalarFunction f = [&env, xs, lambda](ad::Tape& tape, ad::Var v) {
      ad::Var lp = env.prior_y().log_density(tape, v);
      if (lambda == 0.0) return lp;
      ad::Var worst = ad::min(env.costs_vs_designs(tape, *xs, v));
      return ad::add(lp, ad::scale(worst, lambda));
    };
    return evaluate(f, y, with_gradient);
  };
}

Target repair_target(const Environment& env, const Population& failures, double lambda) {
  check_lambda(lambda);
  if (failures.size() == 0) throw std::invalid_argument("repair_target: no failures");
  auto ys = std::make_shared<const std::vector<RealVector>>(failures.members);
  return [&env, ys, lambda](std::span<const double> x, bool with_gradient) {
    ad::ScalarFunction f = [&env, ys, lambda](ad::Tape& tape, ad::Var v) {
      ad::Var lp = env.prior_x().log_density(tape, v);
      if (lambda == 0.0) return lp;
      ad::Var total = ad::sum(env.costs_vs_failures(tape, v, *ys));
      return ad::sub(lp, ad::scale(total, lambda / static_cast<double>(ys->size())));
    };
    return evaluate(f, x, with_gradient);
  };
}

double failure_log_density(const Environment& env, const Population& designs,
                           std::span<const double> y, double lambda) {
  check_lambda(lambda);
  double lp = env.prior_y().log_density(y);
  if (lambda == 0.0) return lp;
  double worst = std::numeric_limits<double>::infinity();
  for (const RealVector& x : designs.members) worst = std::min(worst, env.cost_value(x, y));
  return lp + lambda * worst;
}

double repair_log_density(const Environment& env, const Population& failures,
                          std::span<const double> x, double lambda) {
  check_lambda(lambda);
  double lp = env.prior_x().log_density(x);
  if (lambda == 0.0) return lp;
  const std::vector<double> costs = env.cost_values(x, failures.members);
  double total = 0.0;
  for (double c : costs) total += c;
  return lp - lambda * total / static_cast<double>(costs.size());
}

double tempering_schedule(int round, int rounds, double rate) {
  if (rounds < 1 || round < 1 || round > rounds) {
    throw std::invalid_argument("tempering_schedule: need 1 <= round <= rounds");
  }
  return std::exp(-rate * static_cast<double>(rounds - round) / static_cast<double>(rounds));
}

std::size_t select_best_index(const Environment& env, const Population& designs,
                              const Population& failures) {
  if (designs.size() == 0 || failures.size() == 0) {
    throw std::invalid_argument("select_best_design: populations must be nonempty");
  }
  CostCache cache;
  cache.refresh(env, designs, failures);
  return best_from_cache(env, designs, cache);
}

RealVector select_best_design(const Environment& env, const Population& designs,
                              const Population& failures) {
  return designs.members[select_best_index(env, designs, failures)];
}

PredictRepairResult predict_and_repair(const Environment& env, const PredictRepairConfig& config) {
  config.validate(env.dim_x(), env.dim_y());
  PredictRepairResult out;
  out.designs = sample_population(env.prior_x(), config.n_x, config.seed,
                                  StreamPurpose::InitDesigns, 0);
  out.failures = sample_population(env.prior_y(), config.n_y, config.seed,
                                   StreamPurpose::InitFailures, 0);
  for (int i = 1; i <= config.rounds; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const double lambda = config.fixed_lambda
                              ? *config.fixed_lambda
                              : tempering_schedule(i, config.rounds, config.tempering_rate);
    const KernelKind kernel =
        i > config.rounds - config.quench_rounds ? KernelKind::Gd : config.kernel;

    const Population previous = config.stale_designs ? out.designs : Population{};
    const KernelConfig kx{config.tau_x, config.substeps, kernel};
    const auto acc_x = advance(out.designs, repair_target(env, out.failures, lambda), kx,
                               config.seed, StreamPurpose::DesignStep, i, config.workers, "design");
    const KernelConfig ky{config.tau_y, config.substeps, kernel};
    const Population& coupling = config.stale_designs ? previous : out.designs;
    const auto acc_y = advance(out.failures, failure_target(env, coupling, lambda), ky, config.seed,
                               StreamPurpose::FailureStep, i, config.workers, "failure");

    RoundRecord r = make_record(env, out.designs, out.failures, config.workers);
    r.round = i;
    r.lambda = lambda;
    r.kernel = kernel;
    r.design_acceptance = acc_x;
    r.failure_acceptance = acc_y;
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.records.push_back(std::move(r));
  }
  out.best_design = out.records.back().best_design;
  return out;
}

PredictRepairResult baseline_dr(const Environment& env, const PredictRepairConfig& config) {
  config.validate(env.dim_x(), env.dim_y());
  PredictRepairResult out;
  out.designs = sample_population(env.prior_x(), config.n_x, config.seed,
                                  StreamPurpose::InitDesigns, 0);
  const KernelConfig kx{config.tau_x, config.substeps, KernelKind::Gd};
  for (int i = 1; i <= config.rounds; ++i) {
    const auto start = std::chrono::steady_clock::now();
    out.failures = sample_population(env.prior_y(), config.n_y, config.seed,
                                     StreamPurpose::Resample, static_cast<std::uint64_t>(i));
    const auto acc_x = advance(out.designs, repair_target(env, out.failures, 1.0), kx, config.seed,
                               StreamPurpose::DesignStep, i, config.workers, "design");
    RoundRecord r = make_record(env, out.designs, out.failures, config.workers);
    r.round = i;
    r.lambda = 1.0;
    r.kernel = KernelKind::Gd;
    r.design_acceptance = acc_x;
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.records.push_back(std::move(r));
  }
  out.best_design = out.records.back().best_design;
  return out;
}

PredictRepairResult baseline_gd(const Environment& env, const PredictRepairConfig& config) {
  PredictRepairConfig c = config;
  c.quench_rounds = c.rounds;
  c.tempering_rate = 0.0;
  c.kernel = KernelKind::Gd;
  return predict_and_repair(env, c);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> threads;
  threads.reserve(count - 1);
  for (std::size_t t = 1; t < count; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fpr
