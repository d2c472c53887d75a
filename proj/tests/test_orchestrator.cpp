#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fpr/env/formation.hpp"
#include "fpr/orchestrator.hpp"
#include "fpr/rng.hpp"
#include "support.hpp"

using namespace fpr;
using fpr::testing::fd_gradient;
using fpr::testing::rel_error;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

DistributionPtr gaussian(std::size_t dim, double mean, double stddev) {
  return std::make_shared<DiagonalGaussian>(DiagonalGaussian::isotropic(dim, mean, stddev));
}

DistributionPtr box(std::size_t dim, double lo, double hi) {
  return std::make_shared<SmoothedUniformBox>(RealVector(dim, lo), RealVector(dim, hi));
}

// 1-D Gaussian with log-density `lp` at its mean.
DistributionPtr gaussian_with_peak(double lp) {
  return gaussian(1, 0.0, std::exp(-lp - kHalfLog2Pi));
}

std::shared_ptr<FunctionEnvironment> constant_env(double c, DistributionPtr px, DistributionPtr py) {
  return std::make_shared<FunctionEnvironment>(
      "const", px, py, [c](ad::Tape& t, ad::Var x, ad::Var y) {
        // Touch both inputs so gradients are defined (and zero).
        return ad::add_scalar(ad::scale(ad::add(ad::sum(x), ad::sum(y)), 0.0), c);
      });
}

// J = first coordinate of x (a design-indexed lookup for fixed costs).
std::shared_ptr<FunctionEnvironment> x_is_cost_env() {
  return std::make_shared<FunctionEnvironment>(
      "xcost", box(1, -100, 100), box(1, -100, 100),
      [](ad::Tape&, ad::Var x, ad::Var y) { return ad::add(ad::element(x, 0), ad::scale(ad::sum(y), 0.0)); });
}

// J = y (a failure-indexed lookup).
std::shared_ptr<FunctionEnvironment> y_is_cost_env() {
  return std::make_shared<FunctionEnvironment>(
      "ycost", box(1, -100, 100), box(1, -100, 100),
      [](ad::Tape&, ad::Var x, ad::Var y) { return ad::add(ad::element(y, 0), ad::scale(ad::sum(x), 0.0)); });
}

// J = ||x - a||^2 + 0.5 sin(x . y), smooth in both arguments.
std::shared_ptr<FunctionEnvironment> coupled_env(std::size_t d) {
  return std::make_shared<FunctionEnvironment>(
      "coupled", gaussian(d, 0.0, 1.0), gaussian(d, 0.5, 1.0), [](ad::Tape& t, ad::Var x, ad::Var y) {
        ad::Var diff = ad::add_scalar(x, -0.3);
        return ad::add(ad::sum(ad::square(diff)), ad::scale(ad::sin(ad::dot(x, y)), 0.5));
      });
}

Population pop(std::initializer_list<RealVector> members) { return Population{members}; }

bool same_records(const std::vector<RoundRecord>& a, const std::vector<RoundRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].round != b[i].round || a[i].lambda != b[i].lambda || a[i].kernel != b[i].kernel ||
        a[i].best_index != b[i].best_index || a[i].best_design != b[i].best_design ||
        a[i].best_cost != b[i].best_cost || a[i].mean_failure_cost != b[i].mean_failure_cost ||
        a[i].design_acceptance != b[i].design_acceptance ||
        a[i].failure_acceptance != b[i].failure_acceptance) {
      return false;
    }
  }
  return true;
}

PredictRepairConfig small_config() {
  PredictRepairConfig c;
  c.n_x = 4;
  c.n_y = 3;
  c.rounds = 6;
  c.substeps = 3;
  c.tau_x = {0.02};
  c.tau_y = {0.02};
  c.quench_rounds = 2;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("risk-adjusted cost") {
  SUBCASE("zero cost gives the prior log-density") {
    auto env = constant_env(0.0, gaussian(2, 0, 1), gaussian(3, 0.2, 0.7));
    const RealVector x{0.1, 0.2}, y{0.3, -0.4, 1.0};
    CHECK(risk_adjusted_cost(*env, x, y) == env->prior_y().log_density(y));
  }
  SUBCASE("arithmetic") {
    auto env = constant_env(2.0, gaussian(1, 0, 1), gaussian_with_peak(-1.0));
    CHECK(risk_adjusted_cost(*env, RealVector{0.0}, RealVector{0.0}) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("gradient in y is dJ + dlog p") {
    auto env = coupled_env(3);
    const RealVector x{0.2, -0.5, 0.9};
    const RealVector y{0.1, 0.4, -0.2};
    auto f = [&](ad::Tape& t, ad::Var v) { return risk_adjusted_cost(t, *env, t.constant(x), v); };
    const auto g = ad::value_and_grad(f, y);
    const auto fd = fd_gradient([&](std::span<const double> v) { return risk_adjusted_cost(*env, x, v); }, y);
    CHECK(rel_error(g.gradient, fd) < 1e-8);
    CHECK(g.value == doctest::Approx(risk_adjusted_cost(*env, x, y)).epsilon(1e-14));
  }
}

TEST_CASE("failure log-density") {
  SUBCASE("lambda 0 is exactly the prior") {
    auto env = coupled_env(2);
    const RealVector y{0.3, 0.8};
    const auto designs = pop({{0.1, 0.2}, {1.0, -1.0}});
    CHECK(failure_log_density(*env, designs, y, 0.0) == env->prior_y().log_density(y));
    CHECK(failure_target(*env, designs, 0.0)(y, true).log_density == env->prior_y().log_density(y));
  }
  SUBCASE("single design") {
    auto env = constant_env(5.0, gaussian(1, 0, 1), gaussian_with_peak(-2.0));
    CHECK(failure_log_density(*env, pop({{0.0}}), RealVector{0.0}, 1.0) ==
          doctest::Approx(3.0).epsilon(1e-14));
  }
  SUBCASE("minimum over designs") {
    auto env = x_is_cost_env();
    const RealVector y{0.0};
    const double lp = env->prior_y().log_density(y);
    CHECK(failure_log_density(*env, pop({{5.0}, {3.0}}), y, 1.0) == doctest::Approx(lp + 3.0));
    CHECK(failure_target(*env, pop({{5.0}, {3.0}}), 1.0)(y, true).log_density ==
          doctest::Approx(lp + 3.0));
  }
  SUBCASE("lambda outside [0, 1] is rejected") {
    auto env = coupled_env(1);
    CHECK_THROWS_AS(failure_log_density(*env, pop({{0.0}}), RealVector{0.0}, 1.5), std::invalid_argument);
  }
}

TEST_CASE("repair log-density") {
  SUBCASE("lambda 0 is exactly the prior") {
    auto env = coupled_env(2);
    const RealVector x{0.3, 0.8};
    CHECK(repair_log_density(*env, pop({{0.1, 0.2}}), x, 0.0) == env->prior_x().log_density(x));
  }
  SUBCASE("mean of failure costs") {
    auto env = y_is_cost_env();
    CHECK(repair_log_density(*env, pop({{4.0}, {6.0}}), RealVector{0.0}, 1.0) == doctest::Approx(-5.0));
    CHECK(repair_target(*env, pop({{4.0}, {6.0}}), 1.0)(RealVector{0.0}, true).log_density ==
          doctest::Approx(-5.0));
  }
  SUBCASE("raising one failure cost lowers the density") {
    auto env = y_is_cost_env();
    const double base = repair_log_density(*env, pop({{4.0}, {6.0}, {1.0}}), RealVector{0.0}, 0.4);
    CHECK(repair_log_density(*env, pop({{4.0}, {6.5}, {1.0}}), RealVector{0.0}, 0.4) < base);
    CHECK(repair_log_density(*env, pop({{4.0}, {6.0}, {1.1}}), RealVector{0.0}, 0.4) < base);
  }
}

TEST_CASE("sampler targets have finite-difference gradients") {
  auto env = coupled_env(3);
  const auto designs = pop({{0.2, -0.5, 0.9}, {1.1, 0.3, -0.2}});
  const auto failures = pop({{0.1, 0.4, -0.2}, {-0.7, 0.2, 0.5}, {0.3, 0.3, 0.3}});
  const RealVector x{0.5, 0.1, -0.3};
  const RealVector y{0.4, -0.1, 0.8};
  for (double lambda : {0.0, 0.3, 1.0}) {
    const Target tx = repair_target(*env, failures, lambda);
    const Target ty = failure_target(*env, designs, lambda);
    const auto gx = tx(x, true);
    const auto gy = ty(y, true);
    CHECK(gx.log_density == doctest::Approx(repair_log_density(*env, failures, x, lambda)).epsilon(1e-13));
    CHECK(gy.log_density == doctest::Approx(failure_log_density(*env, designs, y, lambda)).epsilon(1e-13));
    const auto fx = fd_gradient([&](std::span<const double> v) { return tx(v, false).log_density; }, x);
    const auto fy = fd_gradient([&](std::span<const double> v) { return ty(v, false).log_density; }, y);
    CHECK(rel_error(gx.gradient, fx) < 1e-8);
    CHECK(rel_error(gy.gradient, fy) < 1e-8);
  }
}

TEST_CASE("tempering schedule") {
  CHECK(tempering_schedule(50, 50, 5.0) == 1.0);
  CHECK(tempering_schedule(25, 50, 5.0) == doctest::Approx(std::exp(-2.5)).epsilon(1e-15));
  CHECK(tempering_schedule(25, 50, 5.0) == doctest::Approx(0.0821).epsilon(1e-3));
  for (int i = 1; i <= 10; ++i) CHECK(tempering_schedule(i, 10, 0.0) == 1.0);
  for (int i = 1; i < 10; ++i) CHECK(tempering_schedule(i, 10, 5.0) <= tempering_schedule(i + 1, 10, 5.0));
  CHECK_THROWS_AS(tempering_schedule(0, 10, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(tempering_schedule(11, 10, 5.0), std::invalid_argument);
}

TEST_CASE("configuration validation names the field") {
  auto env = coupled_env(2);
  auto message = [&](PredictRepairConfig c) {
    try {
      predict_and_repair(*env, c);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  PredictRepairConfig c = small_config();
  c.rounds = 1;
  c.substeps = 0;
  CHECK(message(c).find("substeps") != std::string::npos);
  c = small_config();
  c.quench_rounds = c.rounds + 1;
  CHECK(message(c).find("quench_rounds") != std::string::npos);
  c = small_config();
  c.n_y = 0;
  CHECK(message(c).find("n_y") != std::string::npos);
  c = small_config();
  c.tau_x = {0.1, 0.1, 0.1};
  CHECK(message(c).find("tau_x") != std::string::npos);
  c = small_config();
  c.fixed_lambda = -0.1;
  CHECK(message(c).find("fixed_lambda") != std::string::npos);
}

TEST_CASE("select best design") {
  // Flat box prior; J = x, so the repair density is -x.
  auto env = x_is_cost_env();
  const auto failures = pop({{0.0}, {2.0}});
  CHECK(select_best_design(*env, pop({{7.0}}), failures) == RealVector{7.0});
  CHECK(select_best_design(*env, pop({{1.0}, {3.0}}), failures) == RealVector{1.0});
  CHECK(select_best_index(*env, pop({{3.0}, {1.0}, {2.0}}), failures) == 1);
  CHECK(select_best_design(*env, pop({{3.0}, {1.0}, {2.0}}), failures) ==
        select_best_design(*env, pop({{2.0}, {3.0}, {1.0}}), failures));
  // Ties go to the lowest index.
  CHECK(select_best_index(*env, pop({{1.0}, {1.0}}), failures) == 0);
  // Positive rescaling of every cost keeps the argmax.
  auto scaled = std::make_shared<FunctionEnvironment>(
      "scaled", box(1, -100, 100), box(1, -100, 100),
      [](ad::Tape&, ad::Var x, ad::Var y) { return ad::add(ad::scale(ad::element(x, 0), 7.5), ad::scale(ad::sum(y), 0.0)); });
  CHECK(select_best_index(*scaled, pop({{3.0}, {1.0}, {2.0}}), failures) == 1);
}

TEST_CASE("lambda 0 leaves the failure target at the prior for a single round") {
  auto env = coupled_env(2);
  PredictRepairConfig c;
  c.n_x = 2;
  c.n_y = 2;
  c.rounds = 1;
  c.substeps = 1;
  c.fixed_lambda = 0.0;
  const auto r = predict_and_repair(*env, c);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].lambda == 0.0);
  const RealVector y{0.2, 0.9};
  CHECK(failure_target(*env, r.designs, 0.0)(y, false).log_density == env->prior_y().log_density(y));
}

TEST_CASE("lambda 0 populations stay prior-distributed") {
  // Strong cost that would move both populations if it were used.
  auto env = std::make_shared<FunctionEnvironment>(
      "pull", gaussian(2, 1.0, 0.5), gaussian(2, -1.0, 2.0), [](ad::Tape&, ad::Var x, ad::Var y) {
        return ad::scale(ad::sum(ad::square(ad::sub(x, y))), 50.0);
      });
  PredictRepairConfig c;
  c.n_x = 1000;
  c.n_y = 1000;
  c.rounds = 3;
  c.substeps = 5;
  c.tau_x = {0.05};
  c.tau_y = {0.5};
  c.fixed_lambda = 0.0;
  c.seed = 4;
  const auto r = predict_and_repair(*env, c);
  auto check_moments = [](const Population& p, double mean, double sd) {
    const double n = static_cast<double>(p.size());
    for (std::size_t d = 0; d < 2; ++d) {
      double m = 0.0, v = 0.0;
      for (const auto& s : p.members) m += s[d];
      m /= n;
      for (const auto& s : p.members) v += (s[d] - m) * (s[d] - m);
      v /= n - 1;
      CHECK(std::abs(m - mean) < 3.0 * sd / std::sqrt(n));
      CHECK(std::abs(v - sd * sd) < 3.0 * sd * sd * std::sqrt(2.0 / (n - 1)));
    }
  };
  check_moments(r.designs, 1.0, 0.5);
  check_moments(r.failures, -1.0, 2.0);
  for (const auto& rec : r.records) {
    const double acc = std::accumulate(rec.design_acceptance.begin(), rec.design_acceptance.end(), 0.0);
    CHECK(acc > 0.0);
  }
}

TEST_CASE("quench-only repair reaches the closed-form optimum") {
  // log p_x0 = -|x|^2 / (2 s^2) + const, J = |x - y0|^2 independent of the
  // failure vector: the optimum is 2 s^2 y0 / (1 + 2 s^2).
  const double s = 0.8;
  const RealVector y0{1.0, -0.5, 2.0};
  auto env = std::make_shared<FunctionEnvironment>(
      "quadratic", gaussian(3, 0.0, s), gaussian(3, 0.0, 1.0), [y0](ad::Tape& t, ad::Var x, ad::Var y) {
        return ad::add(ad::sum(ad::square(ad::sub(x, t.constant(y0)))), ad::scale(ad::sum(y), 0.0));
      });
  PredictRepairConfig c;
  c.n_x = 3;
  c.n_y = 2;
  c.rounds = 20;
  c.substeps = 10;
  c.tau_x = {0.05};
  c.tau_y = {0.05};
  c.quench_rounds = 20;
  c.tempering_rate = 0.0;
  const auto r = predict_and_repair(*env, c);
  const double k = 2 * s * s / (1 + 2 * s * s);
  for (const auto& x : r.designs.members) {
    for (std::size_t i = 0; i < 3; ++i) CHECK(x[i] == doctest::Approx(k * y0[i]).epsilon(1e-9));
  }
  for (const auto& rec : r.records) CHECK(rec.kernel == KernelKind::Gd);
}

TEST_CASE("round records follow the schedule") {
  auto env = coupled_env(2);
  const PredictRepairConfig c = small_config();
  const auto r = predict_and_repair(*env, c);
  REQUIRE(r.records.size() == static_cast<std::size_t>(c.rounds));
  for (int i = 1; i <= c.rounds; ++i) {
    const RoundRecord& rec = r.records[i - 1];
    CHECK(rec.round == i);
    CHECK(rec.lambda == tempering_schedule(i, c.rounds, c.tempering_rate));
    CHECK(rec.kernel == (i > c.rounds - c.quench_rounds ? KernelKind::Gd : KernelKind::Mala));
    CHECK(rec.design_acceptance.size() == c.n_x);
    CHECK(rec.failure_acceptance.size() == c.n_y);
  }
  // The reported best design is the argmax at the end of the last round.
  CHECK(r.best_design == select_best_design(*env, r.designs, r.failures));
  CHECK(r.records.back().best_cost ==
        doctest::Approx(-repair_log_density(*env, r.failures, r.best_design, 1.0) +
                        env->prior_x().log_density(r.best_design)));
}

TEST_CASE("runs are deterministic and independent of the worker count") {
  auto env = coupled_env(3);
  PredictRepairConfig c = small_config();
  for (KernelKind k : {KernelKind::Mala, KernelKind::Rmh}) {
    c.kernel = k;
    const auto a = predict_and_repair(*env, c);
    const auto b = predict_and_repair(*env, c);
    c.workers = 3;
    const auto w = predict_and_repair(*env, c);
    c.workers = 1;
    CHECK(same_records(a.records, b.records));
    CHECK(same_records(a.records, w.records));
    CHECK(a.failures.members == w.failures.members);
    c.seed += 1;
    const auto other = predict_and_repair(*env, c);
    CHECK_FALSE(same_records(a.records, other.records));
    c.seed -= 1;
  }
}

TEST_CASE("stale designs couple failures to the previous round") {
  auto env = coupled_env(2);
  PredictRepairConfig c = small_config();
  const auto fresh = predict_and_repair(*env, c);
  c.stale_designs = true;
  const auto stale = predict_and_repair(*env, c);
  // Designs see the same failures in round 1, so they agree there.
  CHECK(fresh.records[0].best_design == stale.records[0].best_design);
  CHECK(fresh.failures.members != stale.failures.members);
  CHECK(same_records(stale.records, predict_and_repair(*env, c).records));
}

TEST_CASE("a chain stuck at -inf aborts with its name") {
  // log of a negative number is undefined everywhere in the prior box.
  auto env = std::make_shared<FunctionEnvironment>(
      "broken", box(1, -1, 1), box(1, -1, 1),
      [](ad::Tape&, ad::Var x, ad::Var y) { return ad::log(ad::add_scalar(ad::add(x, y), -100.0)); });
  PredictRepairConfig c = small_config();
  c.n_x = 2;
  c.n_y = 2;
  c.tempering_rate = 0.0;
  try {
    predict_and_repair(*env, c);
    FAIL("expected StuckChainError");
  } catch (const StuckChainError& e) {
    CHECK(std::string(e.what()).find("design chain 0") != std::string::npos);
  }
}

TEST_CASE("domain randomization baseline") {
  SUBCASE("cost independent of y matches plain gradient ascent") {
    auto env = std::make_shared<FunctionEnvironment>(
        "noy", gaussian(2, 0.0, 1.0), gaussian(2, 0.0, 1.0), [](ad::Tape& t, ad::Var x, ad::Var y) {
          return ad::add(ad::sum(ad::square(ad::add_scalar(x, -1.0))), ad::scale(ad::sum(y), 0.0));
        });
    PredictRepairConfig c = small_config();
    c.n_x = 2;
    const auto r = baseline_dr(*env, c);
    for (std::size_t j = 0; j < c.n_x; ++j) {
      Rng rng = make_stream(c.seed, StreamPurpose::InitDesigns, 0, j);
      RealVector x = env->prior_x().sample(rng);
      for (int step = 0; step < c.rounds * c.substeps; ++step) {
        for (double& v : x) v += c.tau_x[0] * (-v - 2.0 * (v - 1.0));
      }
      for (std::size_t i = 0; i < 2; ++i) CHECK(r.designs.members[j][i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
  }
  SUBCASE("converges to the minimizer of the expected cost") {
    // J = |x - a|^2 (1 + y^2) has argmin a for every y; flat prior inside the box.
    const RealVector a{0.4, -0.7};
    auto env = std::make_shared<FunctionEnvironment>(
        "scaled-bowl", box(2, -2, 2), gaussian(1, 0.0, 1.0), [a](ad::Tape& t, ad::Var x, ad::Var y) {
          ad::Var bowl = ad::sum(ad::square(ad::sub(x, t.constant(a))));
          return ad::mul(bowl, ad::add_scalar(ad::square(y), 1.0));
        });
    PredictRepairConfig c;
    c.n_x = 3;
    c.n_y = 5;
    c.rounds = 20;
    c.substeps = 10;
    c.tau_x = {0.05};
    const auto r = baseline_dr(*env, c);
    for (const auto& x : r.designs.members) {
      CHECK(std::abs(x[0] - a[0]) < 1e-3);
      CHECK(std::abs(x[1] - a[1]) < 1e-3);
    }
  }
  SUBCASE("fresh failures every round, reproducible per seed") {
    auto env = coupled_env(2);
    PredictRepairConfig c = small_config();
    c.rounds = 1;
    c.quench_rounds = 0;
    const auto one = baseline_dr(*env, c);
    c.rounds = 2;
    const auto two = baseline_dr(*env, c);
    CHECK(one.failures.members != two.failures.members);
    CHECK(two.failures.members == baseline_dr(*env, c).failures.members);
    for (const auto& rec : two.records) CHECK(rec.kernel == KernelKind::Gd);
  }
}

TEST_CASE("gradient-descent baseline") {
  SUBCASE("equals predict_and_repair with full quench and no tempering") {
    auto env = coupled_env(2);
    PredictRepairConfig c = small_config();
    const auto gd = baseline_gd(*env, c);
    c.quench_rounds = c.rounds;
    c.tempering_rate = 0.0;
    const auto ours = predict_and_repair(*env, c);
    CHECK(same_records(gd.records, ours.records));
    CHECK(gd.failures.members == ours.failures.members);
  }
  SUBCASE("design cost is nonincreasing on a convex toy") {
    auto env = std::make_shared<FunctionEnvironment>(
        "convex", box(2, -2, 2), gaussian(2, 0.0, 1.0), [](ad::Tape& t, ad::Var x, ad::Var y) {
          return ad::add(ad::sum(ad::square(ad::add_scalar(x, -0.5))), ad::scale(ad::sum(y), 0.0));
        });
    PredictRepairConfig c = small_config();
    c.rounds = 10;
    const auto r = baseline_gd(*env, c);
    for (std::size_t i = 1; i < r.records.size(); ++i) {
      CHECK(r.records[i].best_cost <= r.records[i - 1].best_cost);
    }
  }
  SUBCASE("GD failures stay in their initial well while MALA visits both") {
    // Failure density log p_y0 + J with J = -2 (y^2 - 1)^2: wells at +-1
    // separated by a 2-nat barrier, flat prior on [-2, 2].
    auto env = std::make_shared<FunctionEnvironment>(
        "double-well", box(1, -1, 1), box(1, -2, 2), [](ad::Tape& t, ad::Var x, ad::Var y) {
          ad::Var w = ad::add_scalar(ad::square(y), -1.0);
          return ad::add(ad::scale(ad::sum(ad::square(w)), -2.0), ad::scale(ad::sum(x), 0.0));
        });
    PredictRepairConfig c;
    c.n_x = 1;
    c.n_y = 20;
    c.rounds = 10;
    c.substeps = 10;
    c.tau_x = {0.01};
    c.tau_y = {0.01};
    c.tempering_rate = 0.0;
    int mala_switched = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      c.seed = seed;
      std::vector<double> start;
      for (std::size_t j = 0; j < c.n_y; ++j) {
        Rng rng = make_stream(seed, StreamPurpose::InitFailures, 0, j);
        start.push_back(env->prior_y().sample(rng)[0]);
      }
      const auto gd = baseline_gd(*env, c);
      for (std::size_t j = 0; j < c.n_y; ++j) {
        const double y = gd.failures.members[j][0];
        CHECK((y > 0) == (start[j] > 0));
        CHECK(std::abs(std::abs(y) - 1.0) < 0.05);
      }
      c.kernel = KernelKind::Mala;
      const auto mala = predict_and_repair(*env, c);
      std::size_t right = 0;
      for (std::size_t j = 0; j < c.n_y; ++j) {
        const double y = mala.failures.members[j][0];
        right += y > 0 ? 1 : 0;
        mala_switched += (y > 0) != (start[j] > 0) ? 1 : 0;
      }
      const double frac = static_cast<double>(right) / static_cast<double>(c.n_y);
      CHECK(frac > 0.2);
      CHECK(frac < 0.8);
    }
    CHECK(mala_switched > 0);
  }
}

TEST_CASE("parallel_for propagates the first exception") {
  std::vector<int> hits(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hits[i] = 1; });
  CHECK(std::accumulate(hits.begin(), hits.end(), 0) == 50);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("formation small config halves the best-design cost") {
  FormationConfig fc;
  fc.horizon = 10.0;
  const FormationEnvironment env(fc);
  PredictRepairConfig c;
  c.n_x = 3;
  c.n_y = 3;
  c.rounds = 10;
  c.substeps = 3;
  c.tau_x = {1e-3};
  c.tau_y = {1e-3};
  c.quench_rounds = 2;
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    c.seed = seed;
    const auto r = predict_and_repair(env, c);
    MESSAGE("seed " << seed << ": " << r.records.front().best_cost << " -> " << r.records.back().best_cost);
    improved += r.records.back().best_cost * 2.0 <= r.records.front().best_cost ? 1 : 0;
  }
  CHECK(improved == 4);
}
