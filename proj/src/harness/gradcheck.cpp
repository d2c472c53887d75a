#include "fpr/harness/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "fpr/ad/gradient.hpp"
#include "fpr/ad/ops.hpp"
#include "fpr/env/powergrid.hpp"
#include "fpr/orchestrator.hpp"
#include "fpr/rng.hpp"

namespace fpr::harness {

namespace {

constexpr double kZeroNorm = 1e-10;

RealVector unit_direction(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  RealVector u(dim);
  double s = 0.0;
  for (double& v : u) {
    v = n(rng);
    s += v * v;
  }
  s = std::sqrt(s);
  for (double& v : u) v /= s;
  return u;
}

// Directional derivatives of one block (offset, dim) of z = [x; y].
double block_error(const Environment& env, const RealVector& x, const RealVector& y,
                   const RealVector& grad, std::size_t offset, std::size_t dim,
                   const GradCheckOptions& o, Rng& rng) {
  double diff = 0.0, norm_ad = 0.0, norm_fd = 0.0;
  for (std::size_t k = 0; k < o.directions; ++k) {
    const RealVector u = unit_direction(dim, rng);
    RealVector zp_x = x, zm_x = x, zp_y = y, zm_y = y;
    RealVector& plus = offset == 0 ? zp_x : zp_y;
    RealVector& minus = offset == 0 ? zm_x : zm_y;
    double d_ad = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      plus[i] += o.step * u[i];
      minus[i] -= o.step * u[i];
      d_ad += grad[offset + i] * u[i];
    }
    const double d_fd = (env.cost_value(zp_x, zp_y) - env.cost_value(zm_x, zm_y)) / (2.0 * o.step);
    diff += (d_ad - d_fd) * (d_ad - d_fd);
    norm_ad += d_ad * d_ad;
    norm_fd += d_fd * d_fd;
  }
  const double scale = std::sqrt(std::max(norm_ad, norm_fd));
  if (scale < kZeroNorm) return 0.0;
  return std::sqrt(diff) / scale;
}

// Power-flow draws that do not converge get a constant penalty with zero
// gradient; there is nothing to check there.
bool admissible(const Environment& env, const RealVector& x, const RealVector& y) {
  const auto* grid = dynamic_cast<const PowerGridEnvironment*>(&env);
  if (!grid) return true;
  return grid->solve(x, y).converged;
}

std::optional<GradCheckSample> check_draw(const Environment& env, std::size_t draw,
                                          const GradCheckOptions& o) {
  Rng rng = make_stream(o.seed, StreamPurpose::GradCheck, 0, draw);
  const RealVector x = env.prior_x().sample(rng);
  const RealVector y = env.prior_y().sample(rng);
  if (!admissible(env, x, y)) return std::nullopt;

  const std::size_t nx = env.dim_x(), ny = env.dim_y();
  RealVector z(x);
  z.insert(z.end(), y.begin(), y.end());
  GradientResult g;
  try {
    g = ad::value_and_grad(
        [&](ad::Tape& tape, ad::Var v) {
          return env.cost(tape, ad::slice(v, 0, nx), ad::slice(v, nx, ny));
        },
        z);
  } catch (const ad::RepeatedEigenvalueError&) {
    // Formation draws with a tied lambda2 have no derivative.
    return std::nullopt;
  }
  if (!std::isfinite(g.value)) return std::nullopt;

  GradCheckSample s;
  s.draw = draw;
  s.cost = g.value;
  Rng dirs = make_stream(o.seed, StreamPurpose::GradCheck, 1, draw);
  s.rel_error_x = block_error(env, x, y, g.gradient, 0, nx, o, dirs);
  s.rel_error_y = block_error(env, x, y, g.gradient, nx, ny, o, dirs);
  return s;
}

}  // namespace

GradCheckReport gradient_check(const Environment& env, const GradCheckOptions& o) {
  GradCheckReport r;
  r.environment = env.name();
  r.tolerance = o.tolerance;
  std::size_t next = 0;
  while (r.checked.size() < o.samples && r.skipped <= o.max_skips) {
    const std::size_t batch = o.samples - r.checked.size();
    std::vector<std::optional<GradCheckSample>> results(batch);
    parallel_for(batch, o.workers,
                 [&](std::size_t i) { results[i] = check_draw(env, next + i, o); });
    next += batch;
    for (auto& s : results) {
      if (s) {
        r.checked.push_back(*s);
      } else {
        ++r.skipped;
      }
    }
  }
  for (const auto& s : r.checked) {
    r.worst = std::max(r.worst, s.rel_error());
    if (!(s.rel_error() < o.tolerance)) ++r.failures;
  }
  return r;
}

}  // namespace fpr::harness
