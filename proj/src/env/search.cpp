#include "fpr/env/search.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fpr/kernels/kernels.hpp"

namespace fpr {

namespace {

constexpr double kNormGuard = 1e-9;

DistributionPtr arena_prior(std::size_t agents, const SearchConfig& c) {
  const std::size_t n = agents * c.control_points;
  RealVector lo(2 * n), hi(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[2 * i] = -c.half_width;
    hi[2 * i] = c.half_width;
    lo[2 * i + 1] = -c.half_height;
    hi[2 * i + 1] = c.half_height;
  }
  return std::make_shared<SmoothedUniformBox>(std::move(lo), std::move(hi), c.prior_tail);
}

// Reference positions R (steps x 2*n_agents) = W * C.
std::vector<double> references(const std::vector<double>& w, std::span<const double> cp,
                               std::size_t n_agents, std::size_t n_cp, std::size_t steps) {
  const std::size_t width = 2 * n_agents;
  // Reorder control points to n_cp x width so the product is one gemm.
  std::vector<double> c(n_cp * width);
  for (std::size_t a = 0; a < n_agents; ++a)
    for (std::size_t j = 0; j < n_cp; ++j)
      for (std::size_t d = 0; d < 2; ++d) c[j * width + 2 * a + d] = cp[(a * n_cp + j) * 2 + d];
  std::vector<double> r(steps * width, 0.0);
  kernels::active().gemm_acc(false, false, steps, width, n_cp, w.data(), c.data(), r.data());
  return r;
}

// One controller step for all agents: p_next = p + dt * sat(kp (ref - p)).
void advance(const double* ref, const double* p, double* p_next, std::size_t n_agents,
             const SearchConfig& c) {
  for (std::size_t a = 0; a < n_agents; ++a) {
    const double ux = c.kp * (ref[2 * a] - p[2 * a]);
    const double uy = c.kp * (ref[2 * a + 1] - p[2 * a + 1]);
    const double n = std::sqrt(ux * ux + uy * uy);
    const double f = std::min(1.0, c.v_max / std::max(n, kNormGuard));
    p_next[2 * a] = p[2 * a] + c.dt * f * ux;
    p_next[2 * a + 1] = p[2 * a + 1] + c.dt * f * uy;
  }
}

std::vector<double> run_tracking(const std::vector<double>& r, std::size_t n_agents,
                                 std::size_t steps, const SearchConfig& c) {
  const std::size_t width = 2 * n_agents;
  std::vector<double> p(steps * width);
  std::copy(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(width), p.begin());
  for (std::size_t k = 0; k + 1 < steps; ++k) {
    advance(&r[k * width], &p[k * width], &p[(k + 1) * width], n_agents, c);
  }
  return p;
}

}  // namespace

std::size_t SearchConfig::steps() const {
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

void SearchConfig::validate() const {
  if (n_seek < 1) throw std::invalid_argument("env.n_seek: must be >= 1");
  if (n_hide < 1) throw std::invalid_argument("env.n_hide: must be >= 1");
  if (control_points < 2) throw std::invalid_argument("env.control_points: must be >= 2");
  if (!(radius > 0.0)) throw std::invalid_argument("env.radius: must be > 0");
  if (!(smoothing > 0.0)) throw std::invalid_argument("env.smoothing: must be > 0");
  if (!(dt > 0.0) || !(horizon >= 2.0 * dt)) {
    throw std::invalid_argument("env.dt / env.horizon: need dt > 0 and at least two steps");
  }
  if (!(v_max > 0.0)) throw std::invalid_argument("env.v_max: must be > 0");
  if (!(kp > 0.0)) throw std::invalid_argument("env.kp: must be > 0");
  if (!(half_width > 0.0) || !(half_height > 0.0)) {
    throw std::invalid_argument("env.half_width / env.half_height: must be > 0");
  }
}

std::vector<double> simulate_tracking(std::span<const double> control_points,
                                      std::size_t n_agents, const SearchConfig& config) {
  if (control_points.size() != 2 * n_agents * config.control_points) {
    throw std::invalid_argument("simulate_tracking: control point count mismatch");
  }
  const std::size_t steps = config.steps();
  const auto w = bernstein_matrix(steps, config.control_points);
  return run_tracking(references(w, control_points, n_agents, config.control_points, steps),
                      n_agents, steps, config);
}

SearchEnvironment::SearchEnvironment(SearchConfig config) : config_(config) {
  config_.validate();
  weights_ = std::make_shared<const std::vector<double>>(
      bernstein_matrix(config_.steps(), config_.control_points));
  prior_x_ = arena_prior(config_.n_seek, config_);
  prior_y_ = arena_prior(config_.n_hide, config_);
}

std::size_t SearchEnvironment::dim_x() const { return 2 * config_.control_points * config_.n_seek; }
std::size_t SearchEnvironment::dim_y() const { return 2 * config_.control_points * config_.n_hide; }

ad::Var SearchEnvironment::track(ad::Tape& tape, ad::Var control_points,
                                 std::size_t n_agents) const {
  const std::size_t n_cp = config_.control_points;
  const std::size_t steps = config_.steps();
  const std::size_t width = 2 * n_agents;
  if (control_points.size() != width * n_cp) {
    throw ad::ShapeError("search track: control point count mismatch");
  }
  if (!control_points.needs_grad()) {
    return tape.constant(
        run_tracking(references(*weights_, control_points.value(), n_agents, n_cp, steps),
                     n_agents, steps, config_),
        steps, width);
  }
  auto r = std::make_shared<std::vector<double>>(
      references(*weights_, control_points.value(), n_agents, n_cp, steps));
  auto p = std::make_shared<std::vector<double>>(run_tracking(*r, n_agents, steps, config_));
  const SearchConfig c = config_;
  auto w = weights_;
  ad::Var inputs[] = {control_points};
  return tape.custom(
      "search_track", inputs, *p, steps, width,
      [r, p, w, c, n_agents, n_cp, steps, width](ad::CustomGradients& g) {
        if (g.input_grads[0].empty()) return;
        const double* pbar = g.output_grad.data();
        std::vector<double> lambda(pbar + (steps - 1) * width, pbar + steps * width);
        std::vector<double> rbar(steps * width, 0.0);
        for (std::size_t k = steps - 1; k-- > 0;) {
          const double* ref = &(*r)[k * width];
          const double* pk = &(*p)[k * width];
          double* rb = &rbar[k * width];
          for (std::size_t a = 0; a < n_agents; ++a) {
            const double ex = ref[2 * a] - pk[2 * a];
            const double ey = ref[2 * a + 1] - pk[2 * a + 1];
            const double lx = lambda[2 * a];
            const double ly = lambda[2 * a + 1];
            const double n = c.kp * std::sqrt(ex * ex + ey * ey);
            double gx, gy;  // G^T lambda, G = d(step)/d(e)
            if (c.v_max / std::max(n, kNormGuard) >= 1.0) {
              gx = c.dt * c.kp * lx;
              gy = c.dt * c.kp * ly;
            } else {
              const double en = n / c.kp;
              const double hx = ex / en;
              const double hy = ey / en;
              const double s = c.dt * c.v_max / en;
              const double proj = hx * lx + hy * ly;
              gx = s * (lx - hx * proj);
              gy = s * (ly - hy * proj);
            }
            rb[2 * a] += gx;
            rb[2 * a + 1] += gy;
            lambda[2 * a] = pbar[k * width + 2 * a] + lx - gx;
            lambda[2 * a + 1] = pbar[k * width + 2 * a + 1] + ly - gy;
          }
        }
        for (std::size_t i = 0; i < width; ++i) rbar[i] += lambda[i];
        // C_bar = W^T R_bar, scattered back to the [agent][point][coord] layout.
        std::vector<double> cbar(n_cp * width, 0.0);
        kernels::active().gemm_acc(true, false, n_cp, width, steps, w->data(), rbar.data(),
                                   cbar.data());
        auto out = g.input_grads[0];
        for (std::size_t a = 0; a < n_agents; ++a)
          for (std::size_t j = 0; j < n_cp; ++j)
            for (std::size_t d = 0; d < 2; ++d)
              out[(a * n_cp + j) * 2 + d] += cbar[j * width + 2 * a + d];
      });
}

ad::Var SearchEnvironment::track_reference(ad::Tape& tape, ad::Var control_points,
                                           std::size_t n_agents) const {
  const std::size_t n_cp = config_.control_points;
  const std::size_t steps = config_.steps();
  const std::size_t width = 2 * n_agents;
  // Control points as n_agents x (n_cp*2), then per agent an n_cp x 2 block.
  std::vector<ad::Var> refs;
  ad::Var w = tape.constant(*weights_, steps, n_cp);
  for (std::size_t a = 0; a < n_agents; ++a) {
    ad::Var ca = ad::slice(control_points, a * n_cp * 2, n_cp, 2);
    refs.push_back(ad::matmul(w, ca));  // steps x 2
  }
  std::vector<ad::Var> rows;
  rows.reserve(steps);
  std::vector<ad::Var> p;
  for (std::size_t a = 0; a < n_agents; ++a) p.push_back(ad::row(refs[a], 0));
  auto stack = [&](const std::vector<ad::Var>& agents) {
    return ad::reshape(ad::concat(agents), 1, width);
  };
  rows.push_back(stack(p));
  ad::Var one = tape.constant(1.0);
  for (std::size_t k = 0; k + 1 < steps; ++k) {
    for (std::size_t a = 0; a < n_agents; ++a) {
      ad::Var u = ad::scale(ad::sub(ad::row(refs[a], k), p[a]), config_.kp);
      ad::Var n = ad::maximum(ad::norm(u), tape.constant(kNormGuard));
      ad::Var f = ad::minimum(one, ad::scale(ad::pow(n, -1.0), config_.v_max));
      p[a] = ad::add(p[a], ad::scale(ad::mul(u, f), config_.dt));
    }
    rows.push_back(stack(p));
  }
  return ad::stack_rows(rows);
}

ad::Var SearchEnvironment::score(ad::Var hiders, ad::Var seekers) const {
  const std::size_t steps = hiders.rows();
  const std::size_t nh = hiders.cols() / 2;
  const std::size_t ns = seekers.cols() / 2;
  const double b = config_.smoothing;
  ad::Var d = ad::pairwise_distances(hiders, seekers);                    // steps x (nh*ns)
  ad::Var inner = ad::smooth_min_rows(ad::reshape(d, steps * nh, ns), b);  // (steps*nh) x 1
  ad::Var per_hider = ad::transpose(ad::reshape(inner, steps, nh));        // nh x steps
  ad::Var over_time = ad::smooth_min_rows(per_hider, b);                   // nh x 1
  return ad::add_scalar(ad::sum(over_time), -static_cast<double>(nh) * config_.radius);
}

ad::Var SearchEnvironment::cost(ad::Tape& tape, ad::Var x, ad::Var y) const {
  check_dims(x.size(), y.size());
  return score(track(tape, y, config_.n_hide), track(tape, x, config_.n_seek));
}

ad::Var SearchEnvironment::costs_vs_failures(ad::Tape& tape, ad::Var x,
                                             std::span<const RealVector> ys) const {
  ad::Var seekers = track(tape, x, config_.n_seek);
  std::vector<ad::Var> parts;
  parts.reserve(ys.size());
  for (const RealVector& y : ys) {
    check_dims(x.size(), y.size());
    ad::Var hiders = tape.constant(simulate_tracking(y, config_.n_hide, config_), config_.steps(),
                                   2 * config_.n_hide);
    parts.push_back(score(hiders, seekers));
  }
  return ad::concat(parts);
}

ad::Var SearchEnvironment::costs_vs_designs(ad::Tape& tape, std::span<const RealVector> xs,
                                            ad::Var y) const {
  ad::Var hiders = track(tape, y, config_.n_hide);
  std::vector<ad::Var> parts;
  parts.reserve(xs.size());
  for (const RealVector& x : xs) {
    check_dims(x.size(), y.size());
    ad::Var seekers = tape.constant(simulate_tracking(x, config_.n_seek, config_),
                                    config_.steps(), 2 * config_.n_seek);
    parts.push_back(score(hiders, seekers));
  }
  return ad::concat(parts);
}

Trajectory SearchEnvironment::trace(std::span<const double> x, std::span<const double> y) const {
  check_dims(x.size(), y.size());
  const auto seek = simulate_tracking(x, config_.n_seek, config_);
  const auto hide = simulate_tracking(y, config_.n_hide, config_);
  const std::size_t steps = config_.steps();
  const std::size_t ws = 2 * config_.n_seek;
  const std::size_t wh = 2 * config_.n_hide;
  Trajectory t;
  t.times.resize(steps);
  t.states.resize(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    t.times[k] = static_cast<double>(k) * config_.dt;
    RealVector& s = t.states[k];
    s.assign(seek.begin() + static_cast<std::ptrdiff_t>(k * ws),
             seek.begin() + static_cast<std::ptrdiff_t>((k + 1) * ws));
    s.insert(s.end(), hide.begin() + static_cast<std::ptrdiff_t>(k * wh),
             hide.begin() + static_cast<std::ptrdiff_t>((k + 1) * wh));
  }
  return t;
}

}  // namespace fpr
