#include "fpr/samplers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fpr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double tau_at(const Stepsize& tau, std::size_t i) { return tau.size() == 1 ? tau[0] : tau[i]; }

Evaluation safe_eval(const Target& target, std::span<const double> x, bool with_gradient) {
  Evaluation e;
  try {
    e = target(x, with_gradient);
  } catch (const ad::Error&) {
    return {kNegInf, {}};
  }
  if (!std::isfinite(e.log_density)) return {kNegInf, {}};
  if (with_gradient) {
    if (e.gradient.size() != x.size()) {
      throw std::logic_error("target returned a gradient of the wrong length");
    }
    for (double g : e.gradient) {
      if (!std::isfinite(g)) return {kNegInf, {}};
    }
  }
  return e;
}

void ensure_gradient(ChainState& s, const Target& target) {
  if (s.gradient.size() == s.position.size() || s.log_density == kNegInf) return;
  Evaluation e = safe_eval(target, s.position, true);
  s.log_density = e.log_density;
  s.gradient = std::move(e.gradient);
}

bool accept(double log_ratio, Rng& rng) {
  if (log_ratio >= 0.0) return true;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  return std::log(u01(rng)) < log_ratio;
}

}  // namespace

std::string kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::Mala: return "mala";
    case KernelKind::Rmh: return "rmh";
    case KernelKind::Gd: return "gd";
  }
  return "unknown";
}

KernelKind parse_kernel(const std::string& name) {
  if (name == "mala") return KernelKind::Mala;
  if (name == "rmh") return KernelKind::Rmh;
  if (name == "gd") return KernelKind::Gd;
  throw std::invalid_argument("unknown kernel '" + name + "' (expected mala, rmh or gd)");
}

void KernelConfig::validate(std::size_t dim) const {
  if (substeps < 1) throw std::invalid_argument("substeps: must be >= 1");
  if (stepsize.size() != 1 && stepsize.size() != dim) {
    throw std::invalid_argument("stepsize: expected 1 or " + std::to_string(dim) + " entries");
  }
  for (double t : stepsize) {
    if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("stepsize: must be > 0");
  }
}

ChainState make_state(RealVector position, const Target& target, bool with_gradient) {
  ChainState s;
  Evaluation e = safe_eval(target, position, with_gradient);
  s.position = std::move(position);
  s.log_density = e.log_density;
  s.gradient = std::move(e.gradient);
  return s;
}

double mala_log_proposal(std::span<const double> from, std::span<const double> grad_from,
                         std::span<const double> to, const Stepsize& tau) {
  double s = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const double t = tau_at(tau, i);
    const double r = to[i] - from[i] - t * grad_from[i];
    s += r * r / (4.0 * t);
  }
  return -s;
}

double mala_log_acceptance(std::span<const double> x, double lp_x, std::span<const double> grad_x,
                           std::span<const double> xp, double lp_xp,
                           std::span<const double> grad_xp, const Stepsize& tau) {
  return lp_xp + mala_log_proposal(xp, grad_xp, x, tau) - lp_x -
         mala_log_proposal(x, grad_x, xp, tau);
}

double rmh_log_acceptance(double lp_x, double lp_xp) { return lp_xp - lp_x; }

ChainState mala_step(const ChainState& state, const Target& target, const Stepsize& tau, Rng& rng) {
  ChainState cur = state;
  ensure_gradient(cur, target);
  const std::size_t n = cur.position.size();
  std::normal_distribution<double> n01;
  RealVector prop(n);
  const bool have_grad = cur.gradient.size() == n;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = tau_at(tau, i);
    const double drift = have_grad ? t * cur.gradient[i] : 0.0;
    prop[i] = cur.position[i] + drift + std::sqrt(2.0 * t) * n01(rng);
  }
  ++cur.steps;
  Evaluation e = safe_eval(target, prop, true);
  if (e.log_density == kNegInf) return cur;
  double log_ratio;
  if (cur.log_density == kNegInf) {
    log_ratio = std::numeric_limits<double>::infinity();
  } else {
    log_ratio = mala_log_acceptance(cur.position, cur.log_density, cur.gradient, prop,
                                    e.log_density, e.gradient, tau);
  }
  if (accept(log_ratio, rng)) {
    cur.position = std::move(prop);
    cur.log_density = e.log_density;
    cur.gradient = std::move(e.gradient);
    ++cur.accept_count;
  }
  return cur;
}

ChainState rmh_step(const ChainState& state, const Target& target, const Stepsize& tau, Rng& rng) {
  ChainState cur = state;
  const std::size_t n = cur.position.size();
  std::normal_distribution<double> n01;
  RealVector prop(n);
  for (std::size_t i = 0; i < n; ++i) {
    prop[i] = cur.position[i] + std::sqrt(2.0 * tau_at(tau, i)) * n01(rng);
  }
  ++cur.steps;
  Evaluation e = safe_eval(target, prop, false);
  if (e.log_density == kNegInf) return cur;
  if (accept(rmh_log_acceptance(cur.log_density, e.log_density), rng)) {
    cur.position = std::move(prop);
    cur.log_density = e.log_density;
    cur.gradient.clear();
    ++cur.accept_count;
  }
  return cur;
}

ChainState gd_step(const ChainState& state, const Target& target, const Stepsize& tau) {
  ChainState cur = state;
  ensure_gradient(cur, target);
  ++cur.steps;
  const std::size_t n = cur.position.size();
  if (cur.gradient.size() != n) return cur;
  RealVector next(n);
  for (std::size_t i = 0; i < n; ++i) next[i] = cur.position[i] + tau_at(tau, i) * cur.gradient[i];
  Evaluation e = safe_eval(target, next, true);
  if (e.log_density == kNegInf) return cur;
  cur.position = std::move(next);
  cur.log_density = e.log_density;
  cur.gradient = std::move(e.gradient);
  ++cur.accept_count;
  return cur;
}

ChainRun run_chain(ChainState state, const Target& target, const KernelConfig& config, Rng& rng) {
  config.validate(state.position.size());
  const long before = state.accept_count;
  for (int m = 0; m < config.substeps; ++m) {
    switch (config.kernel) {
      case KernelKind::Mala: state = mala_step(state, target, config.stepsize, rng); break;
      case KernelKind::Rmh: state = rmh_step(state, target, config.stepsize, rng); break;
      case KernelKind::Gd: state = gd_step(state, target, config.stepsize); break;
    }
  }
  ChainRun out;
  out.acceptance_rate =
      static_cast<double>(state.accept_count - before) / static_cast<double>(config.substeps);
  out.state = std::move(state);
  return out;
}

}  // namespace fpr
