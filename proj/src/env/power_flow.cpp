#include "fpr/env/power_flow.hpp"

#include <cmath>
#include <complex>
#include <limits>

namespace fpr {

namespace {

constexpr double kSingularRcond = 1e-14;

bool is_singular(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
  const double rc = lu.rcond();
  return !(rc > kSingularRcond);
}

}  // namespace

FlowLayout FlowLayout::of(const GridCase& grid) {
  FlowLayout l;
  for (std::size_t i = 0; i < grid.buses.size(); ++i) {
    if (grid.buses[i].type != BusType::Slack) l.angle_buses.push_back(i);
    if (grid.buses[i].type == BusType::PQ) l.magnitude_buses.push_back(i);
  }
  return l;
}

Admittance build_admittance(const GridCase& grid, std::span<const double> line_scale) {
  if (line_scale.size() != grid.lines.size()) {
    throw std::invalid_argument("build_admittance: one scale per line required");
  }
  Admittance y;
  y.n = grid.buses.size();
  y.g.assign(y.n * y.n, 0.0);
  y.b.assign(y.n * y.n, 0.0);
  for (std::size_t l = 0; l < grid.lines.size(); ++l) {
    const Line& ln = grid.lines[l];
    const double g = line_scale[l] * ln.g;
    const double b = line_scale[l] * ln.b;
    const std::size_t f = ln.from, t = ln.to, n = y.n;
    y.g[f * n + f] += g;
    y.g[t * n + t] += g;
    y.g[f * n + t] -= g;
    y.g[t * n + f] -= g;
    y.b[f * n + f] += b;
    y.b[t * n + t] += b;
    y.b[f * n + t] -= b;
    y.b[t * n + f] -= b;
  }
  return y;
}

void bus_injections(const Admittance& y, std::span<const double> vm, std::span<const double> va,
                    std::span<double> p, std::span<double> q) {
  const std::size_t n = y.n;
  for (std::size_t i = 0; i < n; ++i) {
    double pi = 0.0, qi = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double gik = y.g[i * n + k];
      const double bik = y.b[i * n + k];
      if (gik == 0.0 && bik == 0.0) continue;
      const double t = va[i] - va[k];
      const double c = std::cos(t), s = std::sin(t);
      pi += vm[k] * (gik * c + bik * s);
      qi += vm[k] * (gik * s - bik * c);
    }
    p[i] = vm[i] * pi;
    q[i] = vm[i] * qi;
  }
}

Eigen::MatrixXd power_flow_jacobian(const FlowLayout& layout, const Admittance& y,
                                    std::span<const double> vm, std::span<const double> va) {
  const std::size_t n = y.n;
  std::vector<double> p(n), q(n);
  bus_injections(y, vm, va, p, q);
  const std::size_t na = layout.angle_buses.size();
  const std::size_t nm = layout.magnitude_buses.size();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(na + nm),
                                            static_cast<Eigen::Index>(na + nm));
  // dP_i/dtheta_k, dP_i/dV_k, dQ_i/dtheta_k, dQ_i/dV_k
  auto entries = [&](std::size_t i, std::size_t k, double& pt, double& pv, double& qt, double& qv) {
    const double gik = y.g[i * n + k], bik = y.b[i * n + k];
    if (i == k) {
      pt = -q[i] - bik * vm[i] * vm[i];
      pv = p[i] / vm[i] + gik * vm[i];
      qt = p[i] - gik * vm[i] * vm[i];
      qv = q[i] / vm[i] - bik * vm[i];
      return;
    }
    const double t = va[i] - va[k];
    const double c = std::cos(t), s = std::sin(t);
    pt = vm[i] * vm[k] * (gik * s - bik * c);
    pv = vm[i] * (gik * c + bik * s);
    qt = -vm[i] * vm[k] * (gik * c + bik * s);
    qv = vm[i] * (gik * s - bik * c);
  };
  double pt, pv, qt, qv;
  for (std::size_t r = 0; r < na; ++r) {
    const std::size_t i = layout.angle_buses[r];
    for (std::size_t c = 0; c < na; ++c) {
      entries(i, layout.angle_buses[c], pt, pv, qt, qv);
      j(r, c) = pt;
    }
    for (std::size_t c = 0; c < nm; ++c) {
      entries(i, layout.magnitude_buses[c], pt, pv, qt, qv);
      j(r, na + c) = pv;
    }
  }
  for (std::size_t r = 0; r < nm; ++r) {
    const std::size_t i = layout.magnitude_buses[r];
    for (std::size_t c = 0; c < na; ++c) {
      entries(i, layout.angle_buses[c], pt, pv, qt, qv);
      j(na + r, c) = qt;
    }
    for (std::size_t c = 0; c < nm; ++c) {
      entries(i, layout.magnitude_buses[c], pt, pv, qt, qv);
      j(na + r, na + c) = qv;
    }
  }
  return j;
}

PowerFlowSolution solve_power_flow(const GridCase& grid, const Admittance& y,
                                   std::span<const double> p_spec, std::span<const double> q_spec,
                                   std::span<const double> v_set,
                                   const PowerFlowOptions& options) {
  const std::size_t n = grid.buses.size();
  if (y.n != n || p_spec.size() != n || q_spec.size() != n || v_set.size() != n) {
    throw std::invalid_argument("solve_power_flow: per-bus inputs must have one entry per bus");
  }
  const FlowLayout layout = FlowLayout::of(grid);
  const std::size_t na = layout.angle_buses.size();
  const std::size_t nm = layout.magnitude_buses.size();

  PowerFlowSolution s;
  s.vm.assign(n, 1.0);
  s.va.assign(n, 0.0);
  s.p.assign(n, 0.0);
  s.q.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (grid.buses[i].type != BusType::PQ) s.vm[i] = v_set[i];
  }

  Eigen::VectorXd f(static_cast<Eigen::Index>(na + nm));
  auto residual = [&]() {
    bus_injections(y, s.vm, s.va, s.p, s.q);
    for (std::size_t r = 0; r < na; ++r) {
      f(r) = s.p[layout.angle_buses[r]] - p_spec[layout.angle_buses[r]];
    }
    for (std::size_t r = 0; r < nm; ++r) {
      f(na + r) = s.q[layout.magnitude_buses[r]] - q_spec[layout.magnitude_buses[r]];
    }
    const double norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    return std::isfinite(norm) ? norm : std::numeric_limits<double>::infinity();
  };
  auto newton_step = [&]() {
    const Eigen::MatrixXd j = power_flow_jacobian(layout, y, s.vm, s.va);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(j);
    if (is_singular(lu)) return false;
    const Eigen::VectorXd du = lu.solve(f);
    for (std::size_t r = 0; r < na; ++r) s.va[layout.angle_buses[r]] -= du(r);
    for (std::size_t r = 0; r < nm; ++r) s.vm[layout.magnitude_buses[r]] -= du(na + r);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.va[i]) || !std::isfinite(s.vm[i]) || !(s.vm[i] > 0.0)) return false;
    }
    return true;
  };

  s.residual = residual();
  while (s.residual >= options.tolerance && s.iterations < options.max_iterations) {
    ++s.iterations;
    // A failed step (singular Jacobian, non-finite or non-positive |V|)
    // leaves the last finite iterate in place.
    const PowerFlowSolution saved = s;
    double next = std::numeric_limits<double>::infinity();
    if (newton_step()) next = residual();
    if (!std::isfinite(next)) {
      s = saved;
      break;
    }
    s.residual = next;
  }
  s.converged = s.residual < options.tolerance;
  if (s.converged && options.polish && na + nm > 0) {
    const PowerFlowSolution before = s;
    double polished = std::numeric_limits<double>::infinity();
    if (newton_step()) polished = residual();
    if (polished <= before.residual) {
      s.residual = polished;
    } else {
      s = before;
    }
  }
  if (s.converged && na + nm > 0) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(power_flow_jacobian(layout, y, s.vm, s.va));
    s.singular = is_singular(lu);
  }
  return s;
}

double mismatch_norm(const GridCase& grid, const Admittance& y, std::span<const double> vm,
                     std::span<const double> va, std::span<const double> p_spec,
                     std::span<const double> q_spec) {
  const std::size_t n = y.n;
  std::vector<std::complex<double>> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::complex<double> current(0.0, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      current += std::complex<double>(y.g[i * n + k], y.b[i * n + k]) * v[k];
    }
    const std::complex<double> s = v[i] * std::conj(current);
    const BusType type = grid.buses[i].type;
    if (type != BusType::Slack) worst = std::max(worst, std::abs(s.real() - p_spec[i]));
    if (type == BusType::PQ) worst = std::max(worst, std::abs(s.imag() - q_spec[i]));
  }
  return worst;
}

}  // namespace fpr
