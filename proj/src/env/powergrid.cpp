#include "fpr/env/powergrid.hpp"

#include <cmath>
#include <stdexcept>

namespace fpr {

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

// L * sum([v - hi]_+ + [lo - v]_+)
ad::Var hinge(ad::Tape& tape, ad::Var v, const std::vector<double>& lo,
              const std::vector<double>& hi, double weight) {
  ad::Var over = ad::relu(ad::sub(v, tape.constant(hi)));
  ad::Var under = ad::relu(ad::sub(tape.constant(lo), v));
  return ad::scale(ad::sum(ad::add(over, under)), weight);
}

}  // namespace

void PowerGridConfig::validate() const {
  if (!(penalty >= 0.0)) throw std::invalid_argument("env.penalty: must be >= 0");
  if (!(line_state_stddev > 0.0)) throw std::invalid_argument("env.line_state_stddev: must be > 0");
  if (!(nonconvergence_cost >= 0.0)) {
    throw std::invalid_argument("env.nonconvergence_cost: must be >= 0");
  }
  if (!(flow.tolerance > 0.0)) throw std::invalid_argument("env.tolerance: must be > 0");
  if (flow.max_iterations < 1) throw std::invalid_argument("env.max_iterations: must be >= 1");
}

ComplexAdmittance line_admittance(double state, const Line& line) {
  const double s = sigmoid(state);
  return {s * line.g, s * line.b};
}

PowerGridEnvironment::PowerGridEnvironment(GridCase grid, PowerGridConfig config)
    : grid_(std::move(grid)), config_(config) {
  grid_.validate();
  config_.validate();
  layout_ = FlowLayout::of(grid_);
  RealVector lo, hi;
  for (const Generator& g : grid_.generators) {
    lo.push_back(g.pmin);
    hi.push_back(g.pmax);
  }
  for (const Generator& g : grid_.generators) {
    lo.push_back(grid_.buses[g.bus].vmin);
    hi.push_back(grid_.buses[g.bus].vmax);
  }
  for (const Load& l : grid_.loads) {
    lo.push_back(l.pmin);
    hi.push_back(l.pmax);
  }
  for (const Load& l : grid_.loads) {
    lo.push_back(l.qmin);
    hi.push_back(l.qmax);
  }
  prior_x_ = std::make_shared<SmoothedUniformBox>(lo, hi, config_.prior_tail);
  prior_y_ = std::make_shared<DiagonalGaussian>(RealVector(dim_y(), config_.line_state_mean),
                                                RealVector(dim_y(), config_.line_state_stddev));
}

std::size_t PowerGridEnvironment::dim_x() const {
  return 2 * grid_.generators.size() + 2 * grid_.loads.size();
}

void PowerGridEnvironment::bus_targets(std::span<const double> x, std::span<double> p_spec,
                                       std::span<double> q_spec, std::span<double> v_set) const {
  std::fill(p_spec.begin(), p_spec.end(), 0.0);
  std::fill(q_spec.begin(), q_spec.end(), 0.0);
  std::fill(v_set.begin(), v_set.end(), 1.0);
  for (std::size_t g = 0; g < grid_.generators.size(); ++g) {
    const std::size_t bus = grid_.generators[g].bus;
    p_spec[bus] += x[pg_offset() + g];
    v_set[bus] = x[vg_offset() + g];
  }
  for (std::size_t l = 0; l < grid_.loads.size(); ++l) {
    const std::size_t bus = grid_.loads[l].bus;
    p_spec[bus] -= x[pl_offset() + l];
    q_spec[bus] -= x[ql_offset() + l];
  }
}

PowerFlowSolution PowerGridEnvironment::solve(std::span<const double> x,
                                              std::span<const double> y) const {
  check_dims(x.size(), y.size());
  std::vector<double> scale(y.size());
  for (std::size_t l = 0; l < y.size(); ++l) scale[l] = sigmoid(y[l]);
  const Admittance adm = build_admittance(grid_, scale);
  const std::size_t n = grid_.buses.size();
  std::vector<double> p(n), q(n), v(n);
  bus_targets(x, p, q, v);
  return solve_power_flow(grid_, adm, p, q, v, config_.flow);
}

ad::Var PowerGridEnvironment::flow_graph(ad::Tape& tape, ad::Var z) const {
  const std::size_t nb = grid_.buses.size();
  const std::size_t na = layout_.angle_buses.size();
  const std::size_t nm = layout_.magnitude_buses.size();
  const std::size_t nu = na + nm;
  const std::size_t nx = dim_x();
  const std::size_t ny = dim_y();
  if (z.size() != nu + nx + ny) throw ad::ShapeError("flow_graph: z has the wrong length");

  // |V| and theta per bus from unknowns and generator setpoints.
  std::vector<std::uint32_t> vm_src, vm_dst, va_src, va_dst;
  for (std::size_t r = 0; r < nm; ++r) {
    vm_src.push_back(u32(na + r));
    vm_dst.push_back(u32(layout_.magnitude_buses[r]));
  }
  for (std::size_t g = 0; g < grid_.generators.size(); ++g) {
    vm_src.push_back(u32(nu + vg_offset() + g));
    vm_dst.push_back(u32(grid_.generators[g].bus));
  }
  for (std::size_t r = 0; r < na; ++r) {
    va_src.push_back(u32(r));
    va_dst.push_back(u32(layout_.angle_buses[r]));
  }
  ad::Var vm = ad::scatter_add(ad::gather(z, vm_src), vm_dst, nb);
  ad::Var va = ad::scatter_add(ad::gather(z, va_src), va_dst, nb);

  // G and B from sigmoid(line state) times nominal values.
  std::vector<std::uint32_t> line_of, pos;
  std::vector<double> gs, bs;
  for (std::size_t l = 0; l < grid_.lines.size(); ++l) {
    const Line& ln = grid_.lines[l];
    const std::size_t f = ln.from, t = ln.to;
    const std::size_t entries[] = {f * nb + f, t * nb + t, f * nb + t, t * nb + f};
    const double sign[] = {1.0, 1.0, -1.0, -1.0};
    for (int k = 0; k < 4; ++k) {
      line_of.push_back(u32(l));
      pos.push_back(u32(entries[k]));
      gs.push_back(sign[k] * ln.g);
      bs.push_back(sign[k] * ln.b);
    }
  }
  ad::Var spread = ad::gather(ad::sigmoid(ad::slice(z, nu + nx, ny)), line_of);
  ad::Var gmat = ad::reshape(ad::scatter_add(ad::mul(spread, tape.constant(gs)), pos, nb * nb), nb, nb);
  ad::Var bmat = ad::reshape(ad::scatter_add(ad::mul(spread, tape.constant(bs)), pos, nb * nb), nb, nb);

  ad::Var theta = ad::sub(va, ad::transpose(va));  // theta_i - theta_k
  ad::Var c = ad::cos(theta);
  ad::Var s = ad::sin(theta);
  ad::Var mp = ad::add(ad::mul(gmat, c), ad::mul(bmat, s));
  ad::Var mq = ad::sub(ad::mul(gmat, s), ad::mul(bmat, c));
  ad::Var p = ad::mul(vm, ad::matmul(mp, vm));
  ad::Var q = ad::mul(vm, ad::matmul(mq, vm));

  // Targets: +P_g at generator buses, -P_l / -Q_l at load buses.
  std::vector<std::uint32_t> ps_src, ps_dst, qs_src, qs_dst;
  std::vector<double> ps_sign;
  for (std::size_t g = 0; g < grid_.generators.size(); ++g) {
    ps_src.push_back(u32(nu + pg_offset() + g));
    ps_dst.push_back(u32(grid_.generators[g].bus));
    ps_sign.push_back(1.0);
  }
  for (std::size_t l = 0; l < grid_.loads.size(); ++l) {
    ps_src.push_back(u32(nu + pl_offset() + l));
    ps_dst.push_back(u32(grid_.loads[l].bus));
    ps_sign.push_back(-1.0);
    qs_src.push_back(u32(nu + ql_offset() + l));
    qs_dst.push_back(u32(grid_.loads[l].bus));
  }
  ad::Var p_spec =
      ad::scatter_add(ad::mul(ad::gather(z, ps_src), tape.constant(ps_sign)), ps_dst, nb);

  std::vector<ad::Var> parts;
  std::vector<std::uint32_t> angle_idx(layout_.angle_buses.begin(), layout_.angle_buses.end());
  std::vector<std::uint32_t> mag_idx(layout_.magnitude_buses.begin(), layout_.magnitude_buses.end());
  if (na > 0) parts.push_back(ad::gather(ad::sub(p, p_spec), angle_idx));
  if (nm > 0) {
    ad::Var q_mis = q;
    if (!qs_src.empty()) {
      q_mis = ad::add(q, ad::scatter_add(ad::gather(z, qs_src), qs_dst, nb));
    }
    parts.push_back(ad::gather(q_mis, mag_idx));
  }
  parts.push_back(vm);
  parts.push_back(va);
  parts.push_back(p);
  parts.push_back(q);
  return ad::concat(parts);
}

ad::Var PowerGridEnvironment::flow_state(ad::Tape& tape, ad::Var x, ad::Var y,
                                         const PowerFlowSolution& sol) const {
  const std::size_t nb = grid_.buses.size();
  const std::size_t na = layout_.angle_buses.size();
  const std::size_t nm = layout_.magnitude_buses.size();
  const std::size_t nu = na + nm;
  std::vector<double> z;
  z.reserve(nu + x.size() + y.size());
  for (std::size_t b : layout_.angle_buses) z.push_back(sol.va[b]);
  for (std::size_t b : layout_.magnitude_buses) z.push_back(sol.vm[b]);
  z.insert(z.end(), x.value().begin(), x.value().end());
  z.insert(z.end(), y.value().begin(), y.value().end());

  std::vector<double> out;
  out.reserve(4 * nb);
  for (const auto* v : {&sol.vm, &sol.va, &sol.p, &sol.q}) out.insert(out.end(), v->begin(), v->end());

  const std::vector<double> vm = sol.vm, va = sol.va;
  const std::size_t nx = x.size(), ny = y.size();
  ad::Var inputs[] = {x, y};
  return tape.custom(
      "power_flow", inputs, std::move(out), 4 * nb, 1,
      [this, z, vm, va, nu, nx, ny, nb](ad::CustomGradients& g) {
        auto xbar = g.input_grads[0];
        auto ybar = g.input_grads[1];
        if (xbar.empty() && ybar.empty()) return;
        ad::Tape sub;
        ad::Var zv = sub.variable(z);
        ad::Var graph = flow_graph(sub, zv);
        // Sweep 1: direct dependence of the outputs on (u, x, y).
        std::vector<double> cot(nu + 4 * nb, 0.0);
        std::copy(g.output_grad.begin(), g.output_grad.end(), cot.begin() + nu);
        sub.backward(graph, cot);
        const auto direct = sub.grad(zv);
        std::vector<double> total(direct.begin() + nu, direct.end());
        // Adjoint: J^T lambda = d(out)/du, then subtract lambda^T dF/d(x, y).
        Eigen::VectorXd ubar(static_cast<Eigen::Index>(nu));
        for (std::size_t i = 0; i < nu; ++i) ubar(i) = direct[i];
        if (nu > 0) {
          std::vector<double> scale(ny);
          for (std::size_t l = 0; l < ny; ++l) scale[l] = sigmoid(z[nu + nx + l]);
          const Admittance adm = build_admittance(grid_, scale);
          const Eigen::MatrixXd jac = power_flow_jacobian(layout_, adm, vm, va);
          const Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac.transpose());
          if (!(lu.rcond() > 1e-14)) {
            throw ad::SingularMatrixError("power_flow: singular Jacobian in the adjoint solve");
          }
          const Eigen::VectorXd lambda = lu.solve(ubar);
          std::fill(cot.begin(), cot.end(), 0.0);
          for (std::size_t i = 0; i < nu; ++i) cot[i] = -lambda(i);
          sub.backward(graph, cot);
          const auto implicit = sub.grad(zv);
          for (std::size_t i = 0; i < total.size(); ++i) total[i] += implicit[nu + i];
        }
        for (std::size_t i = 0; i < xbar.size(); ++i) xbar[i] += total[i];
        for (std::size_t i = 0; i < ybar.size(); ++i) ybar[i] += total[nx + i];
      });
}

ad::Var PowerGridEnvironment::cost_from_state(ad::Tape& tape, ad::Var x, ad::Var state) const {
  const std::size_t nb = grid_.buses.size();
  const std::size_t ng = grid_.generators.size();
  const std::size_t nl = grid_.loads.size();
  const std::size_t nx = dim_x();
  const double base = grid_.base_mva;
  const double l_pen = config_.penalty;
  ad::Var parts[] = {x, state};
  ad::Var z = ad::concat(parts);
  const std::size_t p_at = nx + 2 * nb;
  const std::size_t q_at = nx + 3 * nb;
  const std::size_t slack = grid_.slack();

  // P_g: the design value, except at the slack bus where it is back-computed
  // from the solved injection plus the local load. Q_g is always back-computed.
  std::vector<std::uint32_t> pg_src, pg_dst, qg_src, qg_dst;
  for (std::size_t g = 0; g < ng; ++g) {
    const std::size_t bus = grid_.generators[g].bus;
    const std::size_t l = grid_.load_at(bus);
    if (bus == slack) {
      pg_src.push_back(u32(p_at + bus));
      pg_dst.push_back(u32(g));
      if (l != GridCase::npos) {
        pg_src.push_back(u32(pl_offset() + l));
        pg_dst.push_back(u32(g));
      }
    } else {
      pg_src.push_back(u32(pg_offset() + g));
      pg_dst.push_back(u32(g));
    }
    qg_src.push_back(u32(q_at + bus));
    qg_dst.push_back(u32(g));
    if (l != GridCase::npos) {
      qg_src.push_back(u32(ql_offset() + l));
      qg_dst.push_back(u32(g));
    }
  }
  ad::Var pg = ad::scatter_add(ad::gather(z, pg_src), pg_dst, ng);
  ad::Var qg = ad::scatter_add(ad::gather(z, qg_src), qg_dst, ng);

  std::vector<double> c2(ng), c1(ng), pmin(ng), pmax(ng), qmin(ng), qmax(ng);
  double c0 = 0.0;
  for (std::size_t g = 0; g < ng; ++g) {
    const Generator& gen = grid_.generators[g];
    c2[g] = gen.c2 * base * base;
    c1[g] = gen.c1 * base;
    c0 += gen.c0;
    pmin[g] = gen.pmin;
    pmax[g] = gen.pmax;
    qmin[g] = gen.qmin;
    qmax[g] = gen.qmax;
  }
  ad::Var cost = ad::add_scalar(
      ad::sum(ad::add(ad::mul(tape.constant(c2), ad::square(pg)), ad::mul(tape.constant(c1), pg))),
      c0);
  cost = ad::add(cost, hinge(tape, pg, pmin, pmax, l_pen));
  cost = ad::add(cost, hinge(tape, qg, qmin, qmax, l_pen));

  if (nl > 0) {
    ad::Var pl = ad::slice(x, pl_offset(), nl);
    ad::Var ql = ad::slice(x, ql_offset(), nl);
    std::vector<double> c2p(nl), c1p(nl), c2q(nl), c1q(nl), plo(nl), phi(nl), qlo(nl), qhi(nl);
    for (std::size_t l = 0; l < nl; ++l) {
      const Load& ld = grid_.loads[l];
      c2p[l] = ld.c2p * base * base;
      c1p[l] = ld.c1p * base;
      c2q[l] = ld.c2q * base * base;
      c1q[l] = ld.c1q * base;
      plo[l] = ld.pmin;
      phi[l] = ld.pmax;
      qlo[l] = ld.qmin;
      qhi[l] = ld.qmax;
    }
    ad::Var load_cost = ad::add(
        ad::add(ad::mul(tape.constant(c2p), ad::square(pl)), ad::mul(tape.constant(c1p), pl)),
        ad::add(ad::mul(tape.constant(c2q), ad::square(ql)), ad::mul(tape.constant(c1q), ql)));
    cost = ad::add(cost, ad::sum(load_cost));
    cost = ad::add(cost, hinge(tape, pl, plo, phi, l_pen));
    cost = ad::add(cost, hinge(tape, ql, qlo, qhi, l_pen));
  }

  std::vector<double> vmin(nb), vmax(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    vmin[i] = grid_.buses[i].vmin;
    vmax[i] = grid_.buses[i].vmax;
  }
  cost = ad::add(cost, hinge(tape, ad::slice(state, 0, nb), vmin, vmax, l_pen));
  return cost;
}

ad::Var PowerGridEnvironment::cost(ad::Tape& tape, ad::Var x, ad::Var y) const {
  const PowerFlowSolution sol = solve(x.value(), y.value());
  if (!sol.converged || sol.singular) {
    // No gradient from a solve that did not converge.
    return tape.constant(config_.nonconvergence_cost + sol.residual);
  }
  return cost_from_state(tape, x, flow_state(tape, x, y, sol));
}

Trajectory PowerGridEnvironment::trace(std::span<const double> x,
                                       std::span<const double> y) const {
  const PowerFlowSolution sol = solve(x, y);
  Trajectory t;
  t.times.push_back(0.0);
  RealVector state;
  for (const auto* v : {&sol.vm, &sol.va, &sol.p, &sol.q}) state.insert(state.end(), v->begin(), v->end());
  t.states.push_back(std::move(state));
  return t;
}

}  // namespace fpr
