#include "fpr/env/formation.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fpr/kernels/kernels.hpp"

namespace fpr {

namespace {

// Plain-double wind network over raw parameter storage. Activations keep the
// unscaled tanh outputs; the force is scale * (last activation).
class WindNet {
 public:
  WindNet(const std::vector<std::size_t>& hidden, double cap) : scale_(cap / std::numbers::sqrt2) {
    sizes_.push_back(2);
    sizes_.insert(sizes_.end(), hidden.begin(), hidden.end());
    sizes_.push_back(2);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(off);
      off += sizes_[l] * sizes_[l + 1];
      b_off_.push_back(off);
      off += sizes_[l + 1];
      act_off_.push_back(act_width_);
      act_width_ += sizes_[l + 1];
    }
    params_ = off;
  }

  std::size_t parameter_count() const { return params_; }
  // Activation storage per agent.
  std::size_t activation_width() const { return act_width_; }
  double scale() const { return scale_; }

  // acts: n x activation_width (layer blocks stored one after another).
  void forward(const double* theta, const double* p, std::size_t n, double* acts) const {
    const double* in = p;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const std::size_t din = sizes_[l];
      const std::size_t dout = sizes_[l + 1];
      double* z = acts + n * act_off_[l];
      for (std::size_t i = 0; i < n; ++i) std::copy_n(theta + b_off_[l], dout, z + i * dout);
      kernels::active().gemm_acc(false, false, n, dout, din, in, theta + w_off_[l], z);
      kernels::tanh(z, z, n * dout);
      in = z;
    }
  }

  const double* output(const double* acts, std::size_t n) const {
    return acts + n * act_off_.back();
  }

  // Accumulates p_bar (n x 2) and, when theta_bar is non-null, theta_bar
  // from the force cotangent f_bar (n x 2).
  void backward(const double* theta, const double* p, std::size_t n, const double* acts,
                const double* f_bar, double* p_bar, double* theta_bar,
                std::vector<double>& scratch) const {
    const std::size_t layers = sizes_.size() - 1;
    std::size_t widest = 0;
    for (std::size_t s : sizes_) widest = std::max(widest, s);
    scratch.assign(2 * n * widest, 0.0);
    double* zbar = scratch.data();
    double* hbar = scratch.data() + n * widest;
    for (std::size_t i = 0; i < 2 * n; ++i) hbar[i] = scale_ * f_bar[i];
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t din = sizes_[l];
      const std::size_t dout = sizes_[l + 1];
      const double* a = acts + n * act_off_[l];
      for (std::size_t i = 0; i < n * dout; ++i) zbar[i] = hbar[i] * (1.0 - a[i] * a[i]);
      const double* in = l == 0 ? p : acts + n * act_off_[l - 1];
      const auto& k = kernels::active();
      if (theta_bar != nullptr) {
        k.gemm_acc(true, false, din, dout, n, in, zbar, theta_bar + w_off_[l]);
        for (std::size_t i = 0; i < n; ++i) k.axpy(1.0, zbar + i * dout, theta_bar + b_off_[l], dout);
      }
      double* target = l == 0 ? p_bar : hbar;
      if (l != 0) std::fill_n(hbar, n * din, 0.0);
      k.gemm_acc(false, true, n, din, dout, zbar, theta + w_off_[l], target);
    }
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> w_off_, b_off_, act_off_;
  std::size_t act_width_ = 0;
  std::size_t params_ = 0;
  double scale_;
};

constexpr double kLinkSharpness = 20.0;

double link_value(double d2, double radius) {
  const double z = kLinkSharpness * (radius * radius - d2);
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

std::size_t FormationConfig::steps() const {
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

std::size_t FormationConfig::wind_parameter_count() const {
  std::size_t in = 2;
  std::size_t count = 0;
  for (std::size_t h : hidden) {
    count += in * h + h;
    in = h;
  }
  return count + in * 2 + 2;
}

void FormationConfig::validate() const {
  if (n_agents < 2) throw std::invalid_argument("env.n_agents: must be >= 2");
  if (control_points < 2) throw std::invalid_argument("env.control_points: must be >= 2");
  if (!(comm_radius > 0.0)) throw std::invalid_argument("env.comm_radius: must be > 0");
  if (!(dt > 0.0) || !(horizon >= 2.0 * dt)) {
    throw std::invalid_argument("env.dt / env.horizon: need dt > 0 and at least two steps");
  }
  if (!(mass > 0.0)) throw std::invalid_argument("env.mass: must be > 0");
  if (hidden.empty()) throw std::invalid_argument("env.hidden: need at least one hidden layer");
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("env.hidden: layer widths must be >= 1");
  }
  if (!(wind_cap >= 0.0)) throw std::invalid_argument("env.wind_cap: must be >= 0");
  if (!(smoothing > 0.0)) throw std::invalid_argument("env.smoothing: must be > 0");
  if (!(connectivity_floor > 0.0)) {
    throw std::invalid_argument("env.connectivity_floor: must be > 0");
  }
  if (!(half_extent > 0.0)) throw std::invalid_argument("env.half_extent: must be > 0");
  if (!(bias_stddev > 0.0)) throw std::invalid_argument("env.bias_stddev: must be > 0");
}

ad::Var wind_force(ad::Tape& tape, ad::Var params, ad::Var positions,
                   const std::vector<std::size_t>& hidden, double wind_cap) {
  (void)tape;
  std::size_t off = 0;
  std::size_t in = 2;
  ad::Var h = positions;
  auto layer = [&](std::size_t out, bool last) {
    ad::Var w = ad::slice(params, off, in, out);
    off += in * out;
    ad::Var b = ad::slice(params, off, 1, out);
    off += out;
    ad::Var z = ad::tanh(ad::add(ad::matmul(h, w), b));
    in = out;
    // Components of cap/sqrt(2) * tanh keep the force norm below the cap.
    return last ? ad::scale(z, wind_cap / std::numbers::sqrt2) : z;
  };
  for (std::size_t width : hidden) h = layer(width, false);
  h = layer(2, true);
  if (off != params.size()) throw ad::ShapeError("wind_force: parameter count mismatch");
  return h;
}

ad::Var adjacency(ad::Var positions, ad::Var weights, double radius) {
  ad::Var gram = ad::matmul(positions, positions, false, true);
  ad::Var sq = ad::sum_rows(ad::square(positions));
  ad::Var d2 = ad::sub(ad::add(sq, ad::transpose(sq)), ad::scale(gram, 2.0));
  ad::Var link = ad::sigmoid(
      ad::add_scalar(ad::scale(d2, -kLinkSharpness), kLinkSharpness * radius * radius));
  return ad::mul(weights, link);
}

ad::Var lambda2(ad::Tape& tape, ad::Var a) {
  const std::size_t n = a.rows();
  if (a.cols() != n || n < 2) throw ad::ShapeError("lambda2: need a square matrix, n >= 2");
  std::vector<std::uint32_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = static_cast<std::uint32_t>(i * n + i);
  ad::Var degree = ad::reshape(ad::scatter_add(ad::sum_rows(a), diag, n * n), n, n);
  ad::Var lap = ad::sub(degree, a);
  // The constant vector is always in the null space of L. Lifting its
  // eigenvalue above the spectrum (c > trace >= lambda_max) makes lambda_2 the
  // smallest eigenvalue of L + c/n * 1 1^T without changing it or its
  // derivative, and removes the structural tie with lambda_1 = 0.
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += std::abs(lap[i * n + i]);
  const std::vector<double> lift(n * n, (trace + 1.0) / static_cast<double>(n));
  return ad::element(ad::sym_eigvals(ad::add(lap, tape.constant(lift, n, n))), 0);
}

ad::Var lambda2_series(ad::Tape& tape, ad::Var positions, ad::Var weights, double radius) {
  const std::size_t steps = positions.rows();
  const std::size_t n = positions.cols() / 2;
  if (positions.cols() != 2 * n || n < 2 || weights.rows() != n || weights.cols() != n) {
    throw ad::ShapeError("lambda2_series: need steps x 2n positions and n x n weights");
  }
  const auto p = positions.value();
  const auto w = weights.value();
  // Per step: lambda2, its eigenvector, the gap to lambda3 and the links.
  auto vecs = std::make_shared<std::vector<double>>(steps * n);
  auto gaps = std::make_shared<std::vector<double>>(steps);
  auto links = std::make_shared<std::vector<double>>(steps * n * n);
  std::vector<double> out(steps);
  Eigen::MatrixXd lap(n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < steps; ++k) {
    const double* pk = p.data() + k * 2 * n;
    double* lk = links->data() + k * n * n;
    lap.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dx = pk[2 * i] - pk[2 * j];
        const double dy = pk[2 * i + 1] - pk[2 * j + 1];
        lk[i * n + j] = link_value(dx * dx + dy * dy, radius);
        if (i == j) continue;
        const double a = w[i * n + j] * lk[i * n + j];
        lap(i, j) -= a;
        lap(i, i) += a;
      }
    }
    lap = (0.5 * (lap + lap.transpose())).eval();
    // Same lift as lambda2(): moves the constant null vector to the top.
    const double lift = (lap.diagonal().cwiseAbs().sum() + 1.0) / static_cast<double>(n);
    lap.array() += lift;
    eig.compute(lap);
    if (eig.info() != Eigen::Success) {
      throw ad::NonFiniteError("lambda2_series", "eigen decomposition failed");
    }
    out[k] = eig.eigenvalues()(0);
    (*gaps)[k] = eig.eigenvalues()(1) - eig.eigenvalues()(0);
    for (std::size_t i = 0; i < n; ++i) (*vecs)[k * n + i] = eig.eigenvectors()(i, 0);
  }
  ad::Var inputs[] = {positions, weights};
  auto pv = std::make_shared<std::vector<double>>(p.begin(), p.end());
  auto wv = std::make_shared<std::vector<double>>(w.begin(), w.end());
  return tape.custom(
      "lambda2_series", inputs, out, steps, 1,
      [steps, n, vecs, gaps, links, pv, wv](ad::CustomGradients& g) {
        auto pbar = g.input_grads[0];
        auto wbar = g.input_grads[1];
        for (std::size_t k = 0; k < steps; ++k) {
          const double lb = g.output_grad[k];
          if (lb == 0.0) continue;
          if ((*gaps)[k] <= ad::kEigenGapTolerance) {
            throw ad::RepeatedEigenvalueError(
                "lambda2_series: lambda2 at step " + std::to_string(k) +
                " is repeated; its derivative is undefined");
          }
          const double* v = vecs->data() + k * n;
          const double* pk = pv->data() + k * 2 * n;
          const double* lk = links->data() + k * n * n;
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              if (i == j) continue;
              // d lambda / d A_ij for the entry (i, j) of A in L = D - A.
              const double abar = lb * (v[i] * v[i] - v[i] * v[j]);
              const double wij = (*wv)[i * n + j];
              if (!wbar.empty()) wbar[i * n + j] += abar * lk[i * n + j];
              if (!pbar.empty()) {
                const double l = lk[i * n + j];
                const double c = abar * wij * (-kLinkSharpness) * l * (1.0 - l) * 2.0;
                const double dx = pk[2 * i] - pk[2 * j];
                const double dy = pk[2 * i + 1] - pk[2 * j + 1];
                double* pb = pbar.data() + k * 2 * n;
                pb[2 * i] += c * dx;
                pb[2 * i + 1] += c * dy;
                pb[2 * j] -= c * dx;
                pb[2 * j + 1] -= c * dy;
              }
            }
          }
        }
      });
}

ad::Var pair_weights(ad::Tape& tape, ad::Var strengths, std::size_t n) {
  (void)tape;
  if (strengths.size() != n * (n - 1) / 2) throw ad::ShapeError("pair_weights: count mismatch");
  std::vector<std::uint32_t> from, to;
  std::uint32_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      from.push_back(k);
      from.push_back(k);
      to.push_back(static_cast<std::uint32_t>(i * n + j));
      to.push_back(static_cast<std::uint32_t>(j * n + i));
    }
  }
  ad::Var doubled = ad::gather(ad::sigmoid(strengths), from);
  return ad::reshape(ad::scatter_add(doubled, to, n * n), n, n);
}

namespace {

ad::Var goal_miss(ad::Tape& tape, ad::Var last, const FormationConfig& c) {
  const double goal[] = {c.goal_x, c.goal_y};
  ad::Var com = ad::scale(ad::sum_cols(last), 1.0 / static_cast<double>(last.rows()));
  return ad::scale(ad::norm(ad::sub(com, tape.constant(goal, 1, 2))), c.goal_weight);
}

}  // namespace

ad::Var formation_score(ad::Tape& tape, ad::Var positions, ad::Var weights,
                        const FormationConfig& c) {
  const std::size_t n = positions.cols() / 2;
  ad::Var l2 = lambda2_series(tape, positions, weights, c.comm_radius);
  ad::Var inverse = ad::pow(ad::add_scalar(l2, c.connectivity_floor), -1.0);
  ad::Var last = ad::reshape(ad::row(positions, positions.rows() - 1), n, 2);
  return ad::add(goal_miss(tape, last, c), ad::smooth_max(inverse, c.smoothing));
}

ad::Var formation_score_reference(ad::Tape& tape, std::span<const ad::Var> positions,
                                  ad::Var weights, const FormationConfig& c) {
  std::vector<ad::Var> inverse;
  inverse.reserve(positions.size());
  for (const ad::Var& q : positions) {
    ad::Var l2 = lambda2(tape, adjacency(q, weights, c.comm_radius));
    inverse.push_back(ad::pow(ad::add_scalar(l2, c.connectivity_floor), -1.0));
  }
  ad::Var connectivity = ad::smooth_max(ad::concat(inverse), c.smoothing);
  return ad::add(goal_miss(tape, positions.back(), c), connectivity);
}

FormationEnvironment::FormationEnvironment(FormationConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t steps = config_.steps();
  weights_ = bernstein_matrix(steps, config_.control_points);
  weights_dot_ = bernstein_derivative_matrix(steps, config_.control_points);
  const double span_s = static_cast<double>(steps - 1) * config_.dt;
  for (double& w : weights_dot_) w /= span_s;

  const std::size_t nx = dim_x();
  prior_x_ = std::make_shared<SmoothedUniformBox>(RealVector(nx, -config_.half_extent),
                                                  RealVector(nx, config_.half_extent),
                                                  config_.prior_tail);
  RealVector stddev;
  std::size_t in = 2;
  auto add_layer = [&](std::size_t out) {
    stddev.insert(stddev.end(), in * out, 1.0 / std::sqrt(static_cast<double>(in)));
    stddev.insert(stddev.end(), out, config_.bias_stddev);
    in = out;
  };
  for (std::size_t h : config_.hidden) add_layer(h);
  add_layer(2);
  stddev.insert(stddev.end(), config_.pair_count(), 1.0);
  prior_y_ = std::make_shared<DiagonalGaussian>(RealVector(stddev.size(), 0.0), stddev);

  const std::size_t n = config_.n_agents;
  const std::size_t cp = config_.control_points;
  order_.resize(cp * 2 * n);
  for (std::size_t j = 0; j < cp; ++j)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t d = 0; d < 2; ++d)
        order_[j * 2 * n + 2 * a + d] = static_cast<std::uint32_t>((a * cp + j) * 2 + d);
}

std::size_t FormationEnvironment::dim_x() const {
  return 2 * config_.control_points * config_.n_agents;
}

std::size_t FormationEnvironment::dim_y() const {
  return config_.wind_parameter_count() + config_.pair_count();
}

std::vector<ad::Var> FormationEnvironment::simulate_reference(ad::Tape& tape, ad::Var x,
                                                             ad::Var y) const {
  check_dims(x.size(), y.size());
  const FormationConfig& c = config_;
  const std::size_t n = c.n_agents;
  const std::size_t cp = c.control_points;
  const std::size_t steps = c.steps();
  ad::Var w = tape.constant(weights_, steps, cp);
  ad::Var wd = tape.constant(weights_dot_, steps, cp);
  ad::Var cmat = ad::reshape(ad::gather(x, order_), cp, 2 * n);
  ad::Var ref = ad::matmul(w, cmat);       // steps x 2n
  ad::Var ref_dot = ad::matmul(wd, cmat);  // steps x 2n
  ad::Var wind_params = ad::slice(y, 0, c.wind_parameter_count());

  std::vector<ad::Var> positions;
  positions.reserve(steps);
  ad::Var p = ad::reshape(ad::row(ref, 0), n, 2);
  const std::vector<double> zero(2 * n, 0.0);
  ad::Var v = tape.constant(zero, n, 2);
  positions.push_back(p);
  const double inv_m = 1.0 / c.mass;
  for (std::size_t k = 0; k + 1 < steps; ++k) {
    ad::Var r = ad::reshape(ad::row(ref, k), n, 2);
    ad::Var rd = ad::reshape(ad::row(ref_dot, k), n, 2);
    ad::Var force = wind_force(tape, wind_params, p, c.hidden, c.wind_cap);
    ad::Var acc = ad::add(ad::add(ad::scale(ad::sub(r, p), c.kp), ad::scale(ad::sub(rd, v), c.kd)),
                          ad::scale(force, inv_m));
    v = ad::add(v, ad::scale(acc, c.dt));
    p = ad::add(p, ad::scale(v, c.dt));
    positions.push_back(p);
  }
  return positions;
}

ad::Var FormationEnvironment::rollout(ad::Tape& tape, ad::Var x, ad::Var y) const {
  check_dims(x.size(), y.size());
  const FormationConfig c = config_;
  const std::size_t n = c.n_agents;
  const std::size_t cp = c.control_points;
  const std::size_t steps = c.steps();
  const std::size_t width = 2 * n;
  const auto& k = kernels::active();

  std::vector<double> cmat(cp * width);
  const auto xv = x.value();
  for (std::size_t i = 0; i < cmat.size(); ++i) cmat[i] = xv[order_[i]];
  std::vector<double> ref(steps * width, 0.0), ref_dot(steps * width, 0.0);
  k.gemm_acc(false, false, steps, width, cp, weights_.data(), cmat.data(), ref.data());
  k.gemm_acc(false, false, steps, width, cp, weights_dot_.data(), cmat.data(), ref_dot.data());

  const WindNet net(c.hidden, c.wind_cap);
  const std::size_t nt = net.parameter_count();
  auto theta = std::make_shared<std::vector<double>>(y.value().begin(), y.value().begin() + nt);
  const std::size_t act = n * net.activation_width();
  auto acts = std::make_shared<std::vector<double>>((steps - 1) * act);
  auto pos = std::make_shared<std::vector<double>>(steps * width);

  std::vector<double> p(ref.begin(), ref.begin() + width), v(width, 0.0);
  std::copy(p.begin(), p.end(), pos->begin());
  const double inv_m = 1.0 / c.mass;
  for (std::size_t s = 0; s + 1 < steps; ++s) {
    double* a = acts->data() + s * act;
    net.forward(theta->data(), p.data(), n, a);
    const double* f = net.output(a, n);
    const double* r = ref.data() + s * width;
    const double* rd = ref_dot.data() + s * width;
    for (std::size_t i = 0; i < width; ++i) {
      const double acc = c.kp * (r[i] - p[i]) + c.kd * (rd[i] - v[i]) + net.scale() * f[i] * inv_m;
      v[i] += c.dt * acc;
      p[i] += c.dt * v[i];
    }
    std::copy(p.begin(), p.end(), pos->begin() + (s + 1) * width);
  }

  ad::Var wind = ad::slice(y, 0, nt);
  ad::Var inputs[] = {x, wind};
  auto w = std::make_shared<const std::vector<double>>(weights_);
  auto wd = std::make_shared<const std::vector<double>>(weights_dot_);
  auto order = std::make_shared<const std::vector<std::uint32_t>>(order_);
  return tape.custom(
      "formation_rollout", inputs, *pos, steps, width,
      [=](ad::CustomGradients& g) {
        auto xbar = g.input_grads[0];
        auto tbar = g.input_grads[1];
        if (xbar.empty() && tbar.empty()) return;
        const auto& kk = kernels::active();
        const WindNet wn(c.hidden, c.wind_cap);
        const double* pbar_out = g.output_grad.data();
        std::vector<double> rbar(steps * width, 0.0), rdbar(steps * width, 0.0);
        std::vector<double> pb(pbar_out + (steps - 1) * width, pbar_out + steps * width);
        std::vector<double> vb(width, 0.0), fb(width), scratch;
        for (std::size_t s = steps - 1; s-- > 0;) {
          // p_{s+1} = p_s + dt v_{s+1};  v_{s+1} = v_s + dt acc_s
          for (std::size_t i = 0; i < width; ++i) {
            vb[i] += c.dt * pb[i];
            const double ab = c.dt * vb[i];
            rbar[s * width + i] += c.kp * ab;
            rdbar[s * width + i] += c.kd * ab;
            pb[i] -= c.kp * ab;
            vb[i] -= c.kd * ab;
            fb[i] = ab * inv_m;
          }
          const double* ps = pos->data() + s * width;
          wn.backward(theta->data(), ps, n, acts->data() + s * act, fb.data(), pb.data(),
                      tbar.empty() ? nullptr : tbar.data(), scratch);
          for (std::size_t i = 0; i < width; ++i) pb[i] += pbar_out[s * width + i];
        }
        if (xbar.empty()) return;
        for (std::size_t i = 0; i < width; ++i) rbar[i] += pb[i];
        std::vector<double> cbar(cp * width, 0.0);
        kk.gemm_acc(true, false, cp, width, steps, w->data(), rbar.data(), cbar.data());
        kk.gemm_acc(true, false, cp, width, steps, wd->data(), rdbar.data(), cbar.data());
        for (std::size_t i = 0; i < cbar.size(); ++i) xbar[(*order)[i]] += cbar[i];
      });
}

ad::Var FormationEnvironment::cost(ad::Tape& tape, ad::Var x, ad::Var y) const {
  ad::Var positions = rollout(tape, x, y);
  ad::Var strengths = ad::slice(y, config_.wind_parameter_count(), config_.pair_count());
  return formation_score(tape, positions, pair_weights(tape, strengths, config_.n_agents),
                         config_);
}

ad::Var FormationEnvironment::cost_reference(ad::Tape& tape, ad::Var x, ad::Var y) const {
  const auto positions = simulate_reference(tape, x, y);
  ad::Var strengths = ad::slice(y, config_.wind_parameter_count(), config_.pair_count());
  return formation_score_reference(
      tape, positions, pair_weights(tape, strengths, config_.n_agents), config_);
}

Trajectory FormationEnvironment::trace(std::span<const double> x, std::span<const double> y) const {
  ad::Tape tape;
  const ad::Var positions = rollout(tape, tape.constant(x), tape.constant(y));
  const std::size_t width = positions.cols();
  Trajectory t;
  for (std::size_t k = 0; k < positions.rows(); ++k) {
    t.times.push_back(static_cast<double>(k) * config_.dt);
    const double* row = positions.value().data() + k * width;
    t.states.emplace_back(row, row + width);
  }
  return t;
}

}  // namespace fpr
