#include "fpr/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fpr {

void Distribution::check_dim(std::size_t n) const {
  if (n != dim()) {
    throw std::invalid_argument("distribution of dimension " + std::to_string(dim()) +
                                " evaluated at a vector of length " + std::to_string(n));
  }
}

DiagonalGaussian::DiagonalGaussian(RealVector mean, RealVector stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size()) {
    throw std::invalid_argument("DiagonalGaussian: mean and stddev lengths differ");
  }
  inv_stddev_.resize(stddev_.size());
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < stddev_.size(); ++i) {
    if (!(stddev_[i] > 0.0) || !std::isfinite(stddev_[i])) {
      throw std::invalid_argument("DiagonalGaussian: stddev entries must be positive");
    }
    inv_stddev_[i] = 1.0 / stddev_[i];
    log_norm_ -= std::log(stddev_[i]);
  }
}

DiagonalGaussian DiagonalGaussian::isotropic(std::size_t dim, double mean, double stddev) {
  return DiagonalGaussian(RealVector(dim, mean), RealVector(dim, stddev));
}

ad::Var DiagonalGaussian::log_density(ad::Tape& tape, ad::Var v) const {
  check_dim(v.size());
  ad::Var z = ad::mul(ad::sub(v, tape.constant(mean_)), tape.constant(inv_stddev_));
  return ad::add_scalar(ad::scale(ad::dot(z, z), -0.5), log_norm_);
}

double DiagonalGaussian::log_density(std::span<const double> v) const {
  check_dim(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double z = (v[i] - mean_[i]) * inv_stddev_[i];
    s += z * z;
  }
  return log_norm_ - 0.5 * s;
}

RealVector DiagonalGaussian::sample(Rng& rng) const {
  std::normal_distribution<double> n01;
  RealVector out(mean_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean_[i] + stddev_[i] * n01(rng);
  return out;
}

SmoothedUniformBox::SmoothedUniformBox(RealVector lower, RealVector upper, double tail_strength)
    : lower_(std::move(lower)), upper_(std::move(upper)), tail_(tail_strength) {
  if (lower_.size() != upper_.size()) {
    throw std::invalid_argument("SmoothedUniformBox: bound lengths differ");
  }
  for (std::size_t i = 0; i < lower_.size(); ++i) {
    if (!(lower_[i] < upper_[i])) {
      throw std::invalid_argument("SmoothedUniformBox: lower must be below upper in coordinate " +
                                  std::to_string(i));
    }
  }
  if (!(tail_ > 0.0)) throw std::invalid_argument("SmoothedUniformBox: tail strength must be > 0");
}

ad::Var SmoothedUniformBox::log_density(ad::Tape& tape, ad::Var v) const {
  check_dim(v.size());
  ad::Var above = ad::relu(ad::sub(v, tape.constant(upper_)));
  ad::Var below = ad::relu(ad::sub(tape.constant(lower_), v));
  ad::Var d = ad::add(above, below);
  return ad::scale(ad::dot(d, d), -tail_);
}

double SmoothedUniformBox::log_density(std::span<const double> v) const {
  check_dim(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double d = 0.0;
    if (v[i] > upper_[i]) d = v[i] - upper_[i];
    if (v[i] < lower_[i]) d = lower_[i] - v[i];
    s += d * d;
  }
  return -tail_ * s;
}

RealVector SmoothedUniformBox::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  RealVector out(lower_.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = lower_[i] + (upper_[i] - lower_[i]) * u01(rng);
  }
  return out;
}

}  // namespace fpr
