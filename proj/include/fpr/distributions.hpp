#pragma once
// Prior distributions with differentiable log-densities.

#include <memory>
#include <random>
#include <span>
#include <vector>

#include "fpr/ad/gradient.hpp"

namespace fpr {

using Rng = std::mt19937_64;

class Distribution {
 public:
  virtual ~Distribution() = default;

  virtual std::size_t dim() const = 0;
  virtual ad::Var log_density(ad::Tape& tape, ad::Var v) const = 0;
  virtual RealVector sample(Rng& rng) const = 0;

  // Value-only evaluation without a tape.
  virtual double log_density(std::span<const double> v) const = 0;

 protected:
  void check_dim(std::size_t n) const;
};

using DistributionPtr = std::shared_ptr<const Distribution>;

// Independent normals; the log-density is normalized.
class DiagonalGaussian final : public Distribution {
 public:
  DiagonalGaussian(RealVector mean, RealVector stddev);
  static DiagonalGaussian isotropic(std::size_t dim, double mean, double stddev);

  std::size_t dim() const override { return mean_.size(); }
  ad::Var log_density(ad::Tape& tape, ad::Var v) const override;
  double log_density(std::span<const double> v) const override;
  RealVector sample(Rng& rng) const override;

  const RealVector& mean() const { return mean_; }
  const RealVector& stddev() const { return stddev_; }

 private:
  RealVector mean_;
  RealVector stddev_;
  RealVector inv_stddev_;
  double log_norm_ = 0.0;
};

// Flat (log-density 0) inside [lower, upper] and -tail * dist(v, box)^2
// outside. Unnormalized. Samples are uniform over the box.
class SmoothedUniformBox final : public Distribution {
 public:
  static constexpr double kDefaultTail = 100.0;

  SmoothedUniformBox(RealVector lower, RealVector upper, double tail_strength = kDefaultTail);

  std::size_t dim() const override { return lower_.size(); }
  ad::Var log_density(ad::Tape& tape, ad::Var v) const override;
  double log_density(std::span<const double> v) const override;
  RealVector sample(Rng& rng) const override;

  const RealVector& lower() const { return lower_; }
  const RealVector& upper() const { return upper_; }
  double tail_strength() const { return tail_; }

 private:
  RealVector lower_;
  RealVector upper_;
  double tail_;
};

}  // namespace fpr
