#pragma once
// Single-chain MCMC kernels (MALA, random-walk MH) and the gradient-ascent
// quench step. Targets are log-densities; the proposal covariance is 2*tau.

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fpr/ad/gradient.hpp"

namespace fpr {

using Rng = std::mt19937_64;

enum class KernelKind { Mala, Rmh, Gd };

std::string kernel_name(KernelKind k);
KernelKind parse_kernel(const std::string& name);

// Log-density and, when requested, its gradient. A target signals an
// undefined value by throwing ad::Error or returning a non-finite value.
struct Evaluation {
  double log_density = 0.0;
  RealVector gradient;
};
using Target = std::function<Evaluation(std::span<const double> x, bool with_gradient)>;

// Stepsize per coordinate. A single entry applies to every coordinate.
using Stepsize = std::vector<double>;

struct KernelConfig {
  Stepsize stepsize{1e-2};
  int substeps = 1;
  KernelKind kernel = KernelKind::Mala;

  // Throws std::invalid_argument naming the offending field.
  void validate(std::size_t dim) const;
};

struct ChainState {
  RealVector position;
  double log_density = 0.0;
  RealVector gradient;  // empty when not evaluated
  long accept_count = 0;
  long steps = 0;
};

// Evaluates the target at `position`; a failed evaluation yields -inf.
ChainState make_state(RealVector position, const Target& target, bool with_gradient);

ChainState mala_step(const ChainState& state, const Target& target, const Stepsize& tau, Rng& rng);
ChainState rmh_step(const ChainState& state, const Target& target, const Stepsize& tau, Rng& rng);
ChainState gd_step(const ChainState& state, const Target& target, const Stepsize& tau);

struct ChainRun {
  ChainState state;
  double acceptance_rate = 0.0;
};

// Applies the configured kernel `substeps` times.
ChainRun run_chain(ChainState state, const Target& target, const KernelConfig& config, Rng& rng);

// Log-density of the Langevin proposal N(from + tau*grad, 2 tau) at `to`,
// up to the normalizing constant shared by both directions.
double mala_log_proposal(std::span<const double> from, std::span<const double> grad_from,
                         std::span<const double> to, const Stepsize& tau);

// log P_accept for a move x -> x' (before the min with 0).
double mala_log_acceptance(std::span<const double> x, double lp_x, std::span<const double> grad_x,
                           std::span<const double> xp, double lp_xp,
                           std::span<const double> grad_xp, const Stepsize& tau);
double rmh_log_acceptance(double lp_x, double lp_xp);

}  // namespace fpr
