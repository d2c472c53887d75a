#pragma once
// Transmission network data in the MATPOWER case layout (see
// docs/case-format.md). Everything is stored per-unit on base_mva after
// loading, except generator cost coefficients, which stay in $/MW^k h.

#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpr {

class CaseFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BusType { PQ = 1, PV = 2, Slack = 3 };

struct Bus {
  int id = 0;  // external bus number
  BusType type = BusType::PQ;
  double vmin = 0.94;
  double vmax = 1.06;
};

struct Line {
  std::size_t from = 0;  // bus indices
  std::size_t to = 0;
  double g = 0.0;  // nominal series admittance g + jb = 1 / (r + jx)
  double b = 0.0;
};

struct Generator {
  std::size_t bus = 0;
  double pmin = 0.0, pmax = 0.0;
  double qmin = 0.0, qmax = 0.0;
  double vg = 1.0;  // setpoint from the case file
  double pg = 0.0;
  // cost = c2 P^2 + c1 P + c0 with P in MW
  double c2 = 0.0, c1 = 0.0, c0 = 0.0;
};

struct Load {
  std::size_t bus = 0;
  double pd = 0.0, qd = 0.0;  // nominal demand
  double pmin = 0.0, pmax = 0.0;
  double qmin = 0.0, qmax = 0.0;
  // cost = c2p P^2 + c1p P + c2q Q^2 + c1q Q with P, Q in MW / MVAr
  double c2p = 0.0, c1p = 0.0, c2q = 0.0, c1q = 0.0;
};

struct GridCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<Load> loads;

  std::size_t slack() const;
  // Index of the generator / load at bus i, or npos.
  std::size_t generator_at(std::size_t bus) const;
  std::size_t load_at(std::size_t bus) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  // Throws CaseFormatError naming the first violated invariant: exactly one
  // slack, generators only on PV / slack buses and at most one per bus,
  // ordered bounds, nonzero line impedances, connected network.
  void validate() const;
};

// Default half-width of load bounds when the case has no mpc.loadlim table,
// as a fraction of the nominal demand.
inline constexpr double kDefaultLoadMargin = 0.1;

GridCase parse_case(std::istream& in, const std::string& name = "case");
GridCase load_case(const std::filesystem::path& path);

}  // namespace fpr
