#pragma once
// AC power flow in polar form on a shunt-free bus admittance matrix.
//
// Unknowns u = (theta at every non-slack bus, |V| at every PQ bus), in bus
// order. Residual F(u) = (P_calc - P_spec at non-slack buses,
//                         Q_calc - Q_spec at PQ buses).

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "fpr/env/grid_case.hpp"

namespace fpr {

// Dense n x n bus admittance Y = G + jB, row-major.
struct Admittance {
  std::size_t n = 0;
  std::vector<double> g, b;
};

// Each line contributes scale[l] * (g + jb) to Y_ff and Y_tt and its negative
// to Y_ft and Y_tf.
Admittance build_admittance(const GridCase& grid, std::span<const double> line_scale);

// Net injections P_i, Q_i implied by (|V|, theta).
void bus_injections(const Admittance& y, std::span<const double> vm, std::span<const double> va,
                    std::span<double> p, std::span<double> q);

struct PowerFlowOptions {
  double tolerance = 1e-8;  // on the infinity norm of F
  int max_iterations = 50;
  bool polish = true;  // one extra Newton step after reaching tolerance
};

struct PowerFlowSolution {
  std::vector<double> vm, va, p, q;  // per bus
  bool converged = false;
  bool singular = false;  // Jacobian at the returned point is numerically singular
  int iterations = 0;
  double residual = 0.0;  // infinity norm of F at the returned point
};

// Index bookkeeping shared by the solver and the environment.
struct FlowLayout {
  std::vector<std::size_t> angle_buses;      // non-slack buses
  std::vector<std::size_t> magnitude_buses;  // PQ buses
  std::size_t unknowns() const { return angle_buses.size() + magnitude_buses.size(); }
  static FlowLayout of(const GridCase& grid);
};

// Newton-Raphson from the flat start (theta = 0, |V| = 1 at PQ buses).
// p_spec / q_spec are per-bus net injection targets; v_set holds |V| for
// PV and slack buses (other entries ignored).
PowerFlowSolution solve_power_flow(const GridCase& grid, const Admittance& y,
                                   std::span<const double> p_spec, std::span<const double> q_spec,
                                   std::span<const double> v_set,
                                   const PowerFlowOptions& options = {});

// dF/du at (vm, va), rows and columns in FlowLayout order.
Eigen::MatrixXd power_flow_jacobian(const FlowLayout& layout, const Admittance& y,
                                    std::span<const double> vm, std::span<const double> va);

// Infinity norm of F recomputed from scratch with complex arithmetic,
// S = V * conj(Y V). Independent of the Newton code path.
double mismatch_norm(const GridCase& grid, const Admittance& y, std::span<const double> vm,
                     std::span<const double> va, std::span<const double> p_spec,
                     std::span<const double> q_spec);

}  // namespace fpr
