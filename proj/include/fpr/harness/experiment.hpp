#pragma once
// Running a configured method and writing its artifacts. File formats are
// described in docs/artifacts.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fpr/harness/config.hpp"

namespace fpr::harness {

// Dispatches on c.method.
PredictRepairResult run_method(const Environment& env, const ExperimentConfig& c);

struct Quantiles {
  double p50 = 0.0, p90 = 0.0, p99 = 0.0, max = 0.0;
};
// Linear interpolation between order statistics (position q (n - 1)).
double quantile(std::vector<double> values, double q);
Quantiles summarize(const std::vector<double>& values);

struct StressReport {
  RealVector design;
  std::vector<double> predicted;  // J on the predicted failures
  std::vector<double> test;       // J on n_test prior samples
  Quantiles test_quantiles;
  Quantiles predicted_quantiles;
};

// Throws std::invalid_argument for n_test = 0 or a design of the wrong size.
StressReport stress_test(const Environment& env, std::span<const double> design,
                         const std::vector<RealVector>& predicted_failures, std::size_t n_test,
                         std::uint64_t seed, int workers = 1);

// The static test set: `size` prior draws of y from the TestSet stream.
std::vector<RealVector> make_test_set(const Environment& env, std::size_t size, std::uint64_t seed);

// Mean J of each round's best design over the test set.
std::vector<double> convergence_eval(const Environment& env, const std::vector<RoundRecord>& records,
                                     const std::vector<RealVector>& test_set, int workers = 1);

// Shortest decimal that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

void write_rounds_csv(const std::filesystem::path& path, const std::vector<RoundRecord>& records,
                      const std::vector<double>* test_cost = nullptr);
// Adds (or replaces) a test_cost column in an existing rounds.csv.
void append_test_cost(const std::filesystem::path& path, const std::vector<double>& test_cost);
void write_best_designs_csv(const std::filesystem::path& path, const std::vector<RoundRecord>& records);
std::vector<RoundRecord> read_best_designs_csv(const std::filesystem::path& path);
void write_timing_csv(const std::filesystem::path& path, const std::vector<RoundRecord>& records);
void write_stress(const std::filesystem::path& dir, const StressReport& report);

void write_vector_json(const std::filesystem::path& path, const RealVector& v);
RealVector read_vector_json(const std::filesystem::path& path);
void write_vectors_json(const std::filesystem::path& path, const std::vector<RealVector>& vs);
std::vector<RealVector> read_vectors_json(const std::filesystem::path& path);

// Rows of a CSV file with a header; throws if ragged.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

// Runs c.method and writes config.txt, rounds.csv, best_designs.csv,
// design.json, failures.json and timing.csv into c.out_dir.
PredictRepairResult run_experiment(const ExperimentConfig& c);

// Stress-tests the design stored in run_dir against its failures.json.
StressReport run_stress(const std::filesystem::path& run_dir, const ExperimentConfig& c);

// Computes the convergence column for the run in run_dir and appends it.
std::vector<double> run_convergence(const std::filesystem::path& run_dir, const ExperimentConfig& c);

}  // namespace fpr::harness
