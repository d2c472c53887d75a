#include "fpr/harness/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fpr/rng.hpp"

namespace fpr::harness {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return in;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

nlohmann::json to_json(const RealVector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (double d : v) j.push_back(d);
  return j;
}

RealVector from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw std::runtime_error(what + ": expected an array of numbers");
  RealVector v;
  for (const auto& e : j) {
    if (!e.is_number()) throw std::runtime_error(what + ": expected an array of numbers");
    v.push_back(e.get<double>());
  }
  return v;
}

nlohmann::json load_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace

PredictRepairResult run_method(const Environment& env, const ExperimentConfig& c) {
  PredictRepairConfig run = c.run;
  run.seed = c.seed;
  run.workers = c.workers;
  switch (c.method) {
    case Method::OursMala:
      run.kernel = KernelKind::Mala;
      return predict_and_repair(env, run);
    case Method::OursRmh:
      run.kernel = KernelKind::Rmh;
      return predict_and_repair(env, run);
    case Method::Dr:
      return baseline_dr(env, run);
    case Method::Gd:
      return baseline_gd(env, run);
  }
  throw std::logic_error("unknown method");
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

Quantiles summarize(const std::vector<double>& values) {
  Quantiles q;
  q.p50 = quantile(values, 0.5);
  q.p90 = quantile(values, 0.9);
  q.p99 = quantile(values, 0.99);
  q.max = *std::max_element(values.begin(), values.end());
  return q;
}

StressReport stress_test(const Environment& env, std::span<const double> design,
                         const std::vector<RealVector>& predicted_failures, std::size_t n_test,
                         std::uint64_t seed, int workers) {
  if (n_test == 0) throw std::invalid_argument("n_test must be at least 1");
  if (design.size() != env.dim_x()) {
    throw std::invalid_argument("design has " + std::to_string(design.size()) +
                                " entries, environment expects " + std::to_string(env.dim_x()));
  }
  StressReport r;
  r.design.assign(design.begin(), design.end());
  r.predicted.resize(predicted_failures.size());
  parallel_for(predicted_failures.size(), workers,
               [&](std::size_t i) { r.predicted[i] = env.cost_value(design, predicted_failures[i]); });
  r.test.resize(n_test);
  parallel_for(n_test, workers, [&](std::size_t i) {
    Rng rng = make_stream(seed, StreamPurpose::StressTest, 0, i);
    r.test[i] = env.cost_value(design, env.prior_y().sample(rng));
  });
  r.test_quantiles = summarize(r.test);
  if (!r.predicted.empty()) r.predicted_quantiles = summarize(r.predicted);
  return r;
}

std::vector<RealVector> make_test_set(const Environment& env, std::size_t size, std::uint64_t seed) {
  std::vector<RealVector> ys;
  ys.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng = make_stream(seed, StreamPurpose::TestSet, 0, i);
    ys.push_back(env.prior_y().sample(rng));
  }
  return ys;
}

std::vector<double> convergence_eval(const Environment& env, const std::vector<RoundRecord>& records,
                                     const std::vector<RealVector>& test_set, int workers) {
  if (test_set.empty()) throw std::invalid_argument("empty test set");
  std::vector<double> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t k) {
    const auto costs = env.cost_values(records[k].best_design, test_set);
    double s = 0.0;
    for (double c : costs) s += c;
    out[k] = s / static_cast<double>(costs.size());
  });
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::runtime_error("not a number: '" + s + "'");
  }
  return v;
}

void write_rounds_csv(const fs::path& path, const std::vector<RoundRecord>& records,
                      const std::vector<double>* test_cost) {
  if (test_cost && test_cost->size() != records.size()) {
    throw std::invalid_argument("test_cost length does not match the number of rounds");
  }
  auto out = open_out(path);
  const std::size_t nx = records.empty() ? 0 : records.front().design_acceptance.size();
  const std::size_t ny = records.empty() ? 0 : records.front().failure_acceptance.size();
  std::vector<std::string> header{"round",     "lambda",          "kernel", "best_index",
                                  "best_cost", "mean_failure_cost"};
  for (std::size_t j = 0; j < nx; ++j) header.push_back("design_accept_" + std::to_string(j));
  for (std::size_t j = 0; j < ny; ++j) header.push_back("failure_accept_" + std::to_string(j));
  if (test_cost) header.push_back("test_cost");
  out << join(header) << '\n';
  for (std::size_t k = 0; k < records.size(); ++k) {
    const RoundRecord& r = records[k];
    std::vector<std::string> row{std::to_string(r.round), format_double(r.lambda),
                                 kernel_name(r.kernel),   std::to_string(r.best_index),
                                 format_double(r.best_cost), format_double(r.mean_failure_cost)};
    for (double a : r.design_acceptance) row.push_back(format_double(a));
    for (double a : r.failure_acceptance) row.push_back(format_double(a));
    if (test_cost) row.push_back(format_double((*test_cost)[k]));
    out << join(row) << '\n';
  }
}

void append_test_cost(const fs::path& path, const std::vector<double>& test_cost) {
  CsvTable t = read_csv(path);
  if (t.rows.size() != test_cost.size()) {
    throw std::invalid_argument(path.string() + " has " + std::to_string(t.rows.size()) +
                                " rounds, got " + std::to_string(test_cost.size()) + " test costs");
  }
  const auto it = std::find(t.header.begin(), t.header.end(), "test_cost");
  std::size_t col = t.header.size();
  if (it == t.header.end()) {
    t.header.push_back("test_cost");
  } else {
    col = static_cast<std::size_t>(it - t.header.begin());
  }
  auto out = open_out(path);
  out << join(t.header) << '\n';
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    auto row = t.rows[k];
    if (col == row.size()) {
      row.push_back(format_double(test_cost[k]));
    } else {
      row[col] = format_double(test_cost[k]);
    }
    out << join(row) << '\n';
  }
}

void write_best_designs_csv(const fs::path& path, const std::vector<RoundRecord>& records) {
  auto out = open_out(path);
  const std::size_t d = records.empty() ? 0 : records.front().best_design.size();
  std::vector<std::string> header{"round"};
  for (std::size_t i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i));
  out << join(header) << '\n';
  for (const RoundRecord& r : records) {
    std::vector<std::string> row{std::to_string(r.round)};
    for (double v : r.best_design) row.push_back(format_double(v));
    out << join(row) << '\n';
  }
}

std::vector<RoundRecord> read_best_designs_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<RoundRecord> records;
  for (const auto& row : t.rows) {
    RoundRecord r;
    r.round = std::stoi(row[0]);
    for (std::size_t i = 1; i < row.size(); ++i) r.best_design.push_back(parse_double(row[i]));
    records.push_back(std::move(r));
  }
  return records;
}

void write_timing_csv(const fs::path& path, const std::vector<RoundRecord>& records) {
  auto out = open_out(path);
  out << "round,wall_seconds\n";
  for (const RoundRecord& r : records) {
    out << r.round << ',' << format_double(r.wall_seconds) << '\n';
  }
}

void write_stress(const fs::path& dir, const StressReport& report) {
  {
    auto out = open_out(dir / "stress.csv");
    out << "set,index,cost\n";
    for (std::size_t i = 0; i < report.predicted.size(); ++i) {
      out << "predicted," << i << ',' << format_double(report.predicted[i]) << '\n';
    }
    for (std::size_t i = 0; i < report.test.size(); ++i) {
      out << "test," << i << ',' << format_double(report.test[i]) << '\n';
    }
  }
  auto q = [](const Quantiles& s) {
    return nlohmann::json{{"p50", s.p50}, {"p90", s.p90}, {"p99", s.p99}, {"max", s.max}};
  };
  nlohmann::json j;
  j["design"] = to_json(report.design);
  j["n_test"] = report.test.size();
  j["n_predicted"] = report.predicted.size();
  j["test"] = q(report.test_quantiles);
  if (!report.predicted.empty()) j["predicted"] = q(report.predicted_quantiles);
  auto out = open_out(dir / "stress_summary.json");
  out << j.dump(2) << '\n';
}

void write_vector_json(const fs::path& path, const RealVector& v) {
  auto out = open_out(path);
  out << to_json(v).dump() << '\n';
}

RealVector read_vector_json(const fs::path& path) {
  return from_json(load_json(path), path.string());
}

void write_vectors_json(const fs::path& path, const std::vector<RealVector>& vs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& v : vs) j.push_back(to_json(v));
  auto out = open_out(path);
  out << j.dump() << '\n';
}

std::vector<RealVector> read_vectors_json(const fs::path& path) {
  const nlohmann::json j = load_json(path);
  if (!j.is_array()) throw std::runtime_error(path.string() + ": expected an array of arrays");
  std::vector<RealVector> vs;
  for (const auto& e : j) vs.push_back(from_json(e, path.string()));
  return vs;
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::out_of_range("no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
  auto in = open_in(path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  t.header = split_csv_line(line);
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": expected " +
                               std::to_string(t.header.size()) + " fields, got " +
                               std::to_string(row.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

PredictRepairResult run_experiment(const ExperimentConfig& c) {
  c.validate();
  const EnvironmentPtr env = make_environment(c);
  c.run.validate(env->dim_x(), env->dim_y());
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  write_config(dir / "config.txt", c);
  PredictRepairResult result = run_method(*env, c);
  write_rounds_csv(dir / "rounds.csv", result.records);
  write_best_designs_csv(dir / "best_designs.csv", result.records);
  write_vector_json(dir / "design.json", result.best_design);
  write_vectors_json(dir / "failures.json", result.failures.members);
  write_timing_csv(dir / "timing.csv", result.records);
  return result;
}

StressReport run_stress(const fs::path& run_dir, const ExperimentConfig& c) {
  const EnvironmentPtr env = make_environment(c);
  const RealVector design = read_vector_json(run_dir / "design.json");
  const auto failures = read_vectors_json(run_dir / "failures.json");
  StressReport r = stress_test(*env, design, failures, c.n_test, c.seed, c.workers);
  write_stress(run_dir, r);
  return r;
}

std::vector<double> run_convergence(const fs::path& run_dir, const ExperimentConfig& c) {
  const EnvironmentPtr env = make_environment(c);
  const auto records = read_best_designs_csv(run_dir / "best_designs.csv");
  const auto test_set = make_test_set(*env, c.test_set, c.seed);
  const auto costs = convergence_eval(*env, records, test_set, c.workers);
  append_test_cost(run_dir / "rounds.csv", costs);
  return costs;
}

}  // namespace fpr::harness
