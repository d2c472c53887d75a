#pragma once
// Experiment configuration: flat `key = value` text with dotted keys, one
// entry per line, `#` starts a comment. See docs/config.md for every key.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpr/env/formation.hpp"
#include "fpr/env/powergrid.hpp"
#include "fpr/env/search.hpp"
#include "fpr/orchestrator.hpp"

namespace fpr::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered key -> value map with the source line of each entry.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "config");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }
  // Applies `other` on top of this map.
  void merge(const KeyValues& other);

 private:
  std::map<std::string, std::string> values_;
};

enum class Method { OursMala, OursRmh, Dr, Gd };
std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  std::string environment = "search";  // search | formation | powergrid
  SearchConfig search;
  FormationConfig formation;
  PowerGridConfig grid;
  std::string grid_case = "case14";  // built-in name or path to a case file

  Method method = Method::OursMala;
  PredictRepairConfig run;
  std::size_t n_test = 10000;   // stress-test sample count
  std::size_t test_set = 100;   // static test set for per-round convergence
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int workers = 1;

  // Throws ConfigError if inconsistent.
  void validate() const;
};

// Per-environment defaults (population sizes, stepsizes, substeps, quench rounds and
// tempering from the reference hyperparameters; K halved).
ExperimentConfig defaults_for(const std::string& environment);

// Builds a configuration from key-values: `environment` selects the
// defaults, then every other key overrides one field. Unknown keys and
// malformed values raise ConfigError naming the key.
ExperimentConfig build_config(const KeyValues& kv);

// Every field as key-values; build_config(to_key_values(c)) reproduces c.
KeyValues to_key_values(const ExperimentConfig& c);
void write_config(const std::filesystem::path& path, const ExperimentConfig& c);

// All keys accepted by build_config for the given environment.
std::vector<std::string> known_keys(const std::string& environment);

// Resolves a built-in case name (e.g. "case14") or a path.
std::filesystem::path resolve_case(const std::string& name);

EnvironmentPtr make_environment(const ExperimentConfig& c);

}  // namespace fpr::harness
