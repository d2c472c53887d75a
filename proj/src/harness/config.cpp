#include "fpr/harness/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace fpr::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const long long n = to_int(key, v);
  if (n < 0) bad_value(key, v, "a nonnegative integer");
  return static_cast<std::size_t>(n);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(key, s));
  if (out.empty()) bad_value(key, v, "a comma-separated list of numbers");
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_size(key, s));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define FPR_SIZE(KEY, EXPR)                                                      \
  Field{KEY, [](const ExperimentConfig& c) { return std::to_string(c.EXPR); }, \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_size(KEY, v); }}
#define FPR_INT(KEY, EXPR)                                                       \
  Field{KEY, [](const ExperimentConfig& c) { return std::to_string(c.EXPR); }, \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = static_cast<int>(to_int(KEY, v)); }}
#define FPR_DOUBLE(KEY, EXPR)                                         \
  Field{KEY, [](const ExperimentConfig& c) { return fmt(c.EXPR); }, \
        [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_double(KEY, v); }}

std::vector<Field> common_fields() {
  return {
      Field{"method", [](const ExperimentConfig& c) { return method_name(c.method); },
            [](ExperimentConfig& c, const std::string& v) {
              try {
                c.method = parse_method(v);
              } catch (const std::invalid_argument&) {
                bad_value("method", v, "one of ours-mala, ours-rmh, dr, gd");
              }
            }},
      Field{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      FPR_SIZE("n_test", n_test),
      FPR_SIZE("test_set", test_set),
      FPR_INT("workers", workers),
      Field{"out", [](const ExperimentConfig& c) { return c.out_dir; },
            [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
      FPR_SIZE("n_x", run.n_x),
      FPR_SIZE("n_y", run.n_y),
      FPR_INT("rounds", run.rounds),
      FPR_INT("substeps", run.substeps),
      FPR_INT("quench_rounds", run.quench_rounds),
      Field{"tau", nullptr,
            [](ExperimentConfig& c, const std::string& v) {
              c.run.tau_x = to_doubles("tau", v);
              c.run.tau_y = c.run.tau_x;
            }},
      Field{"tau_x", [](const ExperimentConfig& c) { return fmt_list(c.run.tau_x); },
            [](ExperimentConfig& c, const std::string& v) { c.run.tau_x = to_doubles("tau_x", v); }},
      Field{"tau_y", [](const ExperimentConfig& c) { return fmt_list(c.run.tau_y); },
            [](ExperimentConfig& c, const std::string& v) { c.run.tau_y = to_doubles("tau_y", v); }},
      FPR_DOUBLE("tempering.rate", run.tempering_rate),
      Field{"tempering.fixed_lambda",
            [](const ExperimentConfig& c) {
              return c.run.fixed_lambda ? fmt(*c.run.fixed_lambda) : std::string("none");
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "none") {
                c.run.fixed_lambda.reset();
              } else {
                c.run.fixed_lambda = to_double("tempering.fixed_lambda", v);
              }
            }},
      Field{"stale_designs",
            [](const ExperimentConfig& c) { return std::string(c.run.stale_designs ? "true" : "false"); },
            [](ExperimentConfig& c, const std::string& v) {
              c.run.stale_designs = to_bool("stale_designs", v);
            }},
  };
}

std::vector<Field> search_fields() {
  return {
      FPR_SIZE("env.n_seek", search.n_seek),
      FPR_SIZE("env.n_hide", search.n_hide),
      FPR_SIZE("env.control_points", search.control_points),
      FPR_DOUBLE("env.half_width", search.half_width),
      FPR_DOUBLE("env.half_height", search.half_height),
      FPR_DOUBLE("env.radius", search.radius),
      FPR_DOUBLE("env.smoothing", search.smoothing),
      FPR_DOUBLE("env.horizon", search.horizon),
      FPR_DOUBLE("env.dt", search.dt),
      FPR_DOUBLE("env.v_max", search.v_max),
      FPR_DOUBLE("env.kp", search.kp),
      FPR_DOUBLE("env.prior_tail", search.prior_tail),
  };
}

std::vector<Field> formation_fields() {
  return {
      FPR_SIZE("env.n_agents", formation.n_agents),
      FPR_SIZE("env.control_points", formation.control_points),
      FPR_DOUBLE("env.comm_radius", formation.comm_radius),
      FPR_DOUBLE("env.horizon", formation.horizon),
      FPR_DOUBLE("env.dt", formation.dt),
      FPR_DOUBLE("env.kp", formation.kp),
      FPR_DOUBLE("env.kd", formation.kd),
      FPR_DOUBLE("env.mass", formation.mass),
      Field{"env.hidden", [](const ExperimentConfig& c) { return fmt_list(c.formation.hidden); },
            [](ExperimentConfig& c, const std::string& v) {
              c.formation.hidden = to_sizes("env.hidden", v);
            }},
      FPR_DOUBLE("env.wind_cap", formation.wind_cap),
      FPR_DOUBLE("env.goal_x", formation.goal_x),
      FPR_DOUBLE("env.goal_y", formation.goal_y),
      FPR_DOUBLE("env.goal_weight", formation.goal_weight),
      FPR_DOUBLE("env.smoothing", formation.smoothing),
      FPR_DOUBLE("env.connectivity_floor", formation.connectivity_floor),
      FPR_DOUBLE("env.half_extent", formation.half_extent),
      FPR_DOUBLE("env.bias_stddev", formation.bias_stddev),
      FPR_DOUBLE("env.prior_tail", formation.prior_tail),
  };
}

std::vector<Field> grid_fields() {
  return {
      Field{"env.case", [](const ExperimentConfig& c) { return c.grid_case; },
            [](ExperimentConfig& c, const std::string& v) { c.grid_case = v; }},
      FPR_DOUBLE("env.penalty", grid.penalty),
      FPR_DOUBLE("env.line_state_mean", grid.line_state_mean),
      FPR_DOUBLE("env.line_state_stddev", grid.line_state_stddev),
      FPR_DOUBLE("env.nonconvergence_cost", grid.nonconvergence_cost),
      FPR_DOUBLE("env.tolerance", grid.flow.tolerance),
      FPR_INT("env.max_iterations", grid.flow.max_iterations),
      FPR_DOUBLE("env.prior_tail", grid.prior_tail),
  };
}

#undef FPR_SIZE
#undef FPR_INT
#undef FPR_DOUBLE

std::vector<Field> fields_for(const std::string& environment) {
  std::vector<Field> f = common_fields();
  std::vector<Field> e;
  if (environment == "search") {
    e = search_fields();
  } else if (environment == "formation") {
    e = formation_fields();
  } else if (environment == "powergrid") {
    e = grid_fields();
  } else {
    bad_value("environment", environment, "one of search, formation, powergrid");
  }
  f.insert(f.end(), e.begin(), e.end());
  return f;
}

KernelKind kernel_for(Method m) {
  return m == Method::OursRmh ? KernelKind::Rmh : m == Method::OursMala ? KernelKind::Mala
                                                                         : KernelKind::Gd;
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(n) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(n) + ": empty key");
    if (kv.has(key)) {
      throw ConfigError(source + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
    }
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void KeyValues::set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string& KeyValues::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::OursMala: return "ours-mala";
    case Method::OursRmh: return "ours-rmh";
    case Method::Dr: return "dr";
    case Method::Gd: return "gd";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "ours-mala") return Method::OursMala;
  if (name == "ours-rmh") return Method::OursRmh;
  if (name == "dr") return Method::Dr;
  if (name == "gd") return Method::Gd;
  throw std::invalid_argument("unknown method '" + name + "'");
}

void ExperimentConfig::validate() const {
  auto wrap = [](const std::string& prefix, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(prefix + e.what());
    }
  };
  if (environment == "search") {
    wrap("", [&] { search.validate(); });
  } else if (environment == "formation") {
    wrap("", [&] { formation.validate(); });
  } else if (environment == "powergrid") {
    wrap("", [&] { grid.validate(); });
  } else {
    bad_value("environment", environment, "one of search, formation, powergrid");
  }
  if (n_test < 1) bad_value("n_test", std::to_string(n_test), "an integer >= 1");
  if (test_set < 1) bad_value("test_set", std::to_string(test_set), "an integer >= 1");
  if (workers < 1) bad_value("workers", std::to_string(workers), "an integer >= 1");
  if (run.kernel != kernel_for(method)) throw ConfigError("kernel does not match method");
}

ExperimentConfig defaults_for(const std::string& environment) {
  ExperimentConfig c;
  c.environment = environment;
  c.run.tempering_rate = 5.0;
  if (environment == "search") {
    c.run.n_x = 10;
    c.run.n_y = 10;
    c.run.tau_x = {1e-2};
    c.run.tau_y = {1e-2};
    c.run.rounds = 50;
    c.run.substeps = 10;
    c.run.quench_rounds = 25;
  } else if (environment == "formation") {
    c.run.n_x = 5;
    c.run.n_y = 5;
    c.run.tau_x = {1e-3};
    c.run.tau_y = {1e-3};
    c.run.rounds = 25;
    c.run.substeps = 5;
    c.run.quench_rounds = 5;
  } else if (environment == "powergrid") {
    c.run.n_x = 10;
    c.run.n_y = 10;
    c.run.tau_x = {1e-6};
    c.run.tau_y = {1e-2};
    c.run.rounds = 50;
    c.run.substeps = 10;
    c.run.quench_rounds = 10;
  } else {
    bad_value("environment", environment, "one of search, formation, powergrid");
  }
  return c;
}

ExperimentConfig build_config(const KeyValues& kv) {
  const std::string env = kv.has("environment") ? kv.get("environment") : std::string("search");
  ExperimentConfig c = defaults_for(env);
  const auto fields = fields_for(env);
  for (const auto& [key, value] : kv.entries()) {
    if (key == "environment") continue;
    const auto it = std::find_if(fields.begin(), fields.end(),
                                 [&](const Field& f) { return f.key == key; });
    if (it == fields.end()) {
      throw ConfigError("unknown key '" + key + "' for environment '" + env + "'");
    }
    it->set(c, value);
  }
  c.run.kernel = kernel_for(c.method);
  c.run.seed = c.seed;
  c.run.workers = c.workers;
  c.validate();
  return c;
}

KeyValues to_key_values(const ExperimentConfig& c) {
  KeyValues kv;
  kv.set("environment", c.environment);
  for (const Field& f : fields_for(c.environment)) {
    if (f.get) kv.set(f.key, f.get(c));
  }
  return kv;
}

void write_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  const KeyValues kv = to_key_values(c);
  out << "environment = " << c.environment << "\n";
  for (const auto& [k, v] : kv.entries()) {
    if (k != "environment") out << k << " = " << v << "\n";
  }
}

std::vector<std::string> known_keys(const std::string& environment) {
  std::vector<std::string> keys{"environment"};
  for (const Field& f : fields_for(environment)) keys.push_back(f.key);
  return keys;
}

std::filesystem::path resolve_case(const std::string& name) {
  const std::filesystem::path direct(name);
  if (std::filesystem::exists(direct)) return direct;
  std::vector<std::filesystem::path> roots;
  if (const char* env = std::getenv("FPR_DATA_DIR")) roots.emplace_back(env);
#ifdef FPR_DATA_DIR
  roots.emplace_back(FPR_DATA_DIR);
#endif
  for (const auto& root : roots) {
    const auto p = root / "cases" / (name + ".m");
    if (std::filesystem::exists(p)) return p;
  }
  throw ConfigError("key 'env.case': no case file or built-in case named '" + name + "'");
}

EnvironmentPtr make_environment(const ExperimentConfig& c) {
  if (c.environment == "search") return std::make_shared<SearchEnvironment>(c.search);
  if (c.environment == "formation") return std::make_shared<FormationEnvironment>(c.formation);
  if (c.environment == "powergrid") {
    return std::make_shared<PowerGridEnvironment>(load_case(resolve_case(c.grid_case)), c.grid);
  }
  bad_value("environment", c.environment, "one of search, formation, powergrid");
}

}  // namespace fpr::harness
