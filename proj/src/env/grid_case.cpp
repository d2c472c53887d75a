#include "fpr/env/grid_case.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace fpr {

namespace {

using Row = std::vector<double>;

struct Table {
  std::vector<Row> rows;
  int line = 0;
};

struct RawCase {
  double base_mva = 100.0;
  std::map<std::string, Table> tables;
};

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('%');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

Row parse_row(const std::string& text, int line_no) {
  Row row;
  std::string token;
  std::istringstream ss(text);
  while (ss >> token) {
    // Commas separate columns too.
    std::size_t start = 0;
    while (start <= token.size()) {
      const std::size_t comma = token.find(',', start);
      const std::string part =
          token.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!part.empty() && part != "...") {
        char* end = nullptr;
        const double v = std::strtod(part.c_str(), &end);
        if (end == part.c_str() || *end != '\0') {
          throw CaseFormatError("line " + std::to_string(line_no) + ": cannot parse number '" +
                                part + "'");
        }
        row.push_back(v);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return row;
}

void add_rows(Table& table, const std::string& text, int line_no) {
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t semi = text.find(';', start);
    Row row = parse_row(
        text.substr(start, semi == std::string::npos ? std::string::npos : semi - start), line_no);
    if (!row.empty()) table.rows.push_back(std::move(row));
    if (semi == std::string::npos) break;
    start = semi + 1;
  }
}

RawCase read_raw(std::istream& in) {
  RawCase raw;
  std::string line;
  std::string open;  // table currently being read
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string text = strip_comment(line);
    if (!open.empty()) {
      const auto close = text.find(']');
      add_rows(raw.tables[open], text.substr(0, close), line_no);
      if (close != std::string::npos) open.clear();
      continue;
    }
    const auto key = text.find("mpc.");
    if (key == std::string::npos) continue;
    const auto eq = text.find('=', key);
    if (eq == std::string::npos) continue;
    std::string name = text.substr(key + 4, eq - key - 4);
    name.erase(name.find_last_not_of(" \t") + 1);
    const std::string rhs = text.substr(eq + 1);
    const auto bracket = rhs.find('[');
    if (bracket != std::string::npos) {
      Table& t = raw.tables[name];
      t = Table{};
      t.line = line_no;
      const auto close = rhs.find(']', bracket);
      add_rows(t, rhs.substr(bracket + 1, close == std::string::npos ? std::string::npos
                                                                     : close - bracket - 1),
               line_no);
      if (close == std::string::npos) open = name;
    } else if (name == "baseMVA") {
      const Row v = parse_row(rhs.substr(0, rhs.find(';')), line_no);
      if (v.size() != 1 || !(v[0] > 0.0)) {
        throw CaseFormatError("line " + std::to_string(line_no) + ": baseMVA must be positive");
      }
      raw.base_mva = v[0];
    }
  }
  if (!open.empty()) throw CaseFormatError("unterminated table mpc." + open);
  return raw;
}

const Table& require(const RawCase& raw, const std::string& name, std::size_t min_cols) {
  const auto it = raw.tables.find(name);
  if (it == raw.tables.end()) throw CaseFormatError("missing table mpc." + name);
  for (std::size_t r = 0; r < it->second.rows.size(); ++r) {
    if (it->second.rows[r].size() < min_cols) {
      throw CaseFormatError("mpc." + name + " row " + std::to_string(r + 1) + ": expected at least " +
                            std::to_string(min_cols) + " columns");
    }
  }
  return it->second;
}

}  // namespace

std::size_t GridCase::slack() const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].type == BusType::Slack) return i;
  }
  throw CaseFormatError(name + ": no slack bus");
}

std::size_t GridCase::generator_at(std::size_t bus) const {
  for (std::size_t g = 0; g < generators.size(); ++g) {
    if (generators[g].bus == bus) return g;
  }
  return npos;
}

std::size_t GridCase::load_at(std::size_t bus) const {
  for (std::size_t l = 0; l < loads.size(); ++l) {
    if (loads[l].bus == bus) return l;
  }
  return npos;
}

void GridCase::validate() const {
  auto fail = [&](const std::string& msg) { throw CaseFormatError(name + ": " + msg); };
  if (buses.size() < 2) fail("need at least two buses");
  std::size_t slacks = 0;
  for (const Bus& b : buses) {
    slacks += b.type == BusType::Slack;
    if (b.vmin > b.vmax) fail("bus " + std::to_string(b.id) + ": Vmin > Vmax");
  }
  if (slacks != 1) fail("need exactly one slack bus, found " + std::to_string(slacks));
  std::vector<int> gens_at(buses.size(), 0);
  for (const Generator& g : generators) {
    const Bus& b = buses.at(g.bus);
    if (b.type == BusType::PQ) fail("generator on PQ bus " + std::to_string(b.id));
    if (++gens_at[g.bus] > 1) fail("more than one generator on bus " + std::to_string(b.id));
    if (g.pmin > g.pmax || g.qmin > g.qmax) {
      fail("generator at bus " + std::to_string(b.id) + ": bounds out of order");
    }
  }
  if (gens_at[slack()] == 0) fail("slack bus has no generator");
  std::vector<int> loads_at(buses.size(), 0);
  for (const Load& l : loads) {
    if (++loads_at[l.bus] > 1) fail("more than one load on bus " + std::to_string(buses[l.bus].id));
    if (l.pmin > l.pmax || l.qmin > l.qmax) {
      fail("load at bus " + std::to_string(buses[l.bus].id) + ": bounds out of order");
    }
  }
  std::vector<std::vector<std::size_t>> adj(buses.size());
  for (const Line& ln : lines) {
    if (ln.from == ln.to) fail("line from a bus to itself");
    if (!std::isfinite(ln.g) || !std::isfinite(ln.b)) fail("line with zero impedance");
    adj[ln.from].push_back(ln.to);
    adj[ln.to].push_back(ln.from);
  }
  std::vector<char> seen(buses.size(), 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j : adj[i]) {
      if (!seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (!seen[i]) fail("network is not connected (bus " + std::to_string(buses[i].id) + ")");
  }
}

GridCase parse_case(std::istream& in, const std::string& name) {
  const RawCase raw = read_raw(in);
  GridCase c;
  c.name = name;
  c.base_mva = raw.base_mva;
  const double base = raw.base_mva;

  std::unordered_map<int, std::size_t> index;
  std::vector<std::pair<double, double>> demand;
  for (const Row& r : require(raw, "bus", 13).rows) {
    Bus b;
    b.id = static_cast<int>(r[0]);
    const int type = static_cast<int>(r[1]);
    if (type < 1 || type > 3) {
      throw CaseFormatError(name + ": bus " + std::to_string(b.id) + " has unsupported type " +
                            std::to_string(type));
    }
    b.type = static_cast<BusType>(type);
    b.vmax = r[11];
    b.vmin = r[12];
    if (!index.emplace(b.id, c.buses.size()).second) {
      throw CaseFormatError(name + ": duplicate bus " + std::to_string(b.id));
    }
    c.buses.push_back(b);
    demand.emplace_back(r[2], r[3]);
  }
  auto bus_index = [&](double id, const std::string& table) {
    const auto it = index.find(static_cast<int>(id));
    if (it == index.end()) {
      throw CaseFormatError(name + ": mpc." + table + " refers to unknown bus " +
                            std::to_string(static_cast<int>(id)));
    }
    return it->second;
  };

  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    const auto [pd, qd] = demand[i];
    if (pd == 0.0 && qd == 0.0) continue;
    Load l;
    l.bus = i;
    l.pd = pd / base;
    l.qd = qd / base;
    l.pmin = l.pd - kDefaultLoadMargin * std::abs(l.pd);
    l.pmax = l.pd + kDefaultLoadMargin * std::abs(l.pd);
    l.qmin = l.qd - kDefaultLoadMargin * std::abs(l.qd);
    l.qmax = l.qd + kDefaultLoadMargin * std::abs(l.qd);
    c.loads.push_back(l);
  }

  const Table& gen = require(raw, "gen", 10);
  std::vector<std::size_t> kept;  // gen row -> generator index or npos
  for (const Row& r : gen.rows) {
    if (r[7] <= 0.0) {
      kept.push_back(GridCase::npos);
      continue;
    }
    Generator g;
    g.bus = bus_index(r[0], "gen");
    g.pg = r[1] / base;
    g.qmax = r[3] / base;
    g.qmin = r[4] / base;
    g.vg = r[5];
    g.pmax = r[8] / base;
    g.pmin = r[9] / base;
    kept.push_back(c.generators.size());
    c.generators.push_back(g);
  }

  for (const Row& r : require(raw, "branch", 11).rows) {
    if (r[10] <= 0.0) continue;
    Line ln;
    ln.from = bus_index(r[0], "branch");
    ln.to = bus_index(r[1], "branch");
    const double rr = r[2];
    const double xx = r[3];
    const double d = rr * rr + xx * xx;
    if (d == 0.0) throw CaseFormatError(name + ": branch with zero impedance");
    ln.g = rr / d;
    ln.b = -xx / d;
    c.lines.push_back(ln);
  }

  const Table& cost = require(raw, "gencost", 4);
  if (cost.rows.size() < gen.rows.size()) {
    throw CaseFormatError(name + ": mpc.gencost needs one row per generator");
  }
  for (std::size_t k = 0; k < gen.rows.size(); ++k) {
    if (kept[k] == GridCase::npos) continue;
    const Row& r = cost.rows[k];
    if (static_cast<int>(r[0]) != 2) {
      throw CaseFormatError(name + ": only polynomial generator costs (model 2) are supported");
    }
    const auto n = static_cast<std::size_t>(r[3]);
    if (n > 3 || r.size() < 4 + n) {
      throw CaseFormatError(name + ": gencost row " + std::to_string(k + 1) +
                            " must have at most 3 coefficients");
    }
    Generator& g = c.generators[kept[k]];
    // Coefficients are listed highest order first.
    double coef[3] = {0.0, 0.0, 0.0};  // c0, c1, c2
    for (std::size_t j = 0; j < n; ++j) coef[n - 1 - j] = r[4 + j];
    g.c0 = coef[0];
    g.c1 = coef[1];
    g.c2 = coef[2];
  }

  if (raw.tables.count("loadlim")) {
    for (const Row& r : require(raw, "loadlim", 5).rows) {
      const std::size_t l = c.load_at(bus_index(r[0], "loadlim"));
      if (l == GridCase::npos) {
        throw CaseFormatError(name + ": mpc.loadlim row for bus " +
                              std::to_string(static_cast<int>(r[0])) + " without demand");
      }
      c.loads[l].pmin = r[1] / base;
      c.loads[l].pmax = r[2] / base;
      c.loads[l].qmin = r[3] / base;
      c.loads[l].qmax = r[4] / base;
    }
  }
  if (raw.tables.count("loadcost")) {
    for (const Row& r : require(raw, "loadcost", 5).rows) {
      const std::size_t l = c.load_at(bus_index(r[0], "loadcost"));
      if (l == GridCase::npos) {
        throw CaseFormatError(name + ": mpc.loadcost row for bus " +
                              std::to_string(static_cast<int>(r[0])) + " without demand");
      }
      c.loads[l].c2p = r[1];
      c.loads[l].c1p = r[2];
      c.loads[l].c2q = r[3];
      c.loads[l].c1q = r[4];
    }
  }
  c.validate();
  return c;
}

GridCase load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CaseFormatError("cannot open case file " + path.string());
  return parse_case(in, path.stem().string());
}

}  // namespace fpr
