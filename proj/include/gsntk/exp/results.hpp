#ifndef GSNTK_EXP_RESULTS_HPP
#define GSNTK_EXP_RESULTS_HPP

// Long-format result tables (one metric per row), pass/fail checks, and the
// on-disk layout of a run: <table>.csv, config.json, manifest.json.

#include "config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#ifndef GSNTK_VERSION
#define GSNTK_VERSION "unknown"
#endif

namespace gsntk {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool at_most = true;  // pass iff value <= threshold, else value >= threshold
  double seconds = 0.0;

  bool pass() const { return std::isfinite(value) && (at_most ? value <= threshold : value >= threshold); }
};

/// Shortest round-trip decimal form, so rereading a CSV gives the same doubles.
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class ResultTable {
 public:
  struct Row {
    std::vector<std::string> coords;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
    bool censored = false;
  };

  ResultTable() = default;
  explicit ResultTable(std::vector<std::string> coords) : coords_(std::move(coords)) {}

  const std::vector<std::string>& coord_names() const { return coords_; }
  const std::vector<Row>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  void add(std::vector<std::string> coords, std::uint64_t seed, std::string metric, double value) {
    check_coords(coords);
    if (!std::isfinite(value))
      throw std::domain_error("ResultTable: non-finite value for metric " + metric + "; record it as censored");
    rows_.push_back({std::move(coords), seed, std::move(metric), value, false});
  }

  /// A sweep point that could not be evaluated (e.g. forward overflow). Value column is left empty.
  void add_censored(std::vector<std::string> coords, std::uint64_t seed, std::string metric) {
    check_coords(coords);
    rows_.push_back({std::move(coords), seed, std::move(metric), 0.0, true});
  }

  void append(const ResultTable& other) {
    if (other.coords_ != coords_) throw ShapeError("ResultTable::append: coordinate columns differ");
    rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
  }

  /// Values of `metric` on rows whose coordinates match every entry of `where`.
  std::vector<double> values(const std::string& metric, const std::map<std::string, std::string>& where = {}) const {
    std::vector<Index> idx;
    for (const auto& [k, v] : where) {
      auto it = std::find(coords_.begin(), coords_.end(), k);
      if (it == coords_.end()) throw std::invalid_argument("ResultTable: no coordinate named " + k);
      idx.push_back(it - coords_.begin());
    }
    std::vector<double> out;
    for (const auto& r : rows_) {
      if (r.metric != metric || r.censored) continue;
      bool ok = true;
      Index i = 0;
      for (const auto& [k, v] : where) ok = ok && r.coords[idx[i++]] == v;
      if (ok) out.push_back(r.value);
    }
    return out;
  }

  double value(const std::string& metric, const std::map<std::string, std::string>& where = {}) const {
    auto v = values(metric, where);
    if (v.size() != 1)
      throw std::out_of_range("ResultTable: expected one value of " + metric + ", found " + std::to_string(v.size()));
    return v.front();
  }

  std::string csv() const {
    std::string s;
    for (const auto& c : coords_) s += c + ",";
    s += "seed,metric,value,censored\n";
    for (const auto& r : rows_) {
      for (const auto& c : r.coords) s += c + ",";
      s += std::to_string(r.seed) + "," + r.metric + "," + (r.censored ? "" : format_double(r.value)) + "," +
           (r.censored ? "1" : "0") + "\n";
    }
    return s;
  }

 private:
  void check_coords(const std::vector<std::string>& c) const {
    if (c.size() != coords_.size())
      throw ShapeError("ResultTable: row has " + std::to_string(c.size()) + " coordinates, table has " +
                       std::to_string(coords_.size()));
    for (const auto& v : c)
      if (v.find_first_of(",\n\"") != std::string::npos)
        throw std::invalid_argument("ResultTable: coordinate value '" + v + "' needs quoting");
  }

  std::vector<std::string> coords_;
  std::vector<Row> rows_;
};

/// Everything one experiment run produces.
struct RunOutput {
  std::string experiment;
  std::uint64_t seed = 0;
  Json config;  // resolved, including defaults
  std::map<std::string, ResultTable> tables;
  std::vector<CheckResult> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.pass()) return false;
    return true;
  }
};

inline std::string coord(double v) { return format_double(v); }
inline std::string coord(Index v) { return std::to_string(v); }
inline std::string coord(int v) { return std::to_string(v); }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed for " + p.string());
}

inline Json checks_json(const std::vector<CheckResult>& checks) {
  Json a = Json::array();
  for (const auto& c : checks)
    a.push_back({{"name", c.name},
                 {"value", c.value},
                 {"threshold", c.threshold},
                 {"comparison", c.at_most ? "<=" : ">="},
                 {"pass", c.pass()}});
  return a;
}

/// Writes the tables, the resolved config and a manifest. Only the manifest
/// carries run-dependent fields (wall time).
inline void write_run(const RunOutput& run, const std::filesystem::path& dir, double wall_seconds,
                      const std::string& scale) {
  std::filesystem::create_directories(dir);
  Json files = Json::array();
  for (const auto& [name, t] : run.tables) {
    write_text(dir / (name + ".csv"), t.csv());
    files.push_back(name + ".csv");
  }
  write_text(dir / "config.json", run.config.dump(2) + "\n");
  Json m = {{"experiment", run.experiment},
            {"config_hash", config_hash(run.config)},
            {"seed", run.seed},
            {"scale", scale},
            {"version", GSNTK_VERSION},
            {"wall_time_s", wall_seconds},
            {"files", files},
            {"checks", checks_json(run.checks)}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace gsntk

#endif  // GSNTK_EXP_RESULTS_HPP
