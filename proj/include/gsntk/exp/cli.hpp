#ifndef GSNTK_EXP_CLI_HPP
#define GSNTK_EXP_CLI_HPP

// Command-line front end: `gsntk <subcommand> [--config F] [--scale desk|paper]
// [--seed S] [--out DIR] [--threads N]`.
// Exit codes: 0 all checks passed, 1 a check failed or the run failed,
// 2 bad command line or config.

#include "config.hpp"
#include "memory_pro_exp.hpp"
#include "ntfp_exp.hpp"
#include "rank_regimes.hpp"
#include "results.hpp"
#include "transformer_rank.hpp"
#include "verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>

#ifndef GSNTK_CONFIG_DIR
#define GSNTK_CONFIG_DIR "configs"
#endif

namespace gsntk {

struct Experiment {
  std::string name;
  std::string help;
  /// Parses the config object (throws ConfigError) and returns a runner.
  std::function<std::function<RunOutput(std::uint64_t, int)>(const Json&)> prepare;
};

namespace detail {

/// Drops the optional top-level "experiment" key after checking it names `name`.
inline Json body_for(const std::string& name, const Json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  Json b = j;
  if (auto it = b.find("experiment"); it != b.end()) {
    if (!it->is_string() || it->get<std::string>() != name)
      throw ConfigError("config field /experiment: this file is for " + it->dump() + ", not \"" + name + "\"");
    b.erase("experiment");
  }
  return b;
}

template <class Cfg, class Run>
Experiment make_experiment(std::string name, std::string help, Run run) {
  Experiment e{name, std::move(help), {}};
  e.prepare = [name, run](const Json& j) {
    Json body = body_for(name, j);
    Cfg cfg = Cfg::from(Section(body));
    return std::function<RunOutput(std::uint64_t, int)>(
        [cfg, run](std::uint64_t seed, int workers) { return run(cfg, seed, workers); });
  };
  return e;
}

}  // namespace detail

inline const std::vector<Experiment>& experiments() {
  static const std::vector<Experiment> list{
      detail::make_experiment<CoreAlignmentConfig>("core-alignment", "NTK vs weight-site core along GRU training",
                                                   run_core_alignment),
      detail::make_experiment<SelfrefConfig>("selfref", "target-mode learning of two GRU initializations",
                                             run_selfref),
      detail::make_experiment<RankRegimesConfig>("rank-regimes", "RNN temporal/spatial NTK ranks over gain and input rank",
                                                 run_rank_regimes),
      detail::make_experiment<TransformerRankConfig>("transformer-rank", "attention NTK temporal rank sweeps",
                                                     run_transformer_rank),
      detail::make_experiment<NtfpExpConfig>("ntfp", "dynamics with added non-trivial fixed points", run_ntfp),
  };
  return list;
}

inline const Experiment& find_experiment(const std::string& name) {
  for (const auto& e : experiments())
    if (e.name == name) return e;
  throw ConfigError("unknown experiment '" + name + "'");
}

/// "N", "a..b" (inclusive) or "a,b,c".
inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  auto num = [&](const std::string& t) -> std::uint64_t {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("--seed: '" + s + "' is not N, A..B or A,B,C");
    return std::stoull(t);
  };
  std::vector<std::uint64_t> out;
  if (auto p = s.find(".."); p != std::string::npos) {
    const auto a = num(s.substr(0, p)), b = num(s.substr(p + 2));
    if (b < a) throw ConfigError("--seed: empty range '" + s + "'");
    if (b - a >= 10000) throw ConfigError("--seed: range '" + s + "' is too long");
    for (auto v = a; v <= b; ++v) out.push_back(v);
  } else {
    std::stringstream ss(s);
    for (std::string t; std::getline(ss, t, ',');) out.push_back(num(t));
    if (out.empty()) throw ConfigError("--seed: no seeds given");
  }
  return out;
}

inline void print_checks(std::ostream& os, const std::vector<CheckResult>& checks) {
  for (const auto& c : checks) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s  %-48s %-12.6g %s %-10.4g", c.pass() ? "PASS" : "FAIL", c.name.c_str(),
                  c.value, c.at_most ? "<=" : ">=", c.threshold);
    os << line;
    if (c.seconds > 0) os << "  (" << std::fixed << std::setprecision(2) << c.seconds << std::defaultfloat << "s)";
    os << '\n';
  }
}

inline int cli_main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"gsntk: global-state NTK operators and experiments"};
  app.require_subcommand(1);
  std::string seed_arg = "0", out_dir = "runs", config_path, scale = "desk";
  int threads = 0;

  auto* verify = app.add_subcommand("verify", "theorem and oracle suite; prints a pass/fail table");
  verify->add_option("--seed", seed_arg, "seed: N, A..B or A,B,C");

  for (const auto& e : experiments()) {
    auto* sc = app.add_subcommand(e.name, e.help);
    sc->add_option("--config", config_path, "config file (default: <config dir>/<scale>/<experiment>.json)");
    sc->add_option("--scale", scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    sc->add_option("--seed", seed_arg, "seed: N, A..B or A,B,C; several seeds write to <out>/seed-N");
    sc->add_option("--out", out_dir, "output directory");
    sc->add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    const auto seeds = parse_seeds(seed_arg);
    auto* sub = app.get_subcommands().front();
    if (sub == verify) {
      bool ok = true;
      for (auto s : seeds) {
        out << "verify --seed " << s << '\n';
        auto rep = run_verify(s);
        print_checks(out, rep.checks);
        ok = ok && rep.all_passed();
      }
      out << (ok ? "all checks passed" : "some checks FAILED") << '\n';
      return ok ? 0 : 1;
    }

    const auto& ex = find_experiment(sub->get_name());
    const std::string path =
        config_path.empty() ? std::string(GSNTK_CONFIG_DIR) + "/" + scale + "/" + ex.name + ".json" : config_path;
    auto run = ex.prepare(load_config(path));

    bool ok = true;
    for (auto s : seeds) {
      const auto dir = seeds.size() == 1 ? std::filesystem::path(out_dir)
                                         : std::filesystem::path(out_dir) / ("seed-" + std::to_string(s));
      const auto t0 = std::chrono::steady_clock::now();
      RunOutput r;
      try {
        r = run(s, threads);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        err << ex.name << " seed " << s << " failed: " << e.what() << '\n';
        ok = false;
        continue;
      }
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_run(r, dir, wall, scale);
      out << ex.name << " seed " << s << " -> " << dir.string() << " (" << std::fixed << std::setprecision(1)
          << wall << std::defaultfloat << "s)\n";
      print_checks(out, r.checks);
      ok = ok && r.passed();
    }
    return ok ? 0 : 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace gsntk

#endif  // GSNTK_EXP_CLI_HPP
