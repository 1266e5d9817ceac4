#pragma once

// `svmp` command-line front end.
//
// Exit codes: 0 success, 1 usage or I/O error, 2 completed with divergence.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "svmp/experiment.hpp"
#include "svmp/io.hpp"
#include "svmp/optimizer.hpp"
#include "svmp/ratings.hpp"
#include "svmp/svg.hpp"
#include "svmp/verify.hpp"

namespace svmp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitDiverged = 2;

inline constexpr const char* kDefaultSynthetic = "200,300,5,0.08,1";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Accepts decimals and simple fractions such as "1/512".
inline double parse_real(const std::string& text) {
  const auto slash = text.find('/');
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw UsageError("'" + text + "' is not a number");
    }
    if (used != s.size()) throw UsageError("'" + text + "' is not a number");
    return v;
  };
  if (slash == std::string::npos) return number(text);
  const double den = number(text.substr(slash + 1));
  if (den == 0.0) throw UsageError("'" + text + "' divides by zero");
  return number(text.substr(0, slash)) / den;
}

inline SyntheticSpec parse_synthetic(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
  if (parts.size() != 5) {
    throw UsageError("--synthetic expects M,N,K,density,noise_sd, got '" + text + "'");
  }
  auto count = [&](const std::string& s) {
    const double v = parse_real(s);
    if (!(v >= 1.0) || v != std::floor(v)) throw UsageError("'" + s + "' is not a positive count");
    return static_cast<std::size_t>(v);
  };
  return {count(parts[0]), count(parts[1]), count(parts[2]), parse_real(parts[3]),
          parse_real(parts[4])};
}

template <class T>
std::vector<T> unique_in_order(const std::vector<T>& xs) {
  std::vector<T> out;
  for (const T& x : xs) {
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

struct RunFlags {
  std::string data_path;
  std::string synthetic;
  std::string algorithm = "full";
  std::string option = "a";
  std::size_t C = 1;
  std::size_t C_global = 100;
  std::size_t K = 5;
  double kappa = 0.6;
  double tau = 0.0;
  std::string scale = "1";
  std::size_t warm_hold = 0;
  std::size_t t_max = 100;
  std::size_t eval_every = 1;
  std::uint64_t seed = 1;
  double init_sd = 0.1;
  std::string out = "svmp_out";

  void add_to(CLI::App& app) {
    auto* data = app.add_option("--data", data_path, "Ratings file: user<TAB>item<TAB>rating");
    app.add_option("--synthetic", synthetic,
                   "Synthetic data M,N,K,density,noise_sd (default " +
                       std::string(kDefaultSynthetic) + ")")
        ->excludes(data);
    app.add_option("--algorithm", algorithm, "full | alg1 | alg2")->capture_default_str();
    app.add_option("--option", option, "a (interleaved) | b (global)")->capture_default_str();
    app.add_option("--C", C, "Children sampled per factor (alg1)")->capture_default_str();
    app.add_option("--C-global", C_global, "Ratings per batch (alg2)")->capture_default_str();
    app.add_option("--K", K, "Trait dimensions of the model")->capture_default_str();
    app.add_option("--kappa", kappa, "Forgetting rate in (0.5, 1]")->capture_default_str();
    app.add_option("--tau", tau, "Delay >= 0")->capture_default_str();
    app.add_option("--scale", scale, "Initial step multiplier in (0, 1]; fractions allowed")
        ->capture_default_str();
    app.add_option("--warm-hold", warm_hold, "Iterations with rho pinned to --scale")
        ->capture_default_str();
    app.add_option("--t-max", t_max, "Outer iterations")->capture_default_str();
    app.add_option("--eval-every", eval_every, "Iterations between ELBO evaluations")
        ->capture_default_str();
    app.add_option("--seed", seed, "Master seed for data, initialization and sampling")
        ->capture_default_str();
    app.add_option("--init-sd", init_sd, "Std. dev. of the initial factor means")
        ->capture_default_str();
    app.add_option("--out", out, "Output directory")->capture_default_str();
  }

  RunConfig config() const {
    RunConfig c;
    c.algorithm = parse_algorithm(algorithm);
    c.option = parse_option(option);
    c.C = C;
    c.C_global = C_global;
    c.K = K;
    c.t_max = t_max;
    c.seed = seed;
    c.eval_every = eval_every;
    c.init_sd = init_sd;
    c.schedule = ScheduleParams{kappa, tau, parse_real(scale), warm_hold};
    c.validate();
    return c;
  }

  std::string data_description() const {
    return data_path.empty() ? "synthetic:" + (synthetic.empty() ? kDefaultSynthetic : synthetic)
                             : "file:" + data_path;
  }

  SparseRatings load_data() const {
    if (!data_path.empty()) {
      std::ifstream in(data_path, std::ios::binary);
      if (!in) throw std::runtime_error("cannot open " + data_path);
      return load_ratings(in).data;
    }
    const SyntheticSpec spec = parse_synthetic(synthetic.empty() ? kDefaultSynthetic : synthetic);
    return generate_synthetic(spec, seed).first;
  }
};

inline void write_config_echo(const std::filesystem::path& path, const RunConfig& c,
                              const RunFlags& flags, const SparseRatings& data) {
  write_text_file(path, [&](std::ostream& out) {
    out << "data=" << flags.data_description() << '\n'
        << "users=" << data.num_users() << '\n'
        << "items=" << data.num_items() << '\n'
        << "ratings=" << data.size() << '\n'
        << "algorithm=" << to_string(c.algorithm) << '\n'
        << "option=" << to_string(c.option) << '\n'
        << "C=" << c.C << '\n'
        << "C_global=" << c.C_global << '\n'
        << "K=" << c.K << '\n'
        << "kappa=" << format_real(c.schedule.kappa) << '\n'
        << "tau=" << format_real(c.schedule.tau) << '\n'
        << "scale=" << format_real(c.schedule.scale) << '\n'
        << "warm_hold=" << c.schedule.warm_hold << '\n'
        << "t_max=" << c.t_max << '\n'
        << "eval_every=" << c.eval_every << '\n'
        << "seed=" << c.seed << '\n'
        << "init_sd=" << format_real(c.init_sd) << '\n';
  });
}

inline int cmd_run(const RunFlags& flags, std::ostream& out) {
  const RunConfig config = flags.config();
  const SparseRatings data = flags.load_data();
  const RunLog log = run(data, config);

  const std::filesystem::path dir(flags.out);
  std::filesystem::create_directories(dir);
  write_text_file(dir / "run.csv", [&](std::ostream& o) { write_convergence_csv(log, o); });
  write_text_file(dir / "final.ckpt", [&](std::ostream& o) { checkpoint_save(log.final_state, o); });
  write_config_echo(dir / "config.txt", config, flags, data);

  const RunLogEntry& last = log.entries.back();
  out << cell_name(config) << ": t=" << last.t << " ratings_accessed=" << last.ratings_accessed
      << " elbo=" << format_real(last.elbo) << (last.diverged ? " DIVERGED" : "") << '\n';
  return log.diverged() ? kExitDiverged : kExitOk;
}

struct GridFlags {
  std::vector<std::string> algorithms{"alg1"};
  std::vector<std::string> options{"a"};
  std::vector<std::size_t> C_list{1, 2, 5, 10, 20};
  std::vector<std::size_t> C_global_list{100};
  std::vector<std::string> scales{"1"};
  std::size_t jobs = 0;
  std::size_t cap = kDefaultGridCap;

  void add_to(CLI::App& app) {
    app.add_option("--algorithm-list", algorithms, "Algorithms, e.g. alg1,alg2,full")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--option-list", options, "Options, e.g. a,b")->delimiter(',')->capture_default_str();
    app.add_option("--C-list", C_list, "Values of C for alg1")->delimiter(',')->capture_default_str();
    app.add_option("--C-global-list", C_global_list, "Values of C_global for alg2")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--scale-list", scales, "Step scales, e.g. 1,1/64,1/512")
        ->delimiter(',')
        ->capture_default_str();
    app.add_option("--jobs", jobs, "Worker threads (0 = hardware concurrency)")
        ->capture_default_str();
    app.add_option("--cap", cap, "Maximum number of grid cells")->capture_default_str();
  }
};

inline int cmd_grid(const RunFlags& flags, const GridFlags& gflags, std::ostream& out) {
  ExperimentGrid grid;
  grid.base = flags.config();
  grid.algorithm_values.clear();
  for (const auto& a : unique_in_order(gflags.algorithms)) grid.algorithm_values.push_back(parse_algorithm(a));
  grid.option_values.clear();
  for (const auto& o : unique_in_order(gflags.options)) grid.option_values.push_back(parse_option(o));
  grid.C_values = unique_in_order(gflags.C_list);
  grid.C_global_values = unique_in_order(gflags.C_global_list);
  grid.scale_values.clear();
  for (const auto& s : gflags.scales) grid.scale_values.push_back(parse_real(s));
  grid.scale_values = unique_in_order(grid.scale_values);
  grid.cap = gflags.cap;
  const std::vector<RunConfig> cells = grid.expand();

  const SparseRatings data = flags.load_data();
  const std::filesystem::path dir(flags.out);
  std::filesystem::create_directories(dir);
  const std::size_t jobs =
      gflags.jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : gflags.jobs;

  const auto logs = run_cells(data, cells, jobs, [&](std::size_t i, const RunLog& log) {
    write_text_file(dir / (cell_name(cells[i]) + ".csv"),
                    [&](std::ostream& o) { write_convergence_csv(log, o); });
  });

  write_text_file(dir / "summary.csv", [&](std::ostream& o) { write_summary_csv(logs, o); });
  std::vector<PlotCurve> curves;
  for (const RunLog& log : logs) curves.push_back(to_curve(log, cell_name(log.config)));
  write_text_file(dir / "convergence.svg", [&](std::ostream& o) {
    emit_svg_plot(curves, o, "ELBO vs. ratings accessed (" + flags.data_description() + ")");
  });
  if (!cells.empty()) write_config_echo(dir / "config.txt", cells.front(), flags, data);

  bool any_diverged = false;
  for (const RunLog& log : logs) {
    const RunLogEntry& last = log.entries.back();
    out << std::left << std::setw(26) << cell_name(log.config) << " t=" << std::setw(6) << last.t
        << " accessed=" << std::setw(12) << last.ratings_accessed
        << " elbo=" << format_real(last.elbo) << (last.diverged ? "  DIVERGED" : "") << '\n';
    any_diverged = any_diverged || last.diverged;
  }
  return any_diverged ? kExitDiverged : kExitOk;
}

inline int cmd_verify(const VerifyOptions& opt, const std::string& csv_path, std::ostream& out) {
  const auto results = run_verify_suite(opt);
  bool all = true;
  out << std::left << std::setw(24) << "check" << std::setw(26) << "value" << std::setw(26)
      << "tolerance" << "result\n";
  for (const CheckResult& r : results) {
    out << std::left << std::setw(24) << r.check << std::setw(26) << format_real(r.value)
        << std::setw(26) << format_real(r.tolerance) << (r.pass ? "PASS" : "FAIL") << '\n';
    all = all && r.pass;
  }
  if (!csv_path.empty()) {
    const auto parent = std::filesystem::path(csv_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    write_text_file(csv_path, [&](std::ostream& o) { write_verify_csv(results, o); });
  }
  return all ? kExitOk : kExitUsage;
}

/// Entry point shared by the executable and the tests.
inline int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stochastic variational message passing experiments for Bayesian matrix "
               "factorization",
               "svmp"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Execute one training run");
  run_flags.add_to(*run_cmd);

  RunFlags grid_run_flags;
  grid_run_flags.algorithm = "alg1";
  GridFlags grid_flags;
  auto* grid_cmd = app.add_subcommand("grid", "Run a cartesian grid of configurations");
  grid_run_flags.add_to(*grid_cmd);
  grid_flags.add_to(*grid_cmd);

  VerifyOptions verify_opt;
  std::string verify_csv;
  auto* verify_cmd = app.add_subcommand("verify", "Run the numerical self-checks");
  verify_cmd->add_option("--seed", verify_opt.seed, "Seed")->capture_default_str();
  verify_cmd->add_option("--trials", verify_opt.trials, "Random states per check")
      ->capture_default_str();
  verify_cmd->add_option("--out", verify_csv, "Write check,value,tolerance,pass CSV here");

  std::vector<const char*> argv{"svmp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_flags, out);
    if (grid_cmd->parsed()) return cmd_grid(grid_run_flags, grid_flags, out);
    if (verify_cmd->parsed()) return cmd_verify(verify_opt, verify_csv, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n\n" << app.help() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace svmp::cli
