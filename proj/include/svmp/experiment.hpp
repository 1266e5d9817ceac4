#pragma once

// Experiment grids over (algorithm, option, C or C_global, step scale), run on
// a bounded worker pool, plus the files each run leaves behind.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "svmp/io.hpp"
#include "svmp/optimizer.hpp"
#include "svmp/ratings.hpp"
#include "svmp/svg.hpp"

namespace svmp {

inline constexpr std::size_t kDefaultGridCap = 256;

struct ExperimentGrid {
  RunConfig base;
  std::vector<Algorithm> algorithm_values{Algorithm::alg1};
  std::vector<UpdateOption> option_values{UpdateOption::a};
  std::vector<std::size_t> C_values{1};
  std::vector<std::size_t> C_global_values{100};
  std::vector<double> scale_values{1.0};
  std::size_t cap = kDefaultGridCap;

  /// Cartesian product in a fixed order. Full VB contributes one cell since
  /// it ignores option, C and scale; alg1 spans C_values and alg2 spans
  /// C_global_values.
  std::vector<RunConfig> expand() const {
    if (algorithm_values.empty() || option_values.empty() || C_values.empty() ||
        C_global_values.empty() || scale_values.empty()) {
      throw ConfigError("grid: every value list must be non-empty");
    }
    std::vector<RunConfig> cells;
    for (Algorithm alg : algorithm_values) {
      if (alg == Algorithm::full_vb) {
        RunConfig c = base;
        c.algorithm = alg;
        c.option = UpdateOption::a;
        c.schedule.scale = 1.0;
        cells.push_back(c);
        continue;
      }
      const auto& sizes = alg == Algorithm::alg1 ? C_values : C_global_values;
      for (UpdateOption opt : option_values) {
        for (std::size_t size : sizes) {
          for (double scale : scale_values) {
            RunConfig c = base;
            c.algorithm = alg;
            c.option = opt;
            (alg == Algorithm::alg1 ? c.C : c.C_global) = size;
            c.schedule.scale = scale;
            cells.push_back(c);
          }
        }
      }
      if (cells.size() > cap) break;
    }
    if (cells.size() > cap) {
      throw ConfigError("grid: " + std::to_string(cells.size()) + " cells exceed the cap of " +
                        std::to_string(cap));
    }
    for (const RunConfig& c : cells) c.validate();
    return cells;
  }
};

inline std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Human-readable, filename-safe cell name, e.g. "alg1_a_C5_s0.015625".
inline std::string cell_name(const RunConfig& c) {
  switch (c.algorithm) {
    case Algorithm::full_vb: return "full";
    case Algorithm::alg1:
      return "alg1_" + to_string(c.option) + "_C" + std::to_string(c.C) + "_s" +
             short_real(c.schedule.scale);
    case Algorithm::alg2:
      return "alg2_" + to_string(c.option) + "_G" + std::to_string(c.C_global) + "_s" +
             short_real(c.schedule.scale);
  }
  return "cell";
}

/// Runs every cell on up to `jobs` threads. Results are indexed like `cells`,
/// so output does not depend on scheduling. `on_done(i, log)` is called on the
/// worker that finished cell i.
template <class OnDone>
std::vector<RunLog> run_cells(const SparseRatings& data, const std::vector<RunConfig>& cells,
                              std::size_t jobs, OnDone&& on_done) {
  std::vector<RunLog> logs(cells.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        logs[i] = run(data, cells[i]);
        on_done(i, logs[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return logs;
}

inline std::vector<RunLog> run_cells(const SparseRatings& data,
                                     const std::vector<RunConfig>& cells, std::size_t jobs) {
  return run_cells(data, cells, jobs, [](std::size_t, const RunLog&) {});
}

inline constexpr std::string_view kSummaryHeader =
    "cell,algorithm,option,C,C_global,K,scale,kappa,tau,warm_hold,t_max,eval_every,seed,"
    "final_elbo,diverged,ratings_accessed,iterations";

inline void write_summary_csv(const std::vector<RunLog>& logs, std::ostream& out) {
  out << kSummaryHeader << '\n';
  for (const RunLog& log : logs) {
    const RunConfig& c = log.config;
    const RunLogEntry& last = log.entries.back();
    out << cell_name(c) << ',' << to_string(c.algorithm) << ',' << to_string(c.option) << ','
        << c.C << ',' << c.C_global << ',' << c.K << ',' << format_real(c.schedule.scale) << ','
        << format_real(c.schedule.kappa) << ',' << format_real(c.schedule.tau) << ','
        << c.schedule.warm_hold << ',' << c.t_max << ',' << c.eval_every << ',' << c.seed << ','
        << format_real(last.elbo) << ',' << (last.diverged ? 1 : 0) << ','
        << last.ratings_accessed << ',' << last.t << '\n';
  }
}

/// Convergence curve of a run, dropping entries with zero accesses (the
/// initial evaluation), which a log-scale axis cannot show.
inline PlotCurve to_curve(const RunLog& log, std::string label) {
  PlotCurve curve{std::move(label), {}, log.diverged()};
  for (const RunLogEntry& e : log.entries) {
    if (e.ratings_accessed > 0) {
      curve.points.emplace_back(static_cast<double>(e.ratings_accessed), e.elbo);
    }
  }
  if (curve.points.empty()) {
    // Nothing was accessed: plot the initial value at x = 1.
    curve.points.emplace_back(1.0, log.entries.front().elbo);
  }
  return curve;
}

inline void write_text_file(const std::filesystem::path& path, auto&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  writer(out);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace svmp
