#pragma once

// Training loops. Full VB coordinate ascent is the reference; the stochastic
// variants either subsample each factor's children or draw one global batch
// of ratings per iteration, and blend with a decaying step size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "svmp/bmf.hpp"
#include "svmp/expfam.hpp"
#include "svmp/rng.hpp"

namespace svmp {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// rho_t = scale * (t - warm_hold + tau)^(-kappa), pinned to `scale` for the
/// first `warm_hold` iterations and capped at 1.
struct ScheduleParams {
  double kappa = 0.6;
  double tau = 0.0;
  double scale = 1.0;
  std::size_t warm_hold = 0;

  void validate() const {
    if (!(kappa > 0.5 && kappa <= 1.0)) {
      throw ConfigError("kappa must lie in (0.5, 1], got " + std::to_string(kappa));
    }
    if (!(tau >= 0.0) || !std::isfinite(tau)) {
      throw ConfigError("tau must be non-negative, got " + std::to_string(tau));
    }
    if (!(scale > 0.0 && scale <= 1.0)) {
      throw ConfigError("scale must lie in (0, 1], got " + std::to_string(scale));
    }
  }
};

inline double schedule_rho(std::size_t t, const ScheduleParams& p) {
  if (t == 0) throw std::invalid_argument("schedule_rho: iterations are counted from 1");
  if (t <= p.warm_hold) return p.scale;
  const double base = static_cast<double>(t - p.warm_hold) + p.tau;
  return std::min(1.0, p.scale * std::pow(base, -p.kappa));
}

enum class Algorithm { full_vb, alg1, alg2 };
enum class UpdateOption { a, b };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::full_vb: return "full";
    case Algorithm::alg1: return "alg1";
    case Algorithm::alg2: return "alg2";
  }
  return "?";
}
inline std::string to_string(UpdateOption o) { return o == UpdateOption::a ? "a" : "b"; }

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "full" || s == "full_vb") return Algorithm::full_vb;
  if (s == "alg1") return Algorithm::alg1;
  if (s == "alg2") return Algorithm::alg2;
  throw ConfigError("unknown algorithm '" + s + "' (expected full, alg1 or alg2)");
}
inline UpdateOption parse_option(const std::string& s) {
  if (s == "a") return UpdateOption::a;
  if (s == "b") return UpdateOption::b;
  throw ConfigError("unknown option '" + s + "' (expected a or b)");
}

struct RunConfig {
  Algorithm algorithm = Algorithm::full_vb;
  UpdateOption option = UpdateOption::a;
  std::size_t C = 1;          // children sampled per factor (alg1)
  std::size_t C_global = 100; // ratings per batch (alg2)
  std::size_t K = 5;
  std::size_t t_max = 100;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  double init_sd = 0.1;
  ScheduleParams schedule;

  void validate() const {
    if (C < 1) throw ConfigError("C must be at least 1");
    if (C_global < 1) throw ConfigError("C_global must be at least 1");
    if (K < 1) throw ConfigError("K must be at least 1");
    if (t_max < 1) throw ConfigError("t_max must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (!(init_sd >= 0.0) || !std::isfinite(init_sd)) {
      throw ConfigError("init_sd must be non-negative");
    }
    schedule.validate();
  }
};

struct RunLogEntry {
  std::size_t t = 0;
  std::uint64_t ratings_accessed = 0;
  double elbo = 0.0;
  double rho = 0.0;
  bool diverged = false;
};

struct RunLog {
  std::vector<RunLogEntry> entries;
  RunConfig config;
  FactorState final_state;

  bool diverged() const noexcept { return !entries.empty() && entries.back().diverged; }
};

/// Every factor at unit precision with mean ~ N(0, init_sd^2).
inline FactorState init_state(std::size_t M, std::size_t N, std::size_t K, std::uint64_t seed,
                              double init_sd = 0.1) {
  if (M == 0 || N == 0 || K == 0) {
    throw std::invalid_argument("init_state: dimensions must be positive");
  }
  Rng rng = Rng::stream(seed, Stream::init);
  std::vector<GaussianNatural> flat;
  flat.reserve((M + N) * K);
  for (std::size_t i = 0; i < (M + N) * K; ++i) {
    flat.emplace_back(1.0, init_sd > 0.0 ? rng.normal(0.0, init_sd) : 0.0);
  }
  return {M, N, K, std::move(flat)};
}

/// min(C, population) distinct indices in ascending order, uniform over
/// subsets of that size. Returns the full range without consuming the
/// generator when C >= population.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t population,
                                                           std::size_t C) {
  std::vector<std::size_t> out;
  if (C >= population) {
    out.resize(population);
    for (std::size_t i = 0; i < population; ++i) out[i] = i;
    return out;
  }
  out.reserve(C);
  if (C <= 32) {
    // Floyd's algorithm.
    for (std::size_t j = population - C; j < population; ++j) {
      const std::size_t pick = rng.below(j + 1);
      if (std::find(out.begin(), out.end(), pick) == out.end()) {
        out.push_back(pick);
      } else {
        out.push_back(j);
      }
    }
    std::sort(out.begin(), out.end());
  } else {
    // Selection sampling, which emits indices in order.
    std::size_t needed = C;
    for (std::size_t i = 0; i < population && needed > 0; ++i) {
      if (rng.below(population - i) < needed) {
        out.push_back(i);
        --needed;
      }
    }
  }
  return out;
}

inline constexpr double kDivergentMeanMagnitude = 1e6;

/// True once a run has left any healthy trajectory: non-finite ELBO, a mean
/// with magnitude above 1e6, or an ELBO below initial - 10 |initial| - 100.
inline bool detect_divergence(double elbo_now, double elbo_initial, const FactorState& state) {
  if (!std::isfinite(elbo_now)) return true;
  if (elbo_now < elbo_initial - 10.0 * std::abs(elbo_initial) - 100.0) return true;
  for (const GaussianNatural& f : state.flat()) {
    if (!(std::abs(f.mean()) <= kDivergentMeanMagnitude)) return true;
  }
  return false;
}

struct NoObserver {
  void operator()(std::size_t, const FactorState&) const noexcept {}
};

/// One in-place coordinate-ascent sweep in flat order. Calls
/// `observer(flat, state)` after each factor is replaced. Returns the number
/// of ratings touched.
template <ConjugateNetwork Net, class Observer = NoObserver>
std::uint64_t sweep_full_vb(const Net& net, FactorState& state, Observer&& observer = {}) {
  std::uint64_t accessed = 0;
  for (std::size_t i = 0; i < net.num_factors(); ++i) {
    const auto ch = net.children(i);
    state[i] = accumulate_temp(net, state, i, ch, ch.size()).to_natural();
    accessed += ch.size();
    observer(i, std::as_const(state));
  }
  return accessed;
}

inline std::uint64_t sweep_full_vb(FactorState& state, const SparseRatings& data) {
  const BmfModel model(data, state.K());
  model.check_state(state);
  return sweep_full_vb(model, state);
}

namespace detail {

// Same arithmetic as blend(), without validating the result.
inline NaturalSum blend_values(const GaussianNatural& old, const NaturalSum& temp, double rho) {
  const double keep = 1.0 - rho;
  return {keep * old.precision() + rho * temp.precision,
          keep * old.mean_times_precision() + rho * temp.mtp};
}

template <ConjugateNetwork Net>
class RunRecorder {
 public:
  RunRecorder(const Net& net, const RunConfig& config, FactorState& state)
      : net_(net), config_(config), state_(state) {
    initial_elbo_ = net_.elbo(state_);
    log_.config = config;
    log_.entries.push_back({0, 0, initial_elbo_, 0.0, false});
  }

  // Returns true when the run must stop.
  bool after_iteration(std::size_t t, double rho, bool overflowed) {
    if (!overflowed && t % config_.eval_every != 0 && t != config_.t_max) return false;
    const double value = net_.elbo(state_);
    const bool diverged = overflowed || detect_divergence(value, initial_elbo_, state_);
    log_.entries.push_back({t, accessed, value, rho, diverged});
    return diverged;
  }

  RunLog finish() {
    log_.final_state = state_;
    return std::move(log_);
  }

  std::uint64_t accessed = 0;

 private:
  const Net& net_;
  const RunConfig& config_;
  FactorState& state_;
  double initial_elbo_ = 0.0;
  RunLog log_;
};

// Applies option (b): every staged temp is blended at once.
inline bool commit_all(FactorState& state, std::span<const NaturalSum> temps, double rho) {
  std::vector<GaussianNatural> next(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    const NaturalSum b = blend_values(state[i], temps[i], rho);
    if (!b.valid()) return false;
    next[i] = b.to_natural();
  }
  for (std::size_t i = 0; i < state.size(); ++i) state[i] = next[i];
  return true;
}

}  // namespace detail

/// Coordinate ascent for t_max sweeps, logged like the stochastic runs with
/// rho = 1.
template <ConjugateNetwork Net>
RunLog run_full_vb(const Net& net, FactorState state, const RunConfig& config) {
  config.validate();
  detail::RunRecorder rec(net, config, state);
  for (std::size_t t = 1; t <= config.t_max; ++t) {
    rec.accessed += sweep_full_vb(net, state);
    if (rec.after_iteration(t, 1.0, false)) break;
  }
  return rec.finish();
}

/// Per-factor subsampling of min(C, N_i) children. Option (a) blends each
/// factor as soon as its temp is formed; option (b) forms every temp from the
/// iteration-start state and blends them together at the end of the sweep.
template <ConjugateNetwork Net>
RunLog run_alg1(const Net& net, FactorState state, const RunConfig& config) {
  config.validate();
  detail::RunRecorder rec(net, config, state);
  Rng rng = Rng::stream(config.seed, Stream::run);
  const std::size_t n = net.num_factors();
  std::vector<NaturalSum> temps(config.option == UpdateOption::b ? n : 0);
  std::vector<std::size_t> sample;

  for (std::size_t t = 1; t <= config.t_max; ++t) {
    const double rho = schedule_rho(t, config.schedule);
    bool overflowed = false;
    for (std::size_t i = 0; i < n && !overflowed; ++i) {
      const auto ch = net.children(i);
      const auto picks = sample_without_replacement(rng, ch.size(), config.C);
      sample.resize(picks.size());
      for (std::size_t j = 0; j < picks.size(); ++j) sample[j] = ch[picks[j]];
      const NaturalSum temp = accumulate_temp(net, state, i, sample, ch.size());
      rec.accessed += sample.size();
      if (!temp.valid()) {
        overflowed = true;
      } else if (config.option == UpdateOption::a) {
        const NaturalSum b = detail::blend_values(state[i], temp, rho);
        if (b.valid()) {
          state[i] = b.to_natural();
        } else {
          overflowed = true;
        }
      } else {
        temps[i] = temp;
      }
    }
    if (!overflowed && config.option == UpdateOption::b) {
      overflowed = !detail::commit_all(state, temps, rho);
    }
    if (rec.after_iteration(t, rho, overflowed)) break;
  }
  return rec.finish();
}

/// Global batch sampling: each iteration draws C_global observations, and
/// only factors with a child in the batch are updated, using the children
/// that fell into the batch scaled by N_i / |D_i|.
template <ConjugateNetwork Net>
RunLog run_alg2(const Net& net, FactorState state, const RunConfig& config) {
  config.validate();
  detail::RunRecorder rec(net, config, state);
  Rng rng = Rng::stream(config.seed, Stream::run);
  const std::size_t n = net.num_factors();
  std::vector<std::vector<std::size_t>> buckets(n);
  std::vector<std::size_t> touched;
  std::vector<NaturalSum> temps;

  for (std::size_t t = 1; t <= config.t_max; ++t) {
    const double rho = schedule_rho(t, config.schedule);
    const auto batch = sample_without_replacement(rng, net.num_observations(), config.C_global);
    touched.clear();
    for (std::size_t r : batch) {
      for (std::size_t p : net.observation_parents(r)) {
        if (buckets[p].empty()) touched.push_back(p);
        buckets[p].push_back(r);
      }
    }
    std::sort(touched.begin(), touched.end());

    bool overflowed = false;
    temps.clear();
    for (std::size_t i : touched) {
      if (overflowed) break;
      const NaturalSum temp =
          accumulate_temp(net, state, i, buckets[i], net.children(i).size());
      rec.accessed += buckets[i].size();
      if (!temp.valid()) {
        overflowed = true;
      } else if (config.option == UpdateOption::a) {
        const NaturalSum b = detail::blend_values(state[i], temp, rho);
        if (b.valid()) {
          state[i] = b.to_natural();
        } else {
          overflowed = true;
        }
      } else {
        temps.push_back(temp);
      }
    }
    if (!overflowed && config.option == UpdateOption::b) {
      std::vector<GaussianNatural> next;
      next.reserve(touched.size());
      for (std::size_t j = 0; j < touched.size() && !overflowed; ++j) {
        const NaturalSum b = detail::blend_values(state[touched[j]], temps[j], rho);
        if (b.valid()) {
          next.push_back(b.to_natural());
        } else {
          overflowed = true;
        }
      }
      if (!overflowed) {
        for (std::size_t j = 0; j < touched.size(); ++j) state[touched[j]] = next[j];
      }
    }
    for (std::size_t i : touched) buckets[i].clear();
    if (rec.after_iteration(t, rho, overflowed)) break;
  }
  return rec.finish();
}

template <ConjugateNetwork Net>
RunLog run(const Net& net, FactorState state, const RunConfig& config) {
  switch (config.algorithm) {
    case Algorithm::full_vb: return run_full_vb(net, std::move(state), config);
    case Algorithm::alg1: return run_alg1(net, std::move(state), config);
    case Algorithm::alg2: return run_alg2(net, std::move(state), config);
  }
  throw ConfigError("unknown algorithm");
}

/// Initializes a state from config.seed and runs the configured algorithm on
/// the bilinear model.
inline RunLog run(const SparseRatings& data, const RunConfig& config) {
  config.validate();
  const BmfModel model(data, config.K);
  return run(model,
             init_state(data.num_users(), data.num_items(), config.K, config.seed,
                        config.init_sd),
             config);
}

}  // namespace svmp
