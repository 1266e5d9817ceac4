#pragma once

// Independent numerical checks of the update equations. Finite differences
// of the ELBO are compared with cov[phi] (lambda* - lambda), and subsampled
// updates are averaged exhaustively against the full update.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "svmp/bmf.hpp"
#include "svmp/expfam.hpp"
#include "svmp/optimizer.hpp"
#include "svmp/rng.hpp"

namespace svmp {

using Vec2 = std::array<double, 2>;

inline double norm(const Vec2& v) noexcept { return std::hypot(v[0], v[1]); }
inline Vec2 operator-(const Vec2& a, const Vec2& b) noexcept { return {a[0] - b[0], a[1] - b[1]}; }

inline Vec2 as_vec(const GaussianNatural& g) noexcept {
  return {g.precision(), g.mean_times_precision()};
}

struct GradientCheckReport {
  FactorAddress factor;
  Vec2 analytic{};
  Vec2 numeric{};
  double relative_error = 0.0;
  double fisher_condition = 1.0;
};

inline constexpr double kFisherConditionWarning = 1e8;

/// Which ELBO the finite differences are taken of. `local` keeps only the
/// terms that involve the perturbed factor; `full` evaluates the whole bound.
/// Both have the same derivatives; `local` loses far less to cancellation.
enum class FdObjective { local, full };

/// Central differences of the ELBO along (precision, mtp) of one factor with
/// every other factor frozen. Throws std::domain_error if the precision
/// perturbation would reach zero; callers halve h and retry.
template <ConjugateNetwork Net>
Vec2 finite_diff_gradient(const Net& net, const FactorState& state, std::size_t flat, double h,
                          FdObjective objective = FdObjective::local) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  const GaussianNatural center = state[flat];
  if (!(center.precision() - h > 0.0)) {
    throw std::domain_error("finite_diff_gradient: step would make the precision non-positive");
  }
  FactorState probe = state;
  auto eval = [&](double dp, double dh) {
    probe[flat] = GaussianNatural(center.precision() + dp, center.mean_times_precision() + dh);
    return objective == FdObjective::local ? net.local_elbo(probe, flat) : net.elbo(probe);
  };
  const double dp = (eval(h, 0.0) - eval(-h, 0.0)) / (2.0 * h);
  const double dm = (eval(0.0, h) - eval(0.0, -h)) / (2.0 * h);
  return {dp, dm};
}

/// cov_i[phi] (lambda* - lambda), the closed-form component gradient.
template <ConjugateNetwork Net>
Vec2 analytic_gradient(const Net& net, const FactorState& state, std::size_t flat) {
  const GaussianNatural target = full_vb_target(net, state, flat);
  return fisher(state[flat]) * (as_vec(target) - as_vec(state[flat]));
}

/// Compares lambda* - lambda with fisher^-1 times the finite-difference
/// gradient. relative_error = |analytic - numeric| / max(1, |analytic|).
template <ConjugateNetwork Net>
GradientCheckReport natural_gradient_check(const Net& net, const FactorState& state,
                                           std::size_t flat, double h = 1e-5) {
  GradientCheckReport report;
  report.factor = net.address(flat);
  report.analytic = as_vec(full_vb_target(net, state, flat)) - as_vec(state[flat]);
  Vec2 grad;
  for (;;) {
    try {
      grad = finite_diff_gradient(net, state, flat, h);
      break;
    } catch (const std::domain_error&) {
      h *= 0.5;
    }
  }
  const FisherMatrix F = fisher(state[flat]);
  report.fisher_condition = F.condition_number();
  report.numeric = F.inverse() * grad;
  report.relative_error =
      norm(report.analytic - report.numeric) / std::max(1.0, norm(report.analytic));
  return report;
}

/// Empirical covariance of phi(x) = (-x^2/2, x) over n draws from q.
inline FisherMatrix mc_fisher(const GaussianNatural& lambda, std::size_t n, std::uint64_t seed) {
  if (n < 10000) throw std::invalid_argument("mc_fisher: need at least 1e4 samples");
  Rng rng = Rng::stream(seed, Stream::diagnostics);
  const double mu = lambda.mean();
  const double sd = std::sqrt(lambda.variance());
  // Welford co-moment updates.
  double m1 = 0.0, m2 = 0.0, c11 = 0.0, c12 = 0.0, c22 = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double x = rng.normal(mu, sd);
    const double s1 = -0.5 * x * x;
    const double s2 = x;
    const double d1 = s1 - m1;
    const double d2 = s2 - m2;
    m1 += d1 / static_cast<double>(i);
    m2 += d2 / static_cast<double>(i);
    c11 += d1 * (s1 - m1);
    c12 += d1 * (s2 - m2);
    c22 += d2 * (s2 - m2);
  }
  const double denom = static_cast<double>(n - 1);
  return {c11 / denom, c12 / denom, c22 / denom};
}

/// Largest entrywise error of `estimate` against `exact`: relative for
/// non-zero entries, absolute for zero entries.
inline double fisher_entry_error(const FisherMatrix& estimate, const FisherMatrix& exact) {
  auto err = [](double est, double ref) {
    return ref == 0.0 ? std::abs(est) : std::abs(est - ref) / std::abs(ref);
  };
  return std::max({err(estimate.a11, exact.a11), err(estimate.a12, exact.a12),
                   err(estimate.a22, exact.a22)});
}

namespace detail {

// Calls visit(subset) for every k-subset of {0..n-1} in lexicographic order.
template <class Visit>
void for_each_combination(std::size_t n, std::size_t k, Visit&& visit) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k > n) return;
  for (;;) {
    visit(std::span<const std::size_t>(idx));
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace detail

inline constexpr std::size_t kMaxEnumeratedChildren = 12;

/// Averages lambda_temp over every C-subset of the factor's children and
/// returns the infinity-norm distance to full_vb_target.
template <ConjugateNetwork Net>
double subset_expectation_check(const Net& net, const FactorState& state, std::size_t flat,
                                std::size_t C) {
  const auto ch = net.children(flat);
  if (ch.size() > kMaxEnumeratedChildren) {
    throw std::invalid_argument("subset_expectation_check: too many children to enumerate");
  }
  if (ch.empty() || C == 0) {
    throw std::invalid_argument("subset_expectation_check: need at least one child and C >= 1");
  }
  const std::size_t c = std::min(C, ch.size());
  double sum_p = 0.0, sum_h = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> sample(c);
  detail::for_each_combination(ch.size(), c, [&](std::span<const std::size_t> pick) {
    for (std::size_t j = 0; j < c; ++j) sample[j] = ch[pick[j]];
    const GaussianNatural t = lambda_temp(net, state, flat, sample, ch.size());
    sum_p += t.precision();
    sum_h += t.mean_times_precision();
    ++count;
  });
  const GaussianNatural target = full_vb_target(net, state, flat);
  const double n = static_cast<double>(count);
  return std::max(std::abs(sum_p / n - target.precision()),
                  std::abs(sum_h / n - target.mean_times_precision()));
}

struct BatchExpectation {
  Vec2 conditional_mean{};  // E[lambda_temp | factor touched by the batch]
  Vec2 target{};            // full_vb_target
  double touch_probability = 0.0;
  double max_deviation = 0.0;
};

/// Enumerates every size-C_global batch of observations (all equally likely)
/// and averages the global-batch temp of one factor over the batches that
/// touch it.
template <ConjugateNetwork Net>
BatchExpectation batch_expectation(const Net& net, const FactorState& state, std::size_t flat,
                                   std::size_t C_global) {
  const std::size_t total = net.num_observations();
  if (total > 20) throw std::invalid_argument("batch_expectation: too many observations");
  const auto ch = net.children(flat);
  std::vector<char> is_child(total, 0);
  for (std::size_t r : ch) is_child[r] = 1;

  double sum_p = 0.0, sum_h = 0.0;
  std::size_t touched = 0, batches = 0;
  std::vector<std::size_t> di;
  detail::for_each_combination(total, std::min(C_global, total),
                               [&](std::span<const std::size_t> batch) {
    ++batches;
    di.clear();
    for (std::size_t r : batch) {
      if (is_child[r]) di.push_back(r);
    }
    if (di.empty()) return;
    ++touched;
    const GaussianNatural t = lambda_temp(net, state, flat, di, ch.size());
    sum_p += t.precision();
    sum_h += t.mean_times_precision();
  });
  BatchExpectation out;
  out.target = as_vec(full_vb_target(net, state, flat));
  out.touch_probability = static_cast<double>(touched) / static_cast<double>(batches);
  if (touched > 0) {
    out.conditional_mean = {sum_p / static_cast<double>(touched),
                            sum_h / static_cast<double>(touched)};
    const Vec2 d = out.conditional_mean - out.target;
    out.max_deviation = std::max(std::abs(d[0]), std::abs(d[1]));
  }
  return out;
}

/// Runs the option-(a) blend with rho_t = 1/t over a fixed stream of temps
/// for one factor and returns the infinity-norm distance to their arithmetic
/// mean.
inline double running_average_check(std::span<const GaussianNatural> temps,
                                    GaussianNatural start = {}) {
  if (temps.empty()) throw std::invalid_argument("running_average_check: empty stream");
  const ScheduleParams harmonic{1.0, 0.0, 1.0, 0};
  GaussianNatural current = start;
  double sum_p = 0.0, sum_h = 0.0;
  for (std::size_t t = 1; t <= temps.size(); ++t) {
    current = blend(current, temps[t - 1], schedule_rho(t, harmonic));
    sum_p += temps[t - 1].precision();
    sum_h += temps[t - 1].mean_times_precision();
  }
  const double n = static_cast<double>(temps.size());
  return std::max(std::abs(current.precision() - sum_p / n),
                  std::abs(current.mean_times_precision() - sum_h / n));
}

/// Runs `sweeps` full-VB sweeps and the matching alg1 option-(a) runs with
/// C >= max N_i and rho fixed at 1, comparing states after every sweep.
/// Returns the number of sweeps whose states differ in any bit.
inline std::size_t full_vb_equivalence_mismatches(const SparseRatings& data, std::size_t K,
                                                  std::size_t sweeps, std::uint64_t seed) {
  const BmfModel model(data, K);
  const FactorState start = init_state(data.num_users(), data.num_items(), K, seed);
  RunConfig config;
  config.algorithm = Algorithm::alg1;
  config.option = UpdateOption::a;
  config.K = K;
  config.C = std::max<std::size_t>(1, data.max_children());
  config.seed = seed;
  config.eval_every = sweeps;
  config.schedule = ScheduleParams{0.6, 0.0, 1.0, sweeps};

  FactorState full = start;
  std::size_t mismatches = 0;
  for (std::size_t s = 1; s <= sweeps; ++s) {
    sweep_full_vb(model, full);
    config.t_max = s;
    const RunLog log = run_alg1(model, start, config);
    if (!(log.final_state == full)) ++mismatches;
  }
  return mismatches;
}

/// Random state with precisions uniform on [min_precision, max_precision]
/// and means drawn from N(0, mean_sd^2).
inline FactorState random_state(std::size_t M, std::size_t N, std::size_t K, Rng& rng,
                                double min_precision = 0.5, double max_precision = 5.0,
                                double mean_sd = 1.0) {
  std::vector<GaussianNatural> flat;
  flat.reserve((M + N) * K);
  for (std::size_t i = 0; i < (M + N) * K; ++i) {
    const double p = min_precision + (max_precision - min_precision) * rng.uniform();
    flat.emplace_back(p, p * rng.normal(0.0, mean_sd));
  }
  return {M, N, K, std::move(flat)};
}

/// Monte Carlo cross-covariance between phi(x_i) and phi(x_j) drawn from
/// the factorized q. Returns the largest |estimate| / standard error over
/// the four entries.
inline double cross_covariance_zscore(const GaussianNatural& qi, const GaussianNatural& qj,
                                      std::size_t n, Rng& rng) {
  const double mi = qi.mean(), si = std::sqrt(qi.variance());
  const double mj = qj.mean(), sj = std::sqrt(qj.variance());
  std::array<double, 4> mean{};       // phi_i1, phi_i2, phi_j1, phi_j2
  std::array<double, 4> cross{};      // co-moments (i1,j1) (i1,j2) (i2,j1) (i2,j2)
  std::array<double, 4> var{};
  for (std::size_t t = 1; t <= n; ++t) {
    const double xi = rng.normal(mi, si);
    const double xj = rng.normal(mj, sj);
    const std::array<double, 4> s = {-0.5 * xi * xi, xi, -0.5 * xj * xj, xj};
    std::array<double, 4> d{};
    for (int a = 0; a < 4; ++a) {
      d[a] = s[a] - mean[a];
      mean[a] += d[a] / static_cast<double>(t);
    }
    for (int a = 0; a < 4; ++a) var[a] += d[a] * (s[a] - mean[a]);
    cross[0] += d[0] * (s[2] - mean[2]);
    cross[1] += d[0] * (s[3] - mean[3]);
    cross[2] += d[1] * (s[2] - mean[2]);
    cross[3] += d[1] * (s[3] - mean[3]);
  }
  const double dn = static_cast<double>(n);
  const std::array<std::array<int, 2>, 4> pairs = {{{0, 2}, {0, 3}, {1, 2}, {1, 3}}};
  double worst = 0.0;
  for (int e = 0; e < 4; ++e) {
    const double cov = cross[e] / (dn - 1.0);
    // Under independence var(s_a s_b) = var(s_a) var(s_b).
    const double se = std::sqrt(var[pairs[e][0]] / (dn - 1.0) * var[pairs[e][1]] / (dn - 1.0) / dn);
    worst = std::max(worst, std::abs(cov) / se);
  }
  return worst;
}

}  // namespace svmp
