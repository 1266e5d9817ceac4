#pragma once

// Self-contained battery of numerical checks behind `svmp verify`.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "svmp/bmf.hpp"
#include "svmp/diagnostics.hpp"
#include "svmp/io.hpp"
#include "svmp/optimizer.hpp"
#include "svmp/ratings.hpp"
#include "svmp/rng.hpp"

namespace svmp {

struct CheckResult {
  std::string check;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t trials = 100;
  std::size_t fisher_samples = 1'000'000;
  std::size_t cross_cov_samples = 100'000;
};

inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kStationarityTolerance = 1e-5;
inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kFisherMcTolerance = 0.02;
inline constexpr double kEnumerationTolerance = 1e-12;
inline constexpr double kRunningAverageTolerance = 1e-12;

/// Two-sided normal critical value for which `tests` independent checks have
/// a combined false-alarm rate equal to a single 3-sigma check.
inline double family_critical_value(std::size_t tests) {
  const double single = std::erfc(3.0 / std::sqrt(2.0));
  const double target = single / static_cast<double>(std::max<std::size_t>(1, tests));
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > target ? lo : hi) = mid;
  }
  return hi;
}

struct IdentityWrap {
  const BmfModel& operator()(const BmfModel& m) const noexcept { return m; }
};

/// Runs every check. `wrap` maps the bilinear model to the network under
/// test, which lets a test fixture inject faults into the update equations.
template <class Wrap = IdentityWrap>
std::vector<CheckResult> run_verify_suite(const VerifyOptions& opt, Wrap wrap = {}) {
  std::vector<CheckResult> results;
  Rng rng = Rng::stream(opt.seed, Stream::diagnostics);
  const std::size_t trials = std::max<std::size_t>(1, opt.trials);

  // Gradient checks on random small instances, then again at the optimum.
  double grad_err = 0.0, nat_err = 0.0, stationary = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const SyntheticSpec spec{12, 16, 3, 0.3, 1.0};
    const auto data = generate_synthetic(spec, rng.next()).first;
    const BmfModel model(data, spec.K);
    const auto& net = wrap(model);
    FactorState state = random_state(spec.M, spec.N, spec.K, rng);
    const std::size_t flat = rng.below(net.num_factors());

    const Vec2 fd = finite_diff_gradient(net, state, flat, kFiniteDiffStep);
    const Vec2 an = analytic_gradient(net, state, flat);
    grad_err = std::max(grad_err, norm(an - fd) / std::max(1.0, norm(an)));
    nat_err = std::max(nat_err, natural_gradient_check(net, state, flat).relative_error);

    state[flat] = full_vb_target(net, state, flat);
    stationary = std::max(stationary, norm(finite_diff_gradient(net, state, flat, kFiniteDiffStep)));
  }
  results.push_back({"gradient", grad_err, kGradientTolerance, grad_err <= kGradientTolerance});
  results.push_back({"natural_gradient", nat_err, kGradientTolerance, nat_err <= kGradientTolerance});
  results.push_back({"stationarity", stationary, kStationarityTolerance,
                     stationary <= kStationarityTolerance});

  for (const auto& [name, lambda] : {std::pair{"fisher_mc_1_0", GaussianNatural(1.0, 0.0)},
                                      std::pair{"fisher_mc_4_4", GaussianNatural(4.0, 4.0)}}) {
    const double err = fisher_entry_error(mc_fisher(lambda, opt.fisher_samples, rng.next()),
                                          fisher(lambda));
    results.push_back({name, err, kFisherMcTolerance, err <= kFisherMcTolerance});
  }

  double subset_dev = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const SyntheticSpec spec{6, 8, 2, 0.5, 1.0};
    const auto data = generate_synthetic(spec, rng.next()).first;
    const BmfModel model(data, spec.K);
    const auto& net = wrap(model);
    const FactorState state = random_state(spec.M, spec.N, spec.K, rng);
    std::size_t flat = rng.below(net.num_factors());
    while (net.children(flat).size() > 8) flat = (flat + 1) % net.num_factors();
    const std::size_t n_i = net.children(flat).size();
    for (std::size_t C = 1; C <= n_i; ++C) {
      subset_dev = std::max(subset_dev, subset_expectation_check(net, state, flat, C));
    }
  }
  results.push_back({"subset_expectation", subset_dev, kEnumerationTolerance,
                     subset_dev <= kEnumerationTolerance});

  double avg_dev = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::vector<GaussianNatural> temps;
    for (int i = 0; i < 50; ++i) {
      const double p = 0.5 + 20.0 * rng.uniform();
      temps.emplace_back(p, p * rng.normal(0.0, 2.0));
    }
    avg_dev = std::max(avg_dev, running_average_check(temps));
  }
  results.push_back({"running_average", avg_dev, kRunningAverageTolerance,
                     avg_dev <= kRunningAverageTolerance});

  std::size_t mismatched = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const SyntheticSpec spec{8, 10, 2, 0.3, 1.0};
    const auto data = generate_synthetic(spec, rng.next()).first;
    mismatched += full_vb_equivalence_mismatches(data, spec.K, 3, rng.next());
  }
  results.push_back({"full_vb_equivalence", static_cast<double>(mismatched), 0.0,
                     mismatched == 0});

  const std::size_t pairs = trials;
  double worst_z = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const double pi = 0.5 + 4.5 * rng.uniform();
    const double pj = 0.5 + 4.5 * rng.uniform();
    const GaussianNatural qi(pi, pi * rng.normal());
    const GaussianNatural qj(pj, pj * rng.normal());
    worst_z = std::max(worst_z, cross_covariance_zscore(qi, qj, opt.cross_cov_samples, rng));
  }
  const double z_crit = family_critical_value(4 * pairs);
  results.push_back({"fisher_block_diagonal", worst_z, z_crit, worst_z <= z_crit});
  return results;
}

inline void write_verify_csv(const std::vector<CheckResult>& results, std::ostream& out) {
  out << "check,value,tolerance,pass\n";
  for (const CheckResult& r : results) {
    out << r.check << ',' << format_real(r.value) << ',' << format_real(r.tolerance) << ','
        << (r.pass ? 1 : 0) << '\n';
  }
}

}  // namespace svmp
