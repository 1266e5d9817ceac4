#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "svmp/bmf.hpp"
#include "svmp/diagnostics.hpp"
#include "svmp/optimizer.hpp"
#include "svmp/ratings.hpp"
#include "svmp/rng.hpp"

using namespace svmp;

namespace {

RunConfig stochastic(Algorithm alg, UpdateOption opt, std::size_t t_max) {
  RunConfig c;
  c.algorithm = alg;
  c.option = opt;
  c.K = 3;
  c.t_max = t_max;
  c.C = 2;
  c.C_global = 20;
  return c;
}

}  // namespace

TEST(Schedule, KnownValues) {
  const ScheduleParams p{0.6, 0.0, 1.0, 0};
  EXPECT_EQ(schedule_rho(1, p), 1.0);
  EXPECT_NEAR(schedule_rho(2, p), 0.659754, 1e-6);
  EXPECT_NEAR(schedule_rho(2, p), std::pow(2.0, -0.6), 1e-15);
  EXPECT_EQ(schedule_rho(1, ScheduleParams{0.6, 0.0, 1.0 / 512, 0}), 1.0 / 512);
  EXPECT_THROW(schedule_rho(0, p), std::invalid_argument);
}

TEST(Schedule, WarmHoldPinsToScale) {
  const ScheduleParams p{0.6, 0.0, 0.25, 3};
  EXPECT_EQ(schedule_rho(1, p), 0.25);
  EXPECT_EQ(schedule_rho(3, p), 0.25);
  EXPECT_EQ(schedule_rho(4, p), 0.25);  // (4 - 3)^-0.6 = 1
  EXPECT_NEAR(schedule_rho(5, p), 0.25 * std::pow(2.0, -0.6), 1e-15);
}

TEST(Schedule, Validation) {
  EXPECT_THROW((ScheduleParams{0.5, 0.0, 1.0, 0}.validate()), ConfigError);
  EXPECT_THROW((ScheduleParams{1.01, 0.0, 1.0, 0}.validate()), ConfigError);
  EXPECT_THROW((ScheduleParams{0.6, -1.0, 1.0, 0}.validate()), ConfigError);
  EXPECT_THROW((ScheduleParams{0.6, 0.0, 0.0, 0}.validate()), ConfigError);
  EXPECT_THROW((ScheduleParams{0.6, 0.0, 1.5, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((ScheduleParams{1.0, 0.0, 1.0, 0}.validate()));
  EXPECT_NO_THROW((ScheduleParams{0.51, 10.0, 0.001, 5}.validate()));
}

TEST(Schedule, NonIncreasingWithinUnitInterval) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const ScheduleParams p{0.5 + 0.5 * (1.0 - rng.uniform()), 5.0 * rng.uniform(),
                           1.0 - rng.uniform(), rng.below(5)};
    double prev = 1.0;
    for (std::size_t t = 1; t <= 200; ++t) {
      const double rho = schedule_rho(t, p);
      EXPECT_GT(rho, 0.0);
      EXPECT_LE(rho, prev);
      prev = rho;
    }
  }
}

TEST(RunConfig, Validation) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.C = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.t_max = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.schedule.kappa = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_algorithm("svi"), ConfigError);
  EXPECT_THROW(parse_option("c"), ConfigError);
  EXPECT_EQ(parse_algorithm(to_string(Algorithm::alg2)), Algorithm::alg2);
  EXPECT_EQ(parse_option(to_string(UpdateOption::b)), UpdateOption::b);
}

TEST(InitState, DeterministicPerSeed) {
  EXPECT_EQ(init_state(4, 5, 3, 42), init_state(4, 5, 3, 42));
  EXPECT_FALSE(init_state(4, 5, 3, 42) == init_state(4, 5, 3, 43));
  const FactorState s = init_state(4, 5, 3, 42);
  for (const GaussianNatural& f : s.flat()) EXPECT_EQ(f.precision(), 1.0);
}

TEST(InitState, ZeroMeansAreAFixedPointOfFullVb) {
  const auto data = generate_synthetic({10, 12, 2, 0.4, 1.0}, 6).first;
  FactorState state = init_state(10, 12, 2, 1, 0.0);
  for (int s = 0; s < 5; ++s) {
    sweep_full_vb(state, data);
    for (const GaussianNatural& f : state.flat()) EXPECT_EQ(f.mean(), 0.0);
  }
}

TEST(Sampler, FullPopulationWhenCIsLarge) {
  Rng rng(3);
  const Rng before = rng;
  EXPECT_EQ(sample_without_replacement(rng, 4, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(sample_without_replacement(rng, 3, 10), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(sample_without_replacement(rng, 0, 1).empty());
  Rng copy = before;
  EXPECT_EQ(rng.next(), copy.next());
}

TEST(Sampler, DistinctSortedAndDeterministic) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t pop = 1 + rng.below(100);
    const std::size_t C = 1 + rng.below(pop);
    Rng a = rng, b = rng;
    const auto s = sample_without_replacement(a, pop, C);
    EXPECT_EQ(s, sample_without_replacement(b, pop, C));
    EXPECT_EQ(s.size(), std::min(C, pop));
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), s.size());
    for (std::size_t x : s) EXPECT_LT(x, pop);
    rng.next();
  }
}

TEST(Sampler, SingleDrawChiSquare) {
  // 10^5 draws of C=1 from 5: chi-square with 4 dof, and each frequency
  // within 3 standard deviations of 1/5.
  Rng rng(7);
  const std::size_t n = 100'000;
  std::vector<double> counts(5, 0.0);
  for (std::size_t i = 0; i < n; ++i) counts[sample_without_replacement(rng, 5, 1)[0]] += 1.0;
  const double expected = n / 5.0;
  const double sd = std::sqrt(n * 0.2 * 0.8);
  double chi2 = 0.0;
  for (double c : counts) {
    EXPECT_LE(std::abs(c - expected), 3.0 * sd);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  EXPECT_LT(chi2, 18.47);  // 0.999 quantile of chi-square(4)
}

TEST(Sampler, SubsetsAreUniform) {
  // Both branches: every 2-subset of 5 (Floyd) and every 3-subset of 40
  // via inclusion frequencies (selection sampling).
  Rng rng(9);
  std::map<std::vector<std::size_t>, double> freq;
  const std::size_t n = 100'000;
  for (std::size_t i = 0; i < n; ++i) freq[sample_without_replacement(rng, 5, 2)] += 1.0;
  EXPECT_EQ(freq.size(), 10u);
  double chi2 = 0.0;
  for (const auto& [subset, c] : freq) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  EXPECT_LT(chi2, 27.88);  // 0.999 quantile of chi-square(9)

  std::vector<double> incl(40, 0.0);
  const std::size_t m = 20'000;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t x : sample_without_replacement(rng, 40, 33)) incl[x] += 1.0;
  }
  const double p = 33.0 / 40.0;
  for (double c : incl) EXPECT_LE(std::abs(c - m * p), 4.0 * std::sqrt(m * p * (1 - p)));
}

TEST(Divergence, Rules) {
  const FactorState ok(1, 1, 1);
  EXPECT_TRUE(detect_divergence(NAN, -10.0, ok));
  EXPECT_TRUE(detect_divergence(-INFINITY, -10.0, ok));
  EXPECT_FALSE(detect_divergence(-10.0, -10.0, ok));
  EXPECT_TRUE(detect_divergence(-20000.0, -1000.0, ok));
  EXPECT_FALSE(detect_divergence(-11000.0, -1000.0, ok));
  FactorState runaway(1, 1, 1);
  runaway[0] = GaussianNatural(1e-3, 1e4);  // mean 1e7
  EXPECT_TRUE(detect_divergence(-10.0, -10.0, runaway));
}

TEST(FullVb, SweepNeverLowersElboAndCountsAccesses) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = generate_synthetic({8 + rng.below(8), 8 + rng.below(8), 2, 0.3, 1.0},
                                         rng.next()).first;
    const BmfModel model(data, 3);
    FactorState state = random_state(data.num_users(), data.num_items(), 3, rng);
    double prev = model.elbo(state);
    std::uint64_t accessed = 0;
    for (int s = 0; s < 5; ++s) {
      accessed += sweep_full_vb(model, state, [&](std::size_t, const FactorState& st) {
        const double now = model.elbo(st);
        EXPECT_GE(now - prev, -1e-9 * std::abs(prev));
        prev = now;
      });
    }
    EXPECT_EQ(accessed, 5 * 2 * 3 * data.size());
  }
}

TEST(FullVb, ConvergesOnSmallInstance) {
  const auto data = generate_synthetic({20, 30, 2, 0.2, 1.0}, 1).first;
  FactorState state = init_state(20, 30, 2, 1);
  double prev = elbo(state, data);
  bool settled = false;
  for (int s = 0; s < 5000 && !settled; ++s) {
    sweep_full_vb(state, data);
    const double now = elbo(state, data);
    settled = std::abs(now - prev) < 1e-8;
    prev = now;
  }
  EXPECT_TRUE(settled);
}

TEST(FullVb, OneRatingNetwork) {
  // Closed-form scalar map for one user, one item, one rating r.
  const double r = 1.7;
  const SparseRatings data(1, 1, {{0, 0, r}});
  const BmfModel model(data, 1);
  FactorState state(1, 1, 1);
  state[0] = GaussianNatural(1.0, 0.3);
  state[1] = GaussianNatural(2.0, 0.8);
  sweep_full_vb(model, state);
  // After a sweep the item factor is the exact update given the new user.
  const Moments u = moments(state[0]);
  EXPECT_DOUBLE_EQ(state[1].precision(), 1.0 + u.variance + u.mean * u.mean);
  EXPECT_DOUBLE_EQ(state[1].mean_times_precision(), u.mean * r);

  // Independent iteration of the two-variable map to its fixed point.
  double mu = 0.3, su = 1.0, mv = 0.4, sv = 0.5;  // means and variances
  for (int i = 0; i < 10000; ++i) {
    const double pu = 1.0 + sv + mv * mv;
    mu = mv * r / pu;
    su = 1.0 / pu;
    const double pv = 1.0 + su + mu * mu;
    mv = mu * r / pv;
    sv = 1.0 / pv;
  }
  for (int s = 0; s < 10000; ++s) sweep_full_vb(model, state);
  EXPECT_NEAR(state[0].mean(), mu, 1e-8);
  EXPECT_NEAR(state[1].mean(), mv, 1e-8);
  const double before = model.elbo(state);
  sweep_full_vb(model, state);
  sweep_full_vb(model, state);
  EXPECT_LT(std::abs(model.elbo(state) - before), 1e-10);
}

TEST(Alg1, EquivalentToFullVbWithFullSamples) {
  const auto data = generate_synthetic({12, 15, 2, 0.3, 1.0}, 4).first;
  EXPECT_EQ(full_vb_equivalence_mismatches(data, 2, 5, 8), 0u);
}

TEST(Alg1, OptionBUsesIterationStartState) {
  // With full samples and rho = 1, option (b) is a Jacobi sweep: every
  // factor's new value is its target computed from the previous state.
  const auto data = generate_synthetic({6, 7, 2, 0.5, 1.0}, 3).first;
  const BmfModel model(data, 2);
  const FactorState start = init_state(6, 7, 2, 5);
  RunConfig c = stochastic(Algorithm::alg1, UpdateOption::b, 1);
  c.K = 2;
  c.C = data.max_children();
  const RunLog log = run_alg1(model, start, c);
  for (std::size_t i = 0; i < model.num_factors(); ++i) {
    EXPECT_EQ(log.final_state[i], full_vb_target(model, start, i));
  }
}

TEST(Alg1, AccessCountsAndLogShape) {
  const auto data = generate_synthetic({10, 12, 3, 0.4, 1.0}, 2).first;
  RunConfig c = stochastic(Algorithm::alg1, UpdateOption::a, 7);
  c.eval_every = 3;
  c.schedule.scale = 0.1;
  const RunLog log = run(data, c);
  ASSERT_EQ(log.entries.size(), 4u);  // t = 0, 3, 6, 7
  EXPECT_EQ(log.entries[0].t, 0u);
  EXPECT_EQ(log.entries[0].ratings_accessed, 0u);
  EXPECT_EQ(log.entries[3].t, 7u);
  std::uint64_t per_sweep = 0;
  const BmfModel model(data, 3);
  for (std::size_t i = 0; i < model.num_factors(); ++i) {
    per_sweep += std::min<std::size_t>(2, model.children(i).size());
  }
  EXPECT_EQ(log.entries[1].ratings_accessed, 3 * per_sweep);
  EXPECT_EQ(log.entries[3].ratings_accessed, 7 * per_sweep);
  EXPECT_FALSE(log.diverged());
}

TEST(Alg1, DeterministicGivenSeed) {
  const auto data = generate_synthetic({10, 12, 3, 0.4, 1.0}, 2).first;
  for (UpdateOption opt : {UpdateOption::a, UpdateOption::b}) {
    RunConfig c = stochastic(Algorithm::alg1, opt, 5);
    const RunLog a = run(data, c), b = run(data, c);
    EXPECT_EQ(a.final_state, b.final_state);
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].elbo, b.entries[i].elbo);
  }
}

TEST(Alg1, RunningAverageIdentity) {
  Rng rng(15);
  std::vector<GaussianNatural> temps;
  for (int i = 0; i < 50; ++i) temps.emplace_back(0.5 + 3 * rng.uniform(), rng.normal());
  EXPECT_LE(running_average_check(temps), 1e-12);
}

TEST(Alg1, SmallBatchAtUnitStepDiverges) {
  const auto data = generate_synthetic({}, 1).first;
  RunConfig c;
  c.algorithm = Algorithm::alg1;
  c.C = 1;
  c.t_max = 50;
  const RunLog log = run(data, c);
  EXPECT_TRUE(log.diverged());
  EXPECT_LT(log.entries.back().t, 50u);
}

TEST(Alg2, FullBatchUsesExactTargets) {
  // C_global above the rating count clamps to the whole data set, so with
  // rho = 1 and option (b) every factor jumps to its full target.
  const auto data = generate_synthetic({6, 7, 2, 0.5, 1.0}, 3).first;
  const BmfModel model(data, 2);
  const FactorState start = init_state(6, 7, 2, 5);
  RunConfig c = stochastic(Algorithm::alg2, UpdateOption::b, 1);
  c.K = 2;
  c.C_global = 10 * data.size();
  const RunLog log = run_alg2(model, start, c);
  for (std::size_t i = 0; i < model.num_factors(); ++i) {
    EXPECT_EQ(log.final_state[i], full_vb_target(model, start, i));
  }
  EXPECT_EQ(log.entries.back().ratings_accessed, 2 * 2 * data.size());
}

TEST(Alg2, UntouchedFactorsKeepTheirValues) {
  const auto data = generate_synthetic({30, 40, 2, 0.1, 1.0}, 3).first;
  const BmfModel model(data, 2);
  const FactorState start = init_state(30, 40, 2, 5);
  RunConfig c = stochastic(Algorithm::alg2, UpdateOption::a, 1);
  c.K = 2;
  c.C_global = 3;
  const RunLog log = run_alg2(model, start, c);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < model.num_factors(); ++i) changed += !(log.final_state[i] == start[i]);
  EXPECT_GT(changed, 0u);
  EXPECT_LE(changed, 3u * 2 * 2);
  EXPECT_EQ(log.entries.back().ratings_accessed, 3u * 2 * 2);
}

TEST(Alg2, BatchConditionedEstimatorIsUnbiased) {
  // A factor with 4 children in a 10-rating data set, batches of 5: given
  // |D_i| = d, D_i is a uniform d-subset of the children, so the average over
  // touching batches equals the full target.
  std::vector<Rating> ratings;
  for (std::size_t n = 0; n < 4; ++n) ratings.push_back({0, n, 1.0 + static_cast<double>(n)});
  for (std::size_t n = 0; n < 6; ++n) ratings.push_back({1 + n % 3, n, -0.5 * static_cast<double>(n)});
  const SparseRatings data(4, 6, ratings);
  const BmfModel model(data, 2);
  Rng rng(19);
  const FactorState state = random_state(4, 6, 2, rng);
  ASSERT_EQ(model.children(0).size(), 4u);
  ASSERT_EQ(model.num_observations(), 10u);
  const BatchExpectation e = batch_expectation(model, state, 0, 5);
  EXPECT_NEAR(e.touch_probability, 1.0 - 6.0 / 252.0, 1e-15);
  EXPECT_LE(e.max_deviation, 1e-12);
}

TEST(Alg2, OptionAConvergesAtUnitStep) {
  const auto data = generate_synthetic({}, 1).first;
  RunConfig c;
  c.algorithm = Algorithm::alg2;
  c.C_global = 100;
  c.t_max = 300;
  c.eval_every = 10;
  const RunLog log = run(data, c);
  EXPECT_FALSE(log.diverged());
  EXPECT_GT(log.entries.back().elbo, log.entries.front().elbo);
}
