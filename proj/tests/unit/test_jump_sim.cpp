#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nvjump/counting_stats.hpp"
#include "nvjump/jump_sim.hpp"

using namespace nvjump;

namespace {

// Kolmogorov-Smirnov distance between a sample and Exponential(rate).
double ks_exponential(std::vector<double> x, double rate) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 1.0 - std::exp(-rate * x[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return d;
}

double ks_critical_01(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

std::vector<double> dwells_of(const DwellPath& p, std::size_t state, bool drop_last = true) {
  std::vector<double> out;
  const std::size_t n = drop_last && !p.dwells.empty() ? p.dwells.size() - 1 : p.dwells.size();
  for (std::size_t i = 0; i < n; ++i)
    if (p.dwells[i].state == state) out.push_back(p.dwells[i].duration);
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Upper 1% point of chi-square with k degrees of freedom (Wilson-Hilferty).
double chi2_critical_01(double k) {
  const double z = 2.326348;
  const double a = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - a + z * std::sqrt(a), 3);
}

}  // namespace

TEST(MarkovSpec, Validation) {
  MarkovSpec ok = two_state_spec(2.0, 1.0);
  EXPECT_NO_THROW(ok.validate());
  MarkovSpec bad_row = ok;
  bad_row.generator[0][0] = -2.0;
  EXPECT_THROW(bad_row.validate(), InvalidArgument);
  MarkovSpec negative = ok;
  negative.generator[0] = {1.0, -1.0};
  EXPECT_THROW(negative.validate(), InvalidArgument);
  MarkovSpec init = ok;
  init.initial_distribution = {0.3, 0.3};
  EXPECT_THROW(init.validate(), InvalidArgument);
  EXPECT_THROW(simulate_ctmc(ok, 0.0, 1), InvalidArgument);
}

TEST(SimulateCtmc, AllRatesZeroGivesSingleDwell) {
  MarkovSpec spec{{"a", "b", "c"}, std::vector<std::vector<double>>(3, std::vector<double>(3, 0.0)), {0.0, 1.0, 0.0}};
  const auto path = simulate_ctmc(spec, 7.5, 3);
  ASSERT_EQ(path.dwells.size(), 1u);
  EXPECT_EQ(path.dwells[0].state, 1u);
  EXPECT_DOUBLE_EQ(path.dwells[0].duration, 7.5);
}

TEST(SimulateCtmc, EqualRateTransitionCountIsPoisson) {
  const double lambda = 1.0, duration = 5.0;
  const int runs = 10000;
  const auto spec = two_state_spec(1.0 / lambda, 1.0 / lambda);
  double total = 0.0;
  for (int r = 0; r < runs; ++r) total += static_cast<double>(simulate_ctmc(spec, duration, 1000 + r).dwells.size() - 1);
  const double expected = lambda * duration;
  EXPECT_NEAR(total / runs, expected, 3.0 * std::sqrt(expected / runs));
}

TEST(SimulateCtmc, MeanDwellsAndExponentialLaw) {
  const auto path = simulate_ctmc(two_state_spec(2.47, 1.43), 1e4, 42);
  const auto dark = dwells_of(path, dark_state);
  const auto bright = dwells_of(path, bright_state);
  EXPECT_NEAR(mean(dark) / 1.43, 1.0, 0.05);
  EXPECT_NEAR(mean(bright) / 2.47, 1.0, 0.05);
  double total = 0.0;
  for (const auto& d : path.dwells) total += d.duration;
  EXPECT_NEAR(total, 1e4, 1e-6);
}

TEST(SimulateCtmc, DwellKolmogorovSmirnov) {
  // About 10^4 dwells per state.
  const auto path = simulate_ctmc(two_state_spec(1.0, 0.5), 1.5e4, 9);
  const auto dark = dwells_of(path, dark_state);
  const auto bright = dwells_of(path, bright_state);
  ASSERT_GE(dark.size(), 9000u);
  EXPECT_LT(ks_exponential(dark, 2.0), ks_critical_01(dark.size()));
  EXPECT_LT(ks_exponential(bright, 1.0), ks_critical_01(bright.size()));
}

TEST(SimulateCtmc, Deterministic) {
  const auto spec = two_state_spec(2.4, 1.5);
  const auto a = simulate_ctmc(spec, 100.0, 5), b = simulate_ctmc(spec, 100.0, 5), c = simulate_ctmc(spec, 100.0, 6);
  ASSERT_EQ(a.dwells.size(), b.dwells.size());
  for (std::size_t i = 0; i < a.dwells.size(); ++i) {
    EXPECT_EQ(a.dwells[i].state, b.dwells[i].state);
    EXPECT_EQ(a.dwells[i].duration, b.dwells[i].duration);
  }
  EXPECT_FALSE(a.dwells.size() == c.dwells.size() && a.dwells[0].duration == c.dwells[0].duration);
}

TEST(BinCounts, AllBrightIsNormal) {
  const auto em = two_state_emission(637, 816, 1.5 * 637, 0.12);
  const DwellPath path{{{bright_state, 1200.0}}, 1200.0};
  const auto trace = bin_counts(path, em, 11);
  ASSERT_EQ(trace.size(), 10000u);
  const double m = mean(trace.bin_counts);
  EXPECT_NEAR(m, 816.0, 3.0 * std::sqrt(816.0 / 10000.0));
  EXPECT_NEAR(variance(trace.bin_counts) / 816.0, 1.0, 0.05);
  for (int s : *trace.latent_states) EXPECT_EQ(s, static_cast<int>(bright_state));
}

TEST(BinCounts, HalfDwellBinMixesMeans) {
  const auto em = two_state_emission(637, 816, 1.5 * 637, 0.12);
  const DwellPath path{{{dark_state, 0.06}, {bright_state, 0.06}}, 0.12};
  std::vector<double> counts;
  for (std::uint64_t s = 0; s < 20000; ++s) counts.push_back(bin_counts(path, em, s).bin_counts[0]);
  const double expected_var = 0.25 * (1.5 * 637 + 816);
  EXPECT_NEAR(mean(counts), 0.5 * (637 + 816), 4.0 * std::sqrt(expected_var / counts.size()));
  EXPECT_NEAR(variance(counts) / expected_var, 1.0, 0.05);
}

TEST(BinCounts, MixtureMeanConditionedOnFraction) {
  const auto em = two_state_emission(100, 200, 100, 1.0, 200);
  for (double f : {0.1, 0.3, 0.8}) {
    const DwellPath path{{{dark_state, f}, {bright_state, 1.0 - f}}, 1.0};
    std::vector<double> counts;
    for (std::uint64_t s = 0; s < 5000; ++s) counts.push_back(bin_counts(path, em, s).bin_counts[0]);
    const double var = f * f * 100 + (1 - f) * (1 - f) * 200;
    EXPECT_NEAR(mean(counts), f * 100 + (1 - f) * 200, 4.0 * std::sqrt(var / counts.size()));
  }
}

TEST(BinCounts, Errors) {
  const auto em = two_state_emission(637, 816, 1.5 * 637, 0.12);
  EXPECT_THROW(bin_counts(DwellPath{{{0, 0.1}}, 0.1}, em, 1), InvalidArgument);
  EXPECT_THROW(bin_counts(DwellPath{{{2, 1.0}}, 1.0}, em, 1), InvalidArgument);
  EXPECT_THROW(two_state_emission(-1, 816, 1, 0.12).validate(2), InvalidArgument);
}

TEST(SimulateC13, DeterminismAndSingleBin) {
  const auto em = two_state_emission(637, 816, 1.5 * 637, 0.12);
  const auto a = simulate_c13_trace(2.4, 1.5, em, 5000, 77), b = simulate_c13_trace(2.4, 1.5, em, 5000, 77);
  EXPECT_EQ(a.bin_counts, b.bin_counts);
  EXPECT_EQ(*a.latent_states, *b.latent_states);
  EXPECT_NE(a.bin_counts, simulate_c13_trace(2.4, 1.5, em, 5000, 78).bin_counts);
  const auto one = simulate_c13_trace(2.4, 1.5, em, 1, 77);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_EQ(one.latent_states->size(), 1u);
  EXPECT_THROW(simulate_c13_trace(0.0, 1.5, em, 10, 1), InvalidArgument);
  EXPECT_THROW(simulate_c13_trace(2.4, 1.5, em, 0, 1), InvalidArgument);
}

TEST(SimulateC13, TwoLobedHistogram) {
  const CountModelParams p;
  const auto trace = simulate_c13_trace(0.12 / p.lambda_bright_T, 0.12 / p.lambda_dark_T,
                                        two_state_emission(637, 816, 1.5 * 637, 0.12), 100000, 5);
  const auto h = make_histogram(trace.bin_counts, aligned_edges(450, 1000, 15));
  std::size_t dark_mode = 0, bright_mode = 0;
  for (std::size_t j = 0; j < h.bins(); ++j) {
    if (h.center(j) < 726 && h.frequencies[j] > h.frequencies[dark_mode]) dark_mode = j;
    if (h.center(j) > 726 && (bright_mode == 0 || h.frequencies[j] > h.frequencies[bright_mode])) bright_mode = j;
  }
  EXPECT_NEAR(h.center(dark_mode), 637, 15);
  EXPECT_NEAR(h.center(bright_mode), 816, 15);
}

// Each single-bin trace that starts in a fixed state is one draw from the
// analytic count law of that state, so a binned chi-square applies.
TEST(SimulateC13, SingleBinCountsFollowAnalyticDensity) {
  const CountModelParams p;
  const auto em = two_state_emission(p.mu_dark, p.mu_bright, p.sigma2_dark, 0.12, p.sigma2_bright);
  for (SpinState s : {SpinState::dark, SpinState::bright}) {
    std::vector<double> counts;
    const std::size_t start = s == SpinState::dark ? dark_state : bright_state;
    for (std::uint64_t seed = 0; seed < 100000; ++seed)
      counts.push_back(simulate_c13_trace(0.12 / p.lambda_bright_T, 0.12 / p.lambda_dark_T, em, 1, seed, start).bin_counts[0]);
    const auto edges = aligned_edges(500, 950, 15);
    double chi2 = 0.0;
    int cells = 0;
    double below = 0.0, above = 0.0, exp_below = model_mass(-1e9, edges.front(), p, s),
           exp_above = model_mass(edges.back(), 1e9, p, s);
    for (double c : counts) {
      if (c < edges.front()) below += 1;
      if (c >= edges.back()) above += 1;
    }
    const auto h = make_histogram(counts, edges);
    const double n = static_cast<double>(counts.size());
    for (std::size_t j = 0; j < h.bins(); ++j) {
      const double expected = n * model_mass(edges[j], edges[j + 1], p, s);
      if (expected < 5.0) continue;
      const double observed = static_cast<double>(std::llround(h.frequencies[j] * static_cast<double>(h.n_samples)));
      chi2 += (observed - expected) * (observed - expected) / expected;
      ++cells;
    }
    for (auto [o, e] : {std::pair{below, n * exp_below}, std::pair{above, n * exp_above}}) {
      if (e < 5.0) continue;
      chi2 += (o - e) * (o - e) / e;
      ++cells;
    }
    EXPECT_LT(chi2, chi2_critical_01(cells - 1)) << "state " << static_cast<int>(s) << ", " << cells << " cells";
  }
}

TEST(Register, SixStatesAndStructure) {
  const RegisterSimConfig cfg;
  const auto spec = register_markov_spec(cfg);
  ASSERT_EQ(spec.size(), 6u);
  EXPECT_NO_THROW(spec.validate());
  // No direct +1 <-> -1 hops and no simultaneous 14N/13C flips.
  EXPECT_EQ(spec.generator[register_index(1, C13State::up)][register_index(-1, C13State::up)], 0.0);
  EXPECT_EQ(spec.generator[register_index(1, C13State::up)][register_index(0, C13State::down)], 0.0);
  // Equal 14N exit rate from every level.
  for (int mn : {1, 0, -1}) {
    const auto i = register_index(mn, C13State::up);
    EXPECT_NEAR(-spec.generator[i][i] - cfg.c13_flip_rate_bright, cfg.n14_flip_rate, 1e-9);
  }
  const auto trace = simulate_register_trace(cfg, 20000, 7);
  std::vector<int> seen(6, 0);
  for (int s : *trace.latent_states) seen.at(static_cast<std::size_t>(s)) = 1;
  EXPECT_EQ(std::accumulate(seen.begin(), seen.end(), 0), 6);
  EXPECT_EQ(trace.bin_time, 0.020);
}

TEST(Register, InvalidConfig) {
  RegisterSimConfig cfg;
  cfg.n14_flip_rate = -1.0;
  EXPECT_THROW(register_markov_spec(cfg), InvalidConfig);
  cfg = RegisterSimConfig{};
  cfg.dark_state_label = 6;
  EXPECT_THROW(register_markov_spec(cfg), InvalidConfig);
  EXPECT_THROW(simulate_register_trace(RegisterSimConfig{}, 0, 1), InvalidArgument);
}

TEST(Register, FrozenNitrogenFactorizes) {
  RegisterSimConfig cfg;
  cfg.n14_flip_rate = 0.0;
  cfg.initial_distribution = std::vector<double>(6, 0.0);
  cfg.initial_distribution[register_index(1, C13State::up)] = 1.0;
  const auto path = simulate_ctmc(register_markov_spec(cfg), 2e4, 21);
  for (const auto& d : path.dwells)
    ASSERT_TRUE(d.state == register_index(1, C13State::up) || d.state == register_index(1, C13State::down));
  const auto dark = dwells_of(path, cfg.dark_state_label);
  const auto bright = dwells_of(path, register_index(1, C13State::up));
  EXPECT_LT(ks_exponential(dark, cfg.c13_flip_rate_dark), ks_critical_01(dark.size()));
  EXPECT_LT(ks_exponential(bright, cfg.c13_flip_rate_bright), ks_critical_01(bright.size()));
}

TEST(Register, CarbonMarginalMatchesTwoStateChain) {
  RegisterSimConfig cfg;
  cfg.c13_flip_rate_dark = cfg.c13_flip_rate_bright = 2.0;
  const auto path = simulate_ctmc(register_markov_spec(cfg), 1e4, 33);
  // Merge consecutive dwells with the same 13C orientation.
  std::vector<double> up, down;
  double run = 0.0;
  bool current_down = path.dwells.front().state % 2 == 1;
  for (std::size_t i = 0; i < path.dwells.size(); ++i) {
    const bool is_down = path.dwells[i].state % 2 == 1;
    if (is_down != current_down) {
      (current_down ? down : up).push_back(run);
      run = 0.0;
      current_down = is_down;
    }
    run += path.dwells[i].duration;
  }
  EXPECT_LT(ks_exponential(up, 2.0), ks_critical_01(up.size()));
  EXPECT_LT(ks_exponential(down, 2.0), ks_critical_01(down.size()));
}

// With the 13C frozen in the dark sector, dark dwells leave |+1,down> at the
// full 14N rate and bright excursions are first passages back through the
// 0 / -1 levels. The oracle solves -Q_TT m = 1 on the transient block.
TEST(Register, NitrogenFirstPassageMatchesAnalyticOracle) {
  RegisterSimConfig cfg;
  cfg.c13_flip_rate_dark = cfg.c13_flip_rate_bright = 0.0;
  cfg.initial_distribution = std::vector<double>(6, 0.0);
  cfg.initial_distribution[cfg.dark_state_label] = 1.0;
  const auto spec = register_markov_spec(cfg);

  const std::array<std::size_t, 2> transient = {register_index(0, C13State::down), register_index(-1, C13State::down)};
  Eigen::Matrix2d q;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) q(a, b) = spec.generator[transient[a]][transient[b]];
  const Eigen::Vector2d m = (-q).lu().solve(Eigen::Vector2d::Ones());
  const double oracle_bright = m(0);
  const double oracle_dark = 1.0 / -spec.generator[cfg.dark_state_label][cfg.dark_state_label];

  const auto path = simulate_ctmc(spec, 2000.0, 17);
  std::vector<double> dark, bright;
  double run = 0.0;
  bool in_dark = true;
  for (std::size_t i = 0; i + 1 < path.dwells.size(); ++i) {
    const bool is_dark = path.dwells[i].state == cfg.dark_state_label;
    if (is_dark != in_dark) {
      (in_dark ? dark : bright).push_back(run);
      run = 0.0;
      in_dark = is_dark;
    }
    run += path.dwells[i].duration;
  }
  EXPECT_NEAR(oracle_dark, 0.030, 1e-12);
  EXPECT_NEAR(oracle_bright, 0.090, 1e-12);
  EXPECT_NEAR(mean(dark), oracle_dark, 4.0 * oracle_dark / std::sqrt(dark.size()));
  EXPECT_LT(ks_exponential(dark, 1.0 / oracle_dark), ks_critical_01(dark.size()));
  EXPECT_NEAR(mean(bright), oracle_bright, 4.0 * std::sqrt(variance(bright) / bright.size()));
}

// Gaps between dark blinks come from two mechanisms: a 14N excursion (tens of
// ms) while the 13C sits in the dark orientation, or a 13C period in the
// bright orientation (seconds).
TEST(Register, BlinkGapsHaveTwoTimescales) {
  const RegisterSimConfig cfg;
  const auto trace = simulate_register_trace(cfg, 200000, 3);
  const auto coarse = coarse_states(*trace.latent_states, cfg.dark_state_label);
  const auto runs = run_lengths(coarse, cfg.bin_time, 2);
  std::size_t fast = 0, slow = 0;
  for (double d : runs[1]) {
    if (d <= 0.3) ++fast;
    if (d >= 1.0) ++slow;
  }
  EXPECT_GT(fast, 10 * slow);
  EXPECT_GT(slow, 300u);
  double dark_total = 0.0;
  for (double d : runs[0]) dark_total += d;
  EXPECT_LT(dark_total / static_cast<double>(runs[0].size()), 0.1);
}

TEST(Register, CoarseStatesAndRunLengths) {
  EXPECT_EQ(coarse_states({1, 2, 1, 5}, 1), (std::vector<int>{0, 1, 0, 1}));
  const auto runs = run_lengths({0, 0, 1, 1, 1, 0}, 0.5, 2);
  EXPECT_EQ(runs[0], (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(runs[1], (std::vector<double>{1.5}));
  EXPECT_TRUE(run_lengths({}, 0.5, 2)[0].empty());
}
