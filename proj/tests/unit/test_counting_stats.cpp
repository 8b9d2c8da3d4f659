#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nvjump/counting_stats.hpp"
#include "nvjump/jump_sim.hpp"

using namespace nvjump;

namespace {

// Composite Simpson over z; independent of the adaptive quadrature.
template <class F>
double simpson(F&& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

CountModelParams supp_c() { return CountModelParams{}; }

CountModelParams equal_rates(double lt) {
  CountModelParams p;
  p.lambda_dark_T = p.lambda_bright_T = lt;
  return p;
}

double one_flip_mass(double li, double lj) {
  if (li == lj) return li * std::exp(-li);
  return li * (std::exp(-lj) - std::exp(-li)) / (li - lj);
}

double two_flip_mass(double li, double lj) {
  const double d = li - lj;
  if (std::abs(d) < 1e-9) return li * lj * std::exp(-li) / 2.0;
  return li * lj * std::exp(-li) * (std::exp(d) - 1.0 - d) / (d * d);
}

// Histograms holding the exact model bin probabilities of `p`.
ConditionalHistograms exact_histograms(const CountModelParams& p, double eps_dark, double eps_bright,
                                       PairSelection sel = {}) {
  const auto edges = aligned_edges(450, 1000, 15);
  ConditionalHistograms h;
  h.selection = sel;
  CountHistogram base;
  base.bin_edges = edges;
  base.frequencies.assign(edges.size() - 1, 0.0);
  base.n_samples = 50000;
  h.dark = base;
  h.bright = base;
  h.dark.frequencies = model_bin_probabilities(base, p, SpinState::dark, density_quadrature(), eps_dark);
  h.bright.frequencies = model_bin_probabilities(base, p, SpinState::bright, density_quadrature(), eps_bright);
  return h;
}

void expect_params_near(const CountModelParams& got, const CountModelParams& want, double rel) {
  EXPECT_NEAR(got.mu_dark / want.mu_dark, 1.0, rel);
  EXPECT_NEAR(got.mu_bright / want.mu_bright, 1.0, rel);
  EXPECT_NEAR(got.sigma2_dark / want.sigma2_dark, 1.0, 20 * rel);
  EXPECT_NEAR(got.lambda_dark_T / want.lambda_dark_T, 1.0, 20 * rel);
  EXPECT_NEAR(got.lambda_bright_T / want.lambda_bright_T, 1.0, 20 * rel);
}

}  // namespace

TEST(DensityNoFlip, Examples) {
  CountModelParams p = supp_c();
  p.lambda_dark_T = 0.0;
  EXPECT_DOUBLE_EQ(density_no_flip(650.0, p, SpinState::dark),
                   std::exp(-0.5 * 13.0 * 13.0 / p.sigma2_dark) / std::sqrt(2 * std::numbers::pi * p.sigma2_dark));
  const auto q = supp_c();
  EXPECT_NEAR(density_no_flip(637.0, q, SpinState::dark), std::exp(-0.084) / std::sqrt(2 * std::numbers::pi * q.sigma2_dark),
              1e-15);
  EXPECT_NEAR(density_no_flip(816.0, q, SpinState::bright), std::exp(-0.0485) / std::sqrt(2 * std::numbers::pi * 816.0),
              1e-15);
}

TEST(DensityOneFlip, EqualRateMass) {
  for (double lt : {0.01, 0.084, 0.3}) {
    const auto p = equal_rates(lt);
    for (SpinState s : {SpinState::dark, SpinState::bright}) {
      const double mass = simpson([&](double z) { return density_one_flip(z, p, s); }, 300, 1200, 3600);
      EXPECT_NEAR(mass, lt * std::exp(-lt), 1e-8);
    }
  }
}

TEST(DensityOneFlip, UnequalRateMass) {
  const auto p = supp_c();
  EXPECT_NEAR(simpson([&](double z) { return density_one_flip(z, p, SpinState::dark); }, 300, 1200, 3600),
              one_flip_mass(0.084, 0.0485), 1e-8);
  EXPECT_NEAR(simpson([&](double z) { return density_one_flip(z, p, SpinState::bright); }, 300, 1200, 3600),
              one_flip_mass(0.0485, 0.084), 1e-8);
}

TEST(DensityOneFlip, SymmetricWhenStatesCoincide) {
  CountModelParams p;
  p.mu_dark = p.mu_bright = 700;
  p.sigma2_dark = p.sigma2_bright = 700;
  p.lambda_dark_T = p.lambda_bright_T = 0.1;
  for (double d : {3.0, 20.0, 55.0})
    EXPECT_NEAR(density_one_flip(700 + d, p, SpinState::dark), density_one_flip(700 - d, p, SpinState::dark), 1e-14);
}

TEST(DensityOneFlip, BridgesTheLobes) {
  const auto p = supp_c();
  // The one-flip term is what fills the gap between the two no-flip lobes.
  for (double z = 726.5; z <= 790.0; z += 5.0)
    EXPECT_GT(density_one_flip(z, p, SpinState::dark), density_no_flip(z, p, SpinState::dark)) << z;
}

TEST(DensityTwoFlip, Mass) {
  const auto eq = equal_rates(0.084);
  EXPECT_NEAR(simpson([&](double z) { return density_two_flip(z, eq, SpinState::dark); }, 300, 1200, 3600),
              0.084 * 0.084 / 2 * std::exp(-0.084), 1e-8);
  const auto p = supp_c();
  const double dark = simpson([&](double z) { return density_two_flip(z, p, SpinState::dark); }, 300, 1200, 3600);
  EXPECT_NEAR(dark, two_flip_mass(0.084, 0.0485), 1e-8);
  EXPECT_LT(dark, 0.084 * 0.084 / 2 * std::exp(-0.084));
  EXPECT_NEAR(simpson([&](double z) { return density_two_flip(z, p, SpinState::bright); }, 300, 1200, 3600),
              two_flip_mass(0.0485, 0.084), 1e-8);
  const auto tiny = equal_rates(1e-7);
  for (double z : {600.0, 726.0, 816.0}) EXPECT_LT(density_two_flip(z, tiny, SpinState::dark), 1e-15);
}

TEST(ModelDensity, TotalMass) {
  for (double lt : {0.0, 0.05, 0.2}) {
    const auto p = equal_rates(lt);
    const double expected = std::exp(-lt) * (1 + lt + lt * lt / 2);
    EXPECT_NEAR(simpson([&](double z) { return model_density(z, p, SpinState::dark); }, 300, 1200, 3600), expected, 1e-6);
    EXPECT_NEAR(model_mass(-1e6, 1e6, p, SpinState::bright), expected, 1e-9);
    EXPECT_NEAR(1.0 - expected, truncation_bound(lt), 1e-12);
  }
}

TEST(ModelDensity, MassMatchesDensityIntegral) {
  const auto p = supp_c();
  for (SpinState s : {SpinState::dark, SpinState::bright})
    for (auto [a, b] : {std::pair{600.0, 615.0}, std::pair{700.0, 760.0}, std::pair{800.0, 830.0}})
      EXPECT_NEAR(model_mass(a, b, p, s), simpson([&](double z) { return model_density(z, p, s); }, a, b, 600), 1e-10);
}

TEST(ModelDensity, DarkModeAt637) {
  const auto p = supp_c();
  double best = 0.0, arg = 0.0;
  for (double z = 560; z <= 900; z += 0.25) {
    const double v = model_density(z, p, SpinState::dark);
    if (v > best) best = v, arg = z;
  }
  EXPECT_NEAR(arg, 637.0, 1.0);
}

TEST(Histogram, AlignedEdgesAndNormalization) {
  const auto edges = aligned_edges(452, 518, 15);
  EXPECT_EQ(edges.front(), 450.0);
  EXPECT_GE(edges.back(), 518.0);
  for (double e : edges) EXPECT_EQ(std::fmod(e, 15.0), 0.0);
  const auto h = make_histogram({451, 452, 466, 480, 517, 10000}, edges);
  EXPECT_EQ(h.n_samples, 5u);
  double total = 0.0;
  for (double f : h.frequencies) total += f;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(h.frequencies[0], 0.4, 1e-12);
  EXPECT_THROW(aligned_edges(0, 10, 0.0), InvalidArgument);
}

TEST(ConditionalHistograms, PaperThresholds) {
  const auto p = supp_c();
  const auto trace = simulate_c13_trace(0.12 / p.lambda_bright_T, 0.12 / p.lambda_dark_T,
                                        two_state_emission(p.mu_dark, p.mu_bright, p.sigma2_dark, 0.12), 20000, 2);
  const auto h = conditional_histograms(trace, {615, 845});
  EXPECT_EQ(h.dark.bin_edges, h.bright.bin_edges);
  EXPECT_EQ(h.dark.bin_width, 15.0);
  const auto mode = [](const CountHistogram& x) {
    return x.center(static_cast<std::size_t>(std::max_element(x.frequencies.begin(), x.frequencies.end()) - x.frequencies.begin()));
  };
  EXPECT_NEAR(mode(h.dark), 637, 15);
  EXPECT_NEAR(mode(h.bright), 816, 15);
  EXPECT_GT(h.selection.retained_fraction_dark, 0.05);
  EXPECT_LT(h.selection.retained_fraction_dark, 0.5);
}

TEST(ConditionalHistograms, ExtremeThresholdsAreInsufficient) {
  const auto trace = simulate_c13_trace(2.4, 1.5, two_state_emission(637, 816, 955, 0.12), 2000, 2);
  const double max = *std::max_element(trace.bin_counts.begin(), trace.bin_counts.end());
  try {
    conditional_histograms(trace, {0.0, max + 1});
    FAIL() << "expected InsufficientData";
  } catch (const InsufficientData& e) {
    EXPECT_EQ(e.dark_count, 0u);
    EXPECT_EQ(e.bright_count, 0u);
  }
  EXPECT_THROW(conditional_histograms(trace, {845, 615}), InvalidArgument);
}

TEST(ConditionalHistograms, NoFlipsBrightStartHasNoDarkPairs) {
  const auto em = two_state_emission(637, 816, 955, 0.12);
  const DwellPath path{{{bright_state, 600.0}}, 600.0};
  const auto trace = bin_counts(path, em, 4);
  try {
    conditional_histograms(trace, {615, 845});
    FAIL() << "expected InsufficientData";
  } catch (const InsufficientData& e) {
    EXPECT_EQ(e.dark_count, 0u);
    EXPECT_GT(e.bright_count, 500u);
  }
}

TEST(InitializationError, WholeTraceSelectionGivesStationaryWeight) {
  const auto p = supp_c();
  const double pi_bright = p.lambda_dark_T / (p.lambda_dark_T + p.lambda_bright_T);
  EXPECT_NEAR(initialization_error(p, SpinState::dark, 1e9), pi_bright, 1e-3);
  EXPECT_NEAR(initialization_error(p, SpinState::bright, -1e9), 1.0 - pi_bright, 1e-3);
  const double strict = initialization_error(p, SpinState::dark, 600);
  const double loose = initialization_error(p, SpinState::dark, 680);
  EXPECT_LT(strict, loose);
  EXPECT_LT(initialization_error(p, SpinState::dark, 615), 0.02);
  // Without flips only the bright emission tail below the threshold remains.
  EXPECT_LT(initialization_error(equal_rates(0.0), SpinState::dark, 615), 1e-10);
}

TEST(InitializationError, EndStateMassesSumToModelMass) {
  const auto p = supp_c();
  for (SpinState s : {SpinState::dark, SpinState::bright}) {
    const auto m = end_state_mass(650, 700, p, s);
    EXPECT_NEAR(m[0] + m[1], model_mass(650, 700, p, s), 1e-12);
  }
}

TEST(FitParams, NoiselessRoundTripWithoutCorrection) {
  const auto truth = supp_c();
  const auto h = exact_histograms(truth, 0.0, 0.0);
  CountFitOptions opt;
  opt.initialization_correction = false;
  const auto fit = fit_params(h, std::nullopt, opt);
  expect_params_near(fit.params, truth, 1e-4);
  EXPECT_EQ(fit.params.sigma2_bright, fit.params.mu_bright);
  EXPECT_LT(fit.chi2, 1e-3);
  EXPECT_EQ(fit.initialization_error_dark, 0.0);
  EXPECT_NEAR(0.12 / fit.params.lambda_dark_T, 1.4286, 2e-3);
}

TEST(FitParams, NoiselessRoundTripWithCorrection) {
  const auto truth = supp_c();
  const PairSelection sel{615, 845};
  const double ed = initialization_error(truth, SpinState::dark, 615);
  const double eb = initialization_error(truth, SpinState::bright, 845);
  const auto fit = fit_params(exact_histograms(truth, ed, eb, sel));
  expect_params_near(fit.params, truth, 1e-4);
  EXPECT_NEAR(fit.initialization_error_dark, ed, 1e-5);
  EXPECT_NEAR(fit.initialization_error_bright, eb, 1e-5);
}

TEST(FitParams, LeastSquaresRoundTrip) {
  const auto truth = supp_c();
  CountFitOptions opt;
  opt.method = FitMethod::least_squares;
  opt.initialization_correction = false;
  expect_params_near(fit_params(exact_histograms(truth, 0.0, 0.0), std::nullopt, opt).params, truth, 1e-3);
}

TEST(FitParams, Errors) {
  auto h = exact_histograms(supp_c(), 0.0, 0.0);
  auto empty = h;
  empty.dark.n_samples = 0;
  EXPECT_THROW(fit_params(empty), FitFailure);
  auto mismatched = h;
  mismatched.bright.bin_edges.back() += 1.0;
  EXPECT_THROW(fit_params(mismatched), InvalidArgument);
}

TEST(FitParams, SingleLobedInputIsFlagged) {
  CountModelParams frozen = supp_c();
  frozen.lambda_dark_T = frozen.lambda_bright_T = 0.0;
  auto h = exact_histograms(frozen, 0.0, 0.0);
  h.dark = h.bright;  // no dark data at all
  CountFitOptions opt;
  opt.initialization_correction = false;
  bool flagged = false;
  try {
    const auto fit = fit_params(h, std::nullopt, opt);
    flagged = !fit.warnings.empty() || std::abs(fit.params.mu_dark - fit.params.mu_bright) < 1.0;
  } catch (const FitFailure&) {
    flagged = true;
  }
  EXPECT_TRUE(flagged);
}
