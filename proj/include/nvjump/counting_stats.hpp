#pragma once

// Photon-count distributions conditioned on the nuclear-spin state at the
// start of a readout bin, truncated at two flips per bin:
//   S_I(z) = f0_I(z) + f1_I(z) + f2_I(z),  I in {dark, bright}.
// f1 and f2 are integrals over the dwell fraction u in [0, 1] of a Gaussian
// with mean u mu_I + (1 - u) mu_I' and variance u^2 s_I^2 + (1 - u)^2 s_I'^2.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nvjump/error.hpp"
#include "nvjump/jump_sim.hpp"
#include "nvjump/optimize.hpp"
#include "nvjump/quadrature.hpp"

namespace nvjump {

enum class SpinState { dark, bright };

inline SpinState other(SpinState s) { return s == SpinState::dark ? SpinState::bright : SpinState::dark; }

struct CountModelParams {
  double mu_dark = 637.0;
  double mu_bright = 816.0;
  double sigma2_dark = 1.5 * 637.0;
  double sigma2_bright = 816.0;
  double lambda_dark_T = 0.084;
  double lambda_bright_T = 0.0485;

  double mu(SpinState s) const { return s == SpinState::dark ? mu_dark : mu_bright; }
  double sigma2(SpinState s) const { return s == SpinState::dark ? sigma2_dark : sigma2_bright; }
  double lambda_T(SpinState s) const { return s == SpinState::dark ? lambda_dark_T : lambda_bright_T; }

  void validate() const {
    if (!(mu_dark > 0.0 && mu_bright > 0.0 && sigma2_dark > 0.0 && sigma2_bright > 0.0))
      throw InvalidArgument("CountModelParams: means and variances must be positive");
    if (!(lambda_dark_T >= 0.0 && lambda_dark_T < 1.0 && lambda_bright_T >= 0.0 && lambda_bright_T < 1.0))
      throw InvalidArgument("CountModelParams: lambda*T must lie in [0, 1)");
  }
};

namespace detail {

inline double normal_pdf(double z, double mean, double var) {
  const double d = z - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

// P(a < X < b) for X ~ Normal(mean, var), accurate in both tails.
inline double normal_interval(double a, double b, double mean, double var) {
  const double s = std::sqrt(2.0 * var);
  const double xa = (a - mean) / s, xb = (b - mean) / s;
  if (xa >= 0.0) return 0.5 * (std::erfc(xa) - std::erfc(xb));
  if (xb <= 0.0) return 0.5 * (std::erfc(-xb) - std::erfc(-xa));
  return 1.0 - 0.5 * (std::erfc(-xa) + std::erfc(xb));
}

struct FlipKernel {
  double mu_i, mu_j, var_i, var_j, lt_i, lt_j;

  FlipKernel(const CountModelParams& p, SpinState s)
      : mu_i(p.mu(s)), mu_j(p.mu(other(s))), var_i(p.sigma2(s)), var_j(p.sigma2(other(s))),
        lt_i(p.lambda_T(s)), lt_j(p.lambda_T(other(s))) {}

  double mean(double u) const { return u * mu_i + (1.0 - u) * mu_j; }
  double var(double u) const { return u * u * var_i + (1.0 - u) * (1.0 - u) * var_j; }
  double one_flip_weight(double u) const { return lt_i * std::exp(-lt_i * u - lt_j * (1.0 - u)); }
  double two_flip_weight(double u) const { return lt_i * lt_j * (1.0 - u) * std::exp(-lt_i + u * (lt_i - lt_j)); }
};

}  // namespace detail

inline QuadratureOptions density_quadrature() { return {1e-12, 0.0, 400}; }

inline double density_no_flip(double z, const CountModelParams& p, SpinState s) {
  return detail::normal_pdf(z, p.mu(s), p.sigma2(s)) * std::exp(-p.lambda_T(s));
}

inline double density_one_flip(double z, const CountModelParams& p, SpinState s,
                               const QuadratureOptions& q = density_quadrature()) {
  const detail::FlipKernel k(p, s);
  if (k.lt_i == 0.0) return 0.0;
  return integrate([&](double u) { return k.one_flip_weight(u) * detail::normal_pdf(z, k.mean(u), k.var(u)); }, 0.0, 1.0, q)
      .value;
}

inline double density_two_flip(double z, const CountModelParams& p, SpinState s,
                               const QuadratureOptions& q = density_quadrature()) {
  const detail::FlipKernel k(p, s);
  if (k.lt_i == 0.0 || k.lt_j == 0.0) return 0.0;
  return integrate([&](double u) { return k.two_flip_weight(u) * detail::normal_pdf(z, k.mean(u), k.var(u)); }, 0.0, 1.0, q)
      .value;
}

inline double model_density(double z, const CountModelParams& p, SpinState s,
                            const QuadratureOptions& q = density_quadrature()) {
  return density_no_flip(z, p, s) + density_one_flip(z, p, s, q) + density_two_flip(z, p, s, q);
}

// Integral of S_I over [a, b]; the z integral is done analytically inside the u quadrature.
inline double model_mass(double a, double b, const CountModelParams& p, SpinState s,
                         const QuadratureOptions& q = density_quadrature()) {
  const detail::FlipKernel k(p, s);
  double mass = std::exp(-k.lt_i) * detail::normal_interval(a, b, k.mu_i, k.var_i);
  if (k.lt_i > 0.0) {
    mass += integrate(
                [&](double u) {
                  return (k.one_flip_weight(u) + k.two_flip_weight(u)) * detail::normal_interval(a, b, k.mean(u), k.var(u));
                },
                0.0, 1.0, q)
                .value;
  }
  return mass;
}

// Probability mass of three or more flips dropped by the truncated model.
inline double truncation_bound(double lambda_T) {
  return std::max(0.0, -std::expm1(-lambda_T) - lambda_T * std::exp(-lambda_T) * (1.0 + 0.5 * lambda_T));
}

struct CountHistogram {
  double bin_width = 15.0;
  std::vector<double> bin_edges;    // size = frequencies.size() + 1
  std::vector<double> frequencies;  // normalized, sums to 1 when n_samples > 0
  std::size_t n_samples = 0;

  std::size_t bins() const { return frequencies.size(); }
  double center(std::size_t j) const { return 0.5 * (bin_edges[j] + bin_edges[j + 1]); }
};

inline std::vector<double> aligned_edges(double lo, double hi, double bin_width) {
  if (!(bin_width > 0.0)) throw InvalidArgument("histogram: bin_width must be positive");
  const double first = std::floor(lo / bin_width) * bin_width;
  auto n = static_cast<std::size_t>(std::floor((hi - first) / bin_width)) + 1;
  std::vector<double> edges(n + 1);
  for (std::size_t i = 0; i <= n; ++i) edges[i] = first + static_cast<double>(i) * bin_width;
  return edges;
}

inline CountHistogram make_histogram(const std::vector<double>& values, const std::vector<double>& edges) {
  CountHistogram h;
  h.bin_width = edges.size() > 1 ? edges[1] - edges[0] : 0.0;
  h.bin_edges = edges;
  h.frequencies.assign(edges.size() - 1, 0.0);
  for (double v : values) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    if (it == edges.begin() || it == edges.end()) continue;
    h.frequencies[static_cast<std::size_t>(it - edges.begin()) - 1] += 1.0;
    ++h.n_samples;
  }
  if (h.n_samples > 0)
    for (auto& f : h.frequencies) f /= static_cast<double>(h.n_samples);
  return h;
}

struct PairSelection {
  double init_threshold_dark = 615.0;
  double init_threshold_bright = 845.0;
  double retained_fraction_dark = 0.0;
  double retained_fraction_bright = 0.0;
};

struct ConditionalHistograms {
  CountHistogram dark;
  CountHistogram bright;
  PairSelection selection;
};

inline constexpr std::size_t min_retained_pairs = 50;

// Successor counts N(k+1) of pairs with N(k) <= dark threshold (dark) or
// N(k) >= bright threshold (bright), binned on a shared grid aligned to
// multiples of bin_width.
inline ConditionalHistograms conditional_histograms(const JumpTrace& trace, PairSelection selection,
                                                    double bin_width = 15.0) {
  if (trace.size() < 2) throw InvalidArgument("conditional_histograms: trace needs at least two bins");
  if (!(selection.init_threshold_dark < selection.init_threshold_bright))
    throw InvalidArgument("conditional_histograms: dark threshold must be below bright threshold");
  std::vector<double> dark, bright;
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    const double n = trace.bin_counts[k];
    if (n <= selection.init_threshold_dark) dark.push_back(trace.bin_counts[k + 1]);
    if (n >= selection.init_threshold_bright) bright.push_back(trace.bin_counts[k + 1]);
  }
  const double pairs = static_cast<double>(trace.size() - 1);
  selection.retained_fraction_dark = static_cast<double>(dark.size()) / pairs;
  selection.retained_fraction_bright = static_cast<double>(bright.size()) / pairs;
  if (dark.size() < min_retained_pairs || bright.size() < min_retained_pairs)
    throw InsufficientData("conditional_histograms: fewer than 50 retained pairs (dark " + std::to_string(dark.size()) +
                               ", bright " + std::to_string(bright.size()) + "); use a longer trace",
                           dark.size(), bright.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : {&dark, &bright})
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const auto edges = aligned_edges(lo, hi, bin_width);
  return {make_histogram(dark, edges), make_histogram(bright, edges), selection};
}

enum class FitMethod { maximum_likelihood, least_squares };

struct CountFit {
  CountModelParams params;
  double chi2 = 0.0;
  int dof = 0;
  double objective = 0.0;  // negative log-likelihood or sum of squares
  double truncation_bound_dark = 0.0;
  double truncation_bound_bright = 0.0;
  double initialization_error_dark = 0.0;  // 0 unless the correction is enabled
  double initialization_error_bright = 0.0;
  std::vector<std::string> warnings;
  std::vector<double> history;
};

struct CountFitOptions {
  FitMethod method = FitMethod::maximum_likelihood;
  // Mix the opposite-state density into each conditional histogram with the
  // model-implied probability that the preceding bin ended in that state.
  bool initialization_correction = true;
  int max_iter = 4000;
  QuadratureOptions quadrature{1e-11, 0.0, 400};
};

// Starting point: lobe modes for the means, sigma_D^2 = mu_D, flip
// probabilities from the mass on the far side of the lobe midpoint.
inline CountModelParams initial_guess(const ConditionalHistograms& h) {
  const auto mode = [](const CountHistogram& x) {
    const auto it = std::max_element(x.frequencies.begin(), x.frequencies.end());
    return x.center(static_cast<std::size_t>(it - x.frequencies.begin()));
  };
  CountModelParams p;
  p.mu_dark = mode(h.dark);
  p.mu_bright = mode(h.bright);
  if (p.mu_bright <= p.mu_dark) p.mu_bright = p.mu_dark + h.dark.bin_width;
  p.sigma2_dark = p.mu_dark;
  p.sigma2_bright = p.mu_bright;
  const double mid = 0.5 * (p.mu_dark + p.mu_bright);
  double above = 0.0, below = 0.0;
  for (std::size_t j = 0; j < h.dark.bins(); ++j) {
    if (h.dark.center(j) > mid) above += h.dark.frequencies[j];
    if (h.bright.center(j) < mid) below += h.bright.frequencies[j];
  }
  p.lambda_dark_T = std::clamp(2.0 * above, 0.005, 0.9);
  p.lambda_bright_T = std::clamp(2.0 * below, 0.005, 0.9);
  return p;
}

// Joint probability that a bin's count lies in [a, b] and the bin ends in
// each state, for a bin starting in `s`; indexed by end state (dark, bright).
inline std::array<double, 2> end_state_mass(double a, double b, const CountModelParams& p, SpinState s,
                                            const QuadratureOptions& q = density_quadrature()) {
  const detail::FlipKernel k(p, s);
  const double same = std::exp(-k.lt_i) * detail::normal_interval(a, b, k.mu_i, k.var_i) +
                      (k.lt_i > 0.0 && k.lt_j > 0.0
                           ? integrate([&](double u) { return k.two_flip_weight(u) * detail::normal_interval(a, b, k.mean(u), k.var(u)); },
                                       0.0, 1.0, q)
                                 .value
                           : 0.0);
  const double flipped =
      k.lt_i > 0.0
          ? integrate([&](double u) { return k.one_flip_weight(u) * detail::normal_interval(a, b, k.mean(u), k.var(u)); }, 0.0, 1.0, q)
                .value
          : 0.0;
  return s == SpinState::dark ? std::array<double, 2>{same, flipped} : std::array<double, 2>{flipped, same};
}

// Probability that the bin following a selected bin starts in the opposite
// state: the dark selection keeps counts <= dark threshold, the bright one
// counts >= bright threshold. Bins start in steady state, dark with
// probability lambda_B / (lambda_D + lambda_B).
inline double initialization_error(const CountModelParams& p, SpinState selected, double threshold,
                                   const QuadratureOptions& q = density_quadrature()) {
  const double total_rate = p.lambda_dark_T + p.lambda_bright_T;
  const double pi_dark = total_rate > 0.0 ? p.lambda_bright_T / total_rate : 0.5;
  const double lo = selected == SpinState::dark ? -std::numeric_limits<double>::infinity() : threshold;
  const double hi = selected == SpinState::dark ? threshold : std::numeric_limits<double>::infinity();
  const auto from_dark = end_state_mass(lo, hi, p, SpinState::dark, q);
  const auto from_bright = end_state_mass(lo, hi, p, SpinState::bright, q);
  const double end_dark = pi_dark * from_dark[0] + (1.0 - pi_dark) * from_bright[0];
  const double end_bright = pi_dark * from_dark[1] + (1.0 - pi_dark) * from_bright[1];
  const double wrong = selected == SpinState::dark ? end_bright : end_dark;
  const double all = end_dark + end_bright;
  return all > 0.0 ? wrong / all : 0.0;
}

// Per-bin model probabilities of one histogram, normalized over its range.
// With `contamination` > 0 the opposite-state density is mixed in.
inline std::vector<double> model_bin_probabilities(const CountHistogram& h, const CountModelParams& p, SpinState s,
                                                   const QuadratureOptions& q = density_quadrature(),
                                                   double contamination = 0.0) {
  std::vector<double> m(h.bins());
  double total = 0.0;
  for (std::size_t j = 0; j < h.bins(); ++j) {
    const double a = h.bin_edges[j], b = h.bin_edges[j + 1];
    double mass = model_mass(a, b, p, s, q);
    if (contamination > 0.0) mass = (1.0 - contamination) * mass + contamination * model_mass(a, b, p, other(s), q);
    m[j] = std::max(mass, 0.0);
    total += m[j];
  }
  if (total > 0.0)
    for (auto& x : m) x /= total;
  return m;
}

// Fits mu_D, mu_B, sigma_D^2, lambda_D T, lambda_B T with sigma_B^2 = mu_B.
// Maximum likelihood treats each histogram as a multinomial sample over its
// bins.
inline CountFit fit_params(const ConditionalHistograms& h, std::optional<CountModelParams> guess = std::nullopt,
                           const CountFitOptions& opt = {}) {
  if (h.dark.n_samples == 0 || h.bright.n_samples == 0)
    throw FitFailure("fit_params: a histogram is empty; the flip model is not identifiable");
  if (h.dark.bin_edges != h.bright.bin_edges) throw InvalidArgument("fit_params: histograms must share binning");

  const CountModelParams start = guess.value_or(initial_guess(h));
  const double scale = start.mu_bright;
  const auto logit = [](double x) { return std::log(x / (1.0 - x)); };
  const auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const auto unpack = [&](const std::vector<double>& x) {
    CountModelParams p;
    p.mu_dark = x[0] * scale;
    p.mu_bright = x[1] * scale;
    p.sigma2_dark = std::exp(x[2]);
    p.sigma2_bright = p.mu_bright;
    p.lambda_dark_T = sigmoid(x[3]);
    p.lambda_bright_T = sigmoid(x[4]);
    return p;
  };
  const std::vector<double> x0 = {start.mu_dark / scale, start.mu_bright / scale, std::log(start.sigma2_dark),
                                  logit(std::clamp(start.lambda_dark_T, 1e-6, 0.999)),
                                  logit(std::clamp(start.lambda_bright_T, 1e-6, 0.999))};

  const auto contamination = [&](const CountModelParams& p, SpinState s) {
    if (!opt.initialization_correction) return 0.0;
    const double th = s == SpinState::dark ? h.selection.init_threshold_dark : h.selection.init_threshold_bright;
    return initialization_error(p, s, th, opt.quadrature);
  };

  const auto objective = [&](const std::vector<double>& x) {
    const auto p = unpack(x);
    if (!(p.mu_dark > 0.0 && p.mu_bright > 0.0)) return std::numeric_limits<double>::max();
    double value = 0.0;
    for (const auto& [hist, state] : {std::pair{&h.dark, SpinState::dark}, std::pair{&h.bright, SpinState::bright}}) {
      const auto prob = model_bin_probabilities(*hist, p, state, opt.quadrature, contamination(p, state));
      const double n = static_cast<double>(hist->n_samples);
      for (std::size_t j = 0; j < prob.size(); ++j) {
        if (opt.method == FitMethod::maximum_likelihood) {
          const double count = hist->frequencies[j] * n;
          if (count > 0.0) value -= count * std::log(std::max(prob[j], 1e-300));
        } else {
          const double d = hist->frequencies[j] - prob[j];
          value += d * d;
        }
      }
    }
    return value;
  };

  NelderMeadOptions nm;
  nm.max_iter = opt.max_iter;
  nm.initial_step = 0.05;
  nm.f_tol = 1e-12;
  nm.x_tol = 1e-7;
  const auto result = nelder_mead(objective, x0, nm);
  if (!result.converged) throw FitFailure("fit_params: optimizer did not converge", result.x, result.history);

  CountFit fit;
  fit.params = unpack(result.x);
  fit.objective = result.value;
  fit.history = result.history;
  fit.truncation_bound_dark = truncation_bound(fit.params.lambda_dark_T);
  fit.truncation_bound_bright = truncation_bound(fit.params.lambda_bright_T);
  fit.initialization_error_dark = contamination(fit.params, SpinState::dark);
  fit.initialization_error_bright = contamination(fit.params, SpinState::bright);
  int used_bins = 0;
  for (const auto& [hist, state] : {std::pair{&h.dark, SpinState::dark}, std::pair{&h.bright, SpinState::bright}}) {
    const auto prob = model_bin_probabilities(*hist, fit.params, state, opt.quadrature, contamination(fit.params, state));
    const double n = static_cast<double>(hist->n_samples);
    for (std::size_t j = 0; j < prob.size(); ++j) {
      const double expected = n * prob[j];
      if (expected <= 0.0) continue;
      const double d = hist->frequencies[j] * n - expected;
      fit.chi2 += d * d / expected;
      ++used_bins;
    }
    --used_bins;
  }
  fit.dof = std::max(1, used_bins - 5);
  for (const auto& [name, x] : {std::pair{"lambda_dark_T", result.x[3]}, std::pair{"lambda_bright_T", result.x[4]}})
    if (std::abs(x) > 12.0) fit.warnings.push_back(std::string(name) + " at its bound; flip rate not identifiable");
  return fit;
}

// Histogram of the fitted model density on a fine grid, for fidelity curves.
inline CountHistogram model_histogram(const CountModelParams& p, SpinState s, const std::vector<double>& edges,
                                      const QuadratureOptions& q = density_quadrature()) {
  CountHistogram h;
  h.bin_width = edges.size() > 1 ? edges[1] - edges[0] : 0.0;
  h.bin_edges = edges;
  h.frequencies.resize(edges.size() - 1);
  for (std::size_t j = 0; j + 1 < edges.size(); ++j) h.frequencies[j] = model_mass(edges[j], edges[j + 1], p, s, q);
  h.n_samples = 0;
  return h;
}

}  // namespace nvjump
