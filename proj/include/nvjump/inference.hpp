#pragma once

// Latent-state inference on quantum-jump traces: Gaussian-emission hidden
// Markov models (Baum-Welch, Viterbi), T1 from self-transition
// probabilities, readout/initialization fidelities from conditional count
// distributions, and dwell-time clustering.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "nvjump/counting_stats.hpp"
#include "nvjump/error.hpp"
#include "nvjump/jump_sim.hpp"

namespace nvjump {

// K-state HMM with one Gaussian emission per state. After fitting, states are
// ordered by ascending mean (state 0 = dark).
template <std::size_t K>
struct GaussianHmm {
  std::array<std::array<double, K>, K> transition{};  // row-stochastic, per bin
  std::array<double, K> means{};
  std::array<double, K> variances{};
  std::array<double, K> initial{};

  void validate() const {
    for (std::size_t i = 0; i < K; ++i) {
      double row = 0.0;
      for (double p : transition[i]) {
        if (!(p >= 0.0)) throw InvalidArgument("GaussianHmm: negative transition probability");
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-12) throw InvalidArgument("GaussianHmm: transition rows must sum to 1");
      if (!(variances[i] > 0.0)) throw InvalidArgument("GaussianHmm: variances must be positive");
    }
  }
};

using HmmModel = GaussianHmm<2>;

namespace detail {

template <std::size_t K>
std::array<double, K> log_emissions(const GaussianHmm<K>& m, double x) {
  std::array<double, K> out{};
  for (std::size_t j = 0; j < K; ++j) {
    const double d = x - m.means[j];
    out[j] = -0.5 * d * d / m.variances[j] - 0.5 * std::log(2.0 * std::numbers::pi * m.variances[j]);
  }
  return out;
}

// Row-stochastic transitions with rows renormalized to absorb rounding.
template <std::size_t K>
void normalize_rows(GaussianHmm<K>& m) {
  for (auto& row : m.transition) {
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    for (auto& p : row) p /= s;
  }
  const double s = std::accumulate(m.initial.begin(), m.initial.end(), 0.0);
  for (auto& p : m.initial) p /= s;
}

}  // namespace detail

template <std::size_t K>
struct ForwardBackward {
  std::vector<std::array<double, K>> posteriors;  // gamma_t(j)
  std::array<std::array<double, K>, K> transition_counts{};
  double log_likelihood = 0.0;
};

// Scaled forward-backward recursions; emissions are shifted by their per-bin
// maximum in the log domain so no factor underflows.
template <std::size_t K>
ForwardBackward<K> forward_backward(std::span<const double> x, const GaussianHmm<K>& m) {
  const std::size_t n = x.size();
  std::vector<std::array<double, K>> alpha(n), emis(n);
  std::vector<double> scale(n);
  ForwardBackward<K> out;
  double ll = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto le = detail::log_emissions(m, x[t]);
    const double shift = *std::max_element(le.begin(), le.end());
    for (std::size_t j = 0; j < K; ++j) emis[t][j] = std::exp(le[j] - shift);
    double c = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      double prior = 0.0;
      if (t == 0)
        prior = m.initial[j];
      else
        for (std::size_t i = 0; i < K; ++i) prior += alpha[t - 1][i] * m.transition[i][j];
      alpha[t][j] = prior * emis[t][j];
      c += alpha[t][j];
    }
    if (!(c > 0.0)) throw NumericError("forward_backward: zero forward probability");
    for (auto& a : alpha[t]) a /= c;
    scale[t] = c;
    ll += std::log(c) + shift;
  }
  out.log_likelihood = ll;

  std::array<double, K> beta{};
  beta.fill(1.0);
  out.posteriors.resize(n);
  for (std::size_t t = n; t-- > 0;) {
    double norm = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      out.posteriors[t][j] = alpha[t][j] * beta[j];
      norm += out.posteriors[t][j];
    }
    for (auto& g : out.posteriors[t]) g /= norm;
    if (t == 0) break;
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j)
        out.transition_counts[i][j] += alpha[t - 1][i] * m.transition[i][j] * emis[t][j] * beta[j] / scale[t];
    std::array<double, K> next{};
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) next[i] += m.transition[i][j] * emis[t][j] * beta[j];
      next[i] /= scale[t];
    }
    beta = next;
  }
  return out;
}

// Deterministic start: 2-means on the counts for the emissions, flip
// probability `flip_prior` per bin, uniform initial distribution.
inline HmmModel initial_hmm(std::span<const double> x, double flip_prior = 0.05) {
  if (x.empty()) throw InvalidArgument("initial_hmm: empty trace");
  double lo = *std::min_element(x.begin(), x.end());
  double hi = *std::max_element(x.begin(), x.end());
  std::array<double, 2> c = {lo, hi};
  std::array<double, 2> sum{}, sum2{}, cnt{};
  for (int iter = 0; iter < 100; ++iter) {
    sum = sum2 = cnt = {};
    for (double v : x) {
      const std::size_t k = std::abs(v - c[0]) <= std::abs(v - c[1]) ? 0 : 1;
      sum[k] += v;
      sum2[k] += v * v;
      cnt[k] += 1.0;
    }
    std::array<double, 2> next = c;
    for (std::size_t k = 0; k < 2; ++k)
      if (cnt[k] > 0.0) next[k] = sum[k] / cnt[k];
    if (next == c) break;
    c = next;
  }
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double total_var = 0.0;
  for (double v : x) total_var += (v - mean) * (v - mean);
  total_var = std::max(total_var / static_cast<double>(x.size()), 1e-300);

  HmmModel m;
  for (std::size_t k = 0; k < 2; ++k) {
    m.means[k] = c[k];
    const double v = cnt[k] > 1.0 ? sum2[k] / cnt[k] - c[k] * c[k] : total_var;
    m.variances[k] = std::max(v, 1e-3 * total_var);
    m.initial[k] = 0.5;
    m.transition[k][k] = 1.0 - flip_prior;
    m.transition[k][1 - k] = flip_prior;
  }
  return m;
}

template <std::size_t K>
struct BaumWelchResult {
  GaussianHmm<K> model;
  std::vector<double> log_likelihood_history;
  int iterations = 0;
  bool converged = false;
  bool variance_floored = false;
  std::array<bool, K> identified{};  // false: state not supported by the data
};

// EM for a Gaussian HMM. Stops when the log-likelihood gain falls below tol or
// after max_iter M-steps. Variances are floored at 1e-6 of the data variance;
// hitting the floor is flagged.
template <std::size_t K>
BaumWelchResult<K> baum_welch(std::span<const double> x, GaussianHmm<K> model, double tol = 1e-6, int max_iter = 500) {
  if (x.size() < 10) throw InvalidArgument("baum_welch: trace must contain at least 10 bins");
  model.validate();
  const auto n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double data_var = 0.0;
  for (double v : x) data_var += (v - mean) * (v - mean);
  data_var /= n;
  const double var_floor = std::max(1e-6 * data_var, std::numeric_limits<double>::min());

  BaumWelchResult<K> out;
  ForwardBackward<K> fb;
  for (int iter = 0;; ++iter) {
    fb = forward_backward(x, model);
    out.log_likelihood_history.push_back(fb.log_likelihood);
    const auto& h = out.log_likelihood_history;
    if (h.size() > 1 && h.back() - h[h.size() - 2] < tol) {
      out.converged = true;
      break;
    }
    if (iter >= max_iter) break;

    GaussianHmm<K> next = model;
    std::array<double, K> occupancy{};
    for (const auto& g : fb.posteriors)
      for (std::size_t j = 0; j < K; ++j) occupancy[j] += g[j];
    next.initial = fb.posteriors.front();
    for (std::size_t i = 0; i < K; ++i) {
      const double out_mass = std::accumulate(fb.transition_counts[i].begin(), fb.transition_counts[i].end(), 0.0);
      if (out_mass > 0.0)
        for (std::size_t j = 0; j < K; ++j) next.transition[i][j] = fb.transition_counts[i][j] / out_mass;
    }
    for (std::size_t j = 0; j < K; ++j) {
      if (!(occupancy[j] > 0.0)) continue;
      double s = 0.0;
      for (std::size_t t = 0; t < x.size(); ++t) s += fb.posteriors[t][j] * x[t];
      next.means[j] = s / occupancy[j];
      double v = 0.0;
      for (std::size_t t = 0; t < x.size(); ++t) {
        const double d = x[t] - next.means[j];
        v += fb.posteriors[t][j] * d * d;
      }
      v /= occupancy[j];
      if (v < var_floor) {
        v = var_floor;
        out.variance_floored = true;
      }
      next.variances[j] = v;
    }
    detail::normalize_rows(next);
    model = next;
    out.iterations = iter + 1;
  }

  // Order states by mean.
  std::array<std::size_t, K> order{};
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return model.means[a] < model.means[b]; });
  GaussianHmm<K> sorted;
  std::array<double, K> occupancy{};
  for (std::size_t a = 0; a < K; ++a) {
    sorted.means[a] = model.means[order[a]];
    sorted.variances[a] = model.variances[order[a]];
    sorted.initial[a] = model.initial[order[a]];
    for (std::size_t b = 0; b < K; ++b) sorted.transition[a][b] = model.transition[order[a]][order[b]];
    for (const auto& g : fb.posteriors) occupancy[a] += g[order[a]];
  }
  out.model = sorted;

  // A state is unidentified when it explains (almost) no bins or when its
  // emission is indistinguishable from a better-populated neighbour.
  for (std::size_t a = 0; a < K; ++a) out.identified[a] = occupancy[a] >= std::max(5.0, 1e-3 * n);
  for (std::size_t a = 0; a + 1 < K; ++a) {
    const double sep = (sorted.means[a + 1] - sorted.means[a]) /
                       std::sqrt(0.5 * (sorted.variances[a] + sorted.variances[a + 1]));
    if (sep < 2.0) {
      const std::size_t weaker = occupancy[a] < occupancy[a + 1] ? a : a + 1;
      out.identified[weaker] = false;
    }
  }
  return out;
}

// Most probable state path (log-domain Viterbi).
template <std::size_t K>
std::vector<int> viterbi(std::span<const double> x, const GaussianHmm<K>& m) {
  m.validate();
  const std::size_t n = x.size();
  if (n == 0) return {};
  std::array<std::array<double, K>, K> log_a{};
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) log_a[i][j] = std::log(m.transition[i][j]);
  std::vector<std::array<int, K>> back(n);
  auto le = detail::log_emissions(m, x[0]);
  std::array<double, K> score{};
  for (std::size_t j = 0; j < K; ++j) score[j] = std::log(m.initial[j]) + le[j];
  for (std::size_t t = 1; t < n; ++t) {
    le = detail::log_emissions(m, x[t]);
    std::array<double, K> next{};
    for (std::size_t j = 0; j < K; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t i = 0; i < K; ++i) {
        const double s = score[i] + log_a[i][j];
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      next[j] = best + le[j];
      back[t][j] = arg;
    }
    score = next;
  }
  std::vector<int> path(n);
  path[n - 1] = static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][static_cast<std::size_t>(path[t])];
  return path;
}

// Joint log-probability of a given state path and the observations.
template <std::size_t K>
double path_log_probability(std::span<const double> x, const GaussianHmm<K>& m, const std::vector<int>& path) {
  double lp = std::log(m.initial[static_cast<std::size_t>(path[0])]);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const auto s = static_cast<std::size_t>(path[t]);
    if (t > 0) lp += std::log(m.transition[static_cast<std::size_t>(path[t - 1])][s]);
    lp += detail::log_emissions(m, x[t])[s];
  }
  return lp;
}

struct T1Value {
  double t1 = 0.0;  // s
  bool infinite = false;
  bool sub_bin = false;
};

struct T1Estimate {
  T1Value dark;
  T1Value bright;
};

// T1 = -bin_time / ln(p_ss), the exact inversion of exp(-bin_time / T1).
inline T1Value t1_from_self_transition(double p_ss, double bin_time) {
  if (p_ss >= 1.0) return {std::numeric_limits<double>::infinity(), true, false};
  if (p_ss <= 0.0) return {0.0, false, true};
  return {-bin_time / std::log(p_ss), false, false};
}

inline T1Estimate t1_from_model(const HmmModel& model, double bin_time) {
  return {t1_from_self_transition(model.transition[0][0], bin_time),
          t1_from_self_transition(model.transition[1][1], bin_time)};
}

// ---------------------------------------------------------------------------
// Readout fidelity
// ---------------------------------------------------------------------------

namespace detail {

// Mass of a histogram below `threshold`, linear within a bin; normalized to
// the histogram total.
inline double cumulative_below(const CountHistogram& h, double threshold) {
  double total = 0.0, below = 0.0;
  for (std::size_t j = 0; j < h.bins(); ++j) {
    const double m = h.frequencies[j];
    total += m;
    const double lo = h.bin_edges[j], hi = h.bin_edges[j + 1];
    if (threshold >= hi)
      below += m;
    else if (threshold > lo)
      below += m * (threshold - lo) / (hi - lo);
  }
  return total > 0.0 ? below / total : 0.0;
}

inline double ratio_or_one(double num, double den) { return den > 0.0 ? num / den : 1.0; }

}  // namespace detail

struct FidelityPoint {
  double f_dark = 1.0;
  double f_bright = 1.0;
};

// F_dark(N) = D(<N) / (D(<N) + B(<N)),  F_bright(N) = B(>N) / (D(>N) + B(>N)),
// with both distributions normalized. A vanishing denominator counts as 1.
inline FidelityPoint fidelity_at(const CountHistogram& dark, const CountHistogram& bright, double threshold) {
  const double d_below = detail::cumulative_below(dark, threshold);
  const double b_below = detail::cumulative_below(bright, threshold);
  const double d_above = 1.0 - d_below, b_above = 1.0 - b_below;
  return {detail::ratio_or_one(d_below, d_below + b_below), detail::ratio_or_one(b_above, d_above + b_above)};
}

struct FidelityReport {
  std::vector<double> threshold_grid;
  std::vector<double> f_dark_curve;
  std::vector<double> f_bright_curve;
  double optimal_threshold = 0.0;
  double f_dark_at_optimum = 0.0;
  double f_bright_at_optimum = 0.0;
  double f_at_optimum = 0.0;  // min of the two
  double init_threshold_dark = 0.0;
  double init_threshold_bright = 0.0;
  double init_fidelity_dark = 0.0;
  double init_fidelity_bright = 0.0;
  double retained_fraction_dark = 0.0;
  double retained_fraction_bright = 0.0;
};

inline FidelityReport fidelity_curves(const CountHistogram& dark, const CountHistogram& bright,
                                      std::span<const double> threshold_grid) {
  if (dark.bin_edges != bright.bin_edges) throw InvalidArgument("fidelity_curves: histograms must share binning");
  if (threshold_grid.empty()) throw InvalidArgument("fidelity_curves: empty threshold grid");
  FidelityReport r;
  r.threshold_grid.assign(threshold_grid.begin(), threshold_grid.end());
  for (double n : threshold_grid) {
    const auto f = fidelity_at(dark, bright, n);
    r.f_dark_curve.push_back(f.f_dark);
    r.f_bright_curve.push_back(f.f_bright);
  }
  return r;
}

// Uniform grid over the shared histogram support.
inline std::vector<double> threshold_grid(const CountHistogram& h, double step = 1.0) {
  std::vector<double> grid;
  const double lo = h.bin_edges.front(), hi = h.bin_edges.back();
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) grid.push_back(lo + static_cast<double>(i) * step);
  return grid;
}

// Maximizes min(F_dark, F_bright); ties go to the smallest |F_dark - F_bright|.
inline FidelityReport& optimal_threshold(FidelityReport& r) {
  std::size_t best = 0;
  const auto worst = [&](std::size_t i) { return std::min(r.f_dark_curve[i], r.f_bright_curve[i]); };
  const auto gap = [&](std::size_t i) { return std::abs(r.f_dark_curve[i] - r.f_bright_curve[i]); };
  for (std::size_t i = 1; i < r.threshold_grid.size(); ++i) {
    const double a = worst(i), b = worst(best);
    if (a > b + 1e-12 || (std::abs(a - b) <= 1e-12 && gap(i) < gap(best))) best = i;
  }
  r.optimal_threshold = r.threshold_grid[best];
  r.f_dark_at_optimum = r.f_dark_curve[best];
  r.f_bright_at_optimum = r.f_bright_curve[best];
  r.f_at_optimum = worst(best);
  return r;
}

struct InitThresholds {
  double dark = 615.0;
  double bright = 845.0;
};

// Initialization fidelity F_dark(N_i,dark), F_bright(N_i,bright) read off the
// count distributions, and the share of bins passing each threshold.
inline FidelityReport& initialization_report(FidelityReport& report, const JumpTrace& trace, InitThresholds th,
                                             const CountHistogram& dark, const CountHistogram& bright) {
  if (!(th.dark < th.bright)) throw InvalidArgument("initialization_report: thresholds must be ordered");
  std::size_t below = 0, above = 0;
  for (double c : trace.bin_counts) {
    below += c <= th.dark ? 1 : 0;
    above += c >= th.bright ? 1 : 0;
  }
  if (below == 0 || above == 0)
    throw InsufficientData("initialization_report: no bins pass an initialization threshold", below, above);
  report.init_threshold_dark = th.dark;
  report.init_threshold_bright = th.bright;
  report.init_fidelity_dark = fidelity_at(dark, bright, th.dark).f_dark;
  report.init_fidelity_bright = fidelity_at(dark, bright, th.bright).f_bright;
  report.retained_fraction_dark = static_cast<double>(below) / static_cast<double>(trace.size());
  report.retained_fraction_bright = static_cast<double>(above) / static_cast<double>(trace.size());
  return report;
}

// ---------------------------------------------------------------------------
// Dwell-time clustering
// ---------------------------------------------------------------------------

struct DwellClusters {
  double fast_mean = 0.0;  // s
  double slow_mean = 0.0;  // s
  std::size_t fast_count = 0;
  std::size_t slow_count = 0;
  double separation() const { return fast_mean > 0.0 ? slow_mean / fast_mean : 0.0; }
};

// Two-means clustering of dwell durations on a log scale.
inline DwellClusters cluster_dwell_times(std::span<const double> dwells) {
  if (dwells.size() < 2) throw InsufficientData("cluster_dwell_times: need at least two dwells", dwells.size(), 0);
  std::vector<double> logs;
  logs.reserve(dwells.size());
  for (double d : dwells) {
    if (!(d > 0.0)) throw InvalidArgument("cluster_dwell_times: dwell durations must be positive");
    logs.push_back(std::log(d));
  }
  std::array<double, 2> c = {*std::min_element(logs.begin(), logs.end()), *std::max_element(logs.begin(), logs.end())};
  std::vector<int> label(logs.size(), 0);
  for (int iter = 0; iter < 200; ++iter) {
    std::array<double, 2> sum{}, cnt{};
    for (std::size_t i = 0; i < logs.size(); ++i) {
      label[i] = std::abs(logs[i] - c[0]) <= std::abs(logs[i] - c[1]) ? 0 : 1;
      sum[static_cast<std::size_t>(label[i])] += logs[i];
      cnt[static_cast<std::size_t>(label[i])] += 1.0;
    }
    std::array<double, 2> next = c;
    for (std::size_t k = 0; k < 2; ++k)
      if (cnt[k] > 0.0) next[k] = sum[k] / cnt[k];
    if (next == c) break;
    c = next;
  }
  DwellClusters out;
  std::array<double, 2> total{};
  for (std::size_t i = 0; i < dwells.size(); ++i) {
    total[static_cast<std::size_t>(label[i])] += dwells[i];
    (label[i] == 0 ? out.fast_count : out.slow_count) += 1;
  }
  out.fast_mean = out.fast_count ? total[0] / static_cast<double>(out.fast_count) : 0.0;
  out.slow_mean = out.slow_count ? total[1] / static_cast<double>(out.slow_count) : 0.0;
  return out;
}

}  // namespace nvjump
