#pragma once

// End-to-end trace analysis: conditional histograms, count-model fit,
// fidelity curves, optimal threshold, initialization figures, and HMM T1.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nvjump/counting_stats.hpp"
#include "nvjump/inference.hpp"

namespace nvjump {

enum class FidelitySource { fitted_model, raw_histogram };

struct AnalysisOptions {
  InitThresholds thresholds{};
  double bin_width = 15.0;
  double threshold_step = 1.0;
  FidelitySource source = FidelitySource::fitted_model;
  CountFitOptions fit{};
  bool run_hmm = true;
  double hmm_tol = 1e-6;
  int hmm_max_iter = 500;
};

struct AnalysisResult {
  ConditionalHistograms histograms;
  std::optional<CountFit> count_fit;
  FidelityReport fidelity;
  std::optional<BaumWelchResult<2>> hmm;
  std::optional<T1Estimate> t1_hmm;
  std::optional<T1Estimate> t1_count_fit;  // bin_time / lambda T
  bool fidelity_available = true;  // false when one state never appears in the trace
  std::vector<std::string> warnings;
};

// Shared fine binning for model-density histograms covering both lobes.
inline std::vector<double> model_edges(const CountModelParams& p, double step = 1.0) {
  const double spread = 8.0 * std::sqrt(std::max(p.sigma2_dark, p.sigma2_bright));
  const double lo = std::max(0.0, std::min(p.mu_dark, p.mu_bright) - spread);
  const double hi = std::max(p.mu_dark, p.mu_bright) + spread;
  return aligned_edges(lo, hi, step);
}

// Fidelity curves, optimum and initialization figures from a pair of
// distributions evaluated on `grid`.
inline FidelityReport fidelity_report(const JumpTrace& trace, const CountHistogram& dark, const CountHistogram& bright,
                                      InitThresholds th, std::span<const double> grid) {
  auto report = fidelity_curves(dark, bright, grid);
  optimal_threshold(report);
  initialization_report(report, trace, th, dark, bright);
  return report;
}

inline AnalysisResult analyze_trace(const JumpTrace& trace, const AnalysisOptions& opt = {}) {
  AnalysisResult out;
  PairSelection sel;
  sel.init_threshold_dark = opt.thresholds.dark;
  sel.init_threshold_bright = opt.thresholds.bright;
  try {
    out.histograms = conditional_histograms(trace, sel, opt.bin_width);
  } catch (const InsufficientData&) {
    // A long trace that never visits one state is reported, with that state
    // flagged, rather than rejected; short traces stay an error.
    if (!opt.run_hmm || trace.size() < min_retained_pairs + 1) throw;
    auto hmm = baum_welch<2>(trace.bin_counts, initial_hmm(trace.bin_counts), opt.hmm_tol, opt.hmm_max_iter);
    if (hmm.identified[0] && hmm.identified[1]) throw;
    out.t1_hmm = t1_from_model(hmm.model, trace.bin_time);
    out.hmm = std::move(hmm);
    out.fidelity_available = false;
    for (std::size_t k = 0; k < 2; ++k)
      if (!out.hmm->identified[k])
        out.warnings.push_back(std::string(k == 0 ? "dark" : "bright") + " state unidentifiable: no flips observed");
    return out;
  }

  try {
    out.count_fit = fit_params(out.histograms, std::nullopt, opt.fit);
    for (const auto& w : out.count_fit->warnings) out.warnings.push_back(w);
    const auto& p = out.count_fit->params;
    out.t1_count_fit = T1Estimate{
        p.lambda_dark_T > 0.0 ? T1Value{trace.bin_time / p.lambda_dark_T, false, false} : T1Value{INFINITY, true, false},
        p.lambda_bright_T > 0.0 ? T1Value{trace.bin_time / p.lambda_bright_T, false, false} : T1Value{INFINITY, true, false}};
  } catch (const FitFailure& e) {
    out.warnings.push_back(e.what());
  }

  if (opt.source == FidelitySource::fitted_model && out.count_fit) {
    const auto edges = model_edges(out.count_fit->params);
    const auto dark = model_histogram(out.count_fit->params, SpinState::dark, edges);
    const auto bright = model_histogram(out.count_fit->params, SpinState::bright, edges);
    const auto grid = threshold_grid(dark, opt.threshold_step);
    out.fidelity = fidelity_report(trace, dark, bright, opt.thresholds, grid);
  } else {
    if (opt.source == FidelitySource::fitted_model) out.warnings.push_back("fidelity from raw histograms: count fit unavailable");
    const auto grid = threshold_grid(out.histograms.dark, opt.threshold_step);
    out.fidelity = fidelity_report(trace, out.histograms.dark, out.histograms.bright, opt.thresholds, grid);
  }

  if (opt.run_hmm) {
    out.hmm = baum_welch<2>(trace.bin_counts, initial_hmm(trace.bin_counts), opt.hmm_tol, opt.hmm_max_iter);
    out.t1_hmm = t1_from_model(out.hmm->model, trace.bin_time);
    if (!out.hmm->identified[0] || !out.hmm->identified[1]) out.warnings.push_back("HMM: a state is unidentified (no flips observed?)");
    if (out.hmm->variance_floored) out.warnings.push_back("HMM: emission variance hit the regularization floor");
  }
  return out;
}

}  // namespace nvjump
