#pragma once

// 13C depolarization under repetitive readout: three normalized Lorentzian
// rates (anisotropic hyperfine, ground- and excited-state flip-flops) combined
// with fitted weights into gamma_1 = 1 / T1.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "nvjump/error.hpp"
#include "nvjump/optimize.hpp"
#include "nvjump/spin_model.hpp"

namespace nvjump {

// A_ani^2 / (A_ani^2 + (A_zz - gamma_n B)^2), peak 1 at gamma_n B = A_zz.
inline double gamma_ani(const HyperfineTensor& tensor, double gamma_n_khz_per_g, double b) {
  const double a2 = tensor.a_ani * tensor.a_ani;
  const double detuning = tensor.a_zz - gamma_n_khz_per_g * b;
  const double denom = a2 + detuning * detuning;
  if (denom == 0.0) return 0.0;  // A_ani -> 0 limit on resonance
  return a2 / denom;
}

// 2 A_perp^2 / (2 A_perp^2 + (D - gamma_e B)^2), peak 1 at B = D / gamma_e.
inline double gamma_perp(const HyperfineTensor& tensor, const PhysicalConstants& constants, Manifold manifold, double b) {
  const double two_a2 = 2.0 * tensor.a_perp * tensor.a_perp;  // kHz^2
  const double detuning = (zero_field_splitting(constants, manifold) - constants.gamma_e * b) * 1e3;  // kHz
  const double denom = two_a2 + detuning * detuning;
  if (denom == 0.0) return 0.0;
  return two_a2 / denom;
}

struct RateWeights {
  double alpha_ani = 0.0;  // 1/s
  double alpha_gs = 0.0;   // 1/s
  double alpha_es = 0.0;   // 1/s

  void validate() const {
    if (!(alpha_ani >= 0.0 && alpha_gs >= 0.0 && alpha_es >= 0.0)) throw InvalidArgument("rate weights must be >= 0");
  }
};

struct NormalizedRates {
  double ani, gs, es;
};

inline NormalizedRates normalized_rates(const HyperfineTensor& tensor, const PhysicalConstants& constants, double b) {
  return {gamma_ani(tensor, constants.gamma_n_c13, b), gamma_perp(tensor, constants, Manifold::ground, b),
          gamma_perp(tensor, constants, Manifold::excited, b)};
}

struct RelaxationRate {
  double gamma1 = 0.0;  // 1/s
  bool infinite_t1 = false;
  double t1() const { return infinite_t1 ? std::numeric_limits<double>::infinity() : 1.0 / gamma1; }
};

inline RelaxationRate total_rate(const RateWeights& weights, const HyperfineTensor& tensor,
                                 const PhysicalConstants& constants, double b) {
  weights.validate();
  const auto g = normalized_rates(tensor, constants, b);
  const double rate = weights.alpha_ani * g.ani + weights.alpha_gs * g.gs + weights.alpha_es * g.es;
  return {rate, rate == 0.0};
}

struct T1Point {
  double b = 0.0;   // G
  double t1 = 0.0;  // s, +inf when no relaxation channel is active
};

inline std::vector<T1Point> t1_curve(const RateWeights& weights, const HyperfineTensor& tensor,
                                     const PhysicalConstants& constants, std::span<const double> b_grid) {
  std::vector<T1Point> out;
  out.reserve(b_grid.size());
  double previous = -std::numeric_limits<double>::infinity();
  for (double b : b_grid) {
    if (!(b > 0.0) || !(b > previous)) throw InvalidArgument("t1_curve: field grid must be positive and ascending");
    previous = b;
    out.push_back({b, total_rate(weights, tensor, constants, b).t1()});
  }
  return out;
}

struct T1Measurement {
  double b = 0.0;
  double t1_bright = 0.0;
  double t1_dark = 0.0;
  double err_bright = 0.0;
  double err_dark = 0.0;
};

struct T1Dataset {
  std::vector<T1Measurement> points;

  void validate() const {
    for (const auto& p : points)
      if (!(p.b > 0.0) || !(p.t1_bright > 0.0) || !(p.t1_dark > 0.0))
        throw InvalidArgument("T1 dataset: fields and T1 values must be positive");
  }
};

struct SeriesFit {
  RateWeights weights;
  std::vector<double> residuals;  // (T1_model - T1_data) / err per point
  double chi2 = 0.0;
  bool converged = false;
  bool degenerate = false;  // weights not identifiable from the field coverage
  double condition_number = 0.0;
  RateWeights std_error;  // 1/s, from the linearized covariance, inflated by chi2/dof when > 1
};

struct WeightFit {
  SeriesFit bright;
  SeriesFit dark;
};

namespace detail {

// Condition number of the column-normalized design matrix of normalized rates.
inline double rate_design_condition(std::span<const double> fields, const HyperfineTensor& tensor,
                                    const PhysicalConstants& constants) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(fields.size()), 3);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto r = normalized_rates(tensor, constants, fields[i]);
    g.row(static_cast<Eigen::Index>(i)) << r.ani, r.gs, r.es;
  }
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double n = g.col(j).norm();
    if (n == 0.0) return std::numeric_limits<double>::infinity();
    g.col(j) /= n;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(g);
  const auto& s = svd.singularValues();
  return s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
}

inline SeriesFit fit_series(std::span<const double> fields, std::span<const double> t1, std::span<const double> err,
                            const HyperfineTensor& tensor, const PhysicalConstants& constants, int max_iter) {
  const auto n = static_cast<Eigen::Index>(fields.size());
  Eigen::MatrixXd g(n, 3);
  Eigen::VectorXd sigma(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = normalized_rates(tensor, constants, fields[static_cast<std::size_t>(i)]);
    g.row(i) << r.ani, r.gs, r.es;
    const double e = err[static_cast<std::size_t>(i)];
    sigma(i) = e > 0.0 ? e : 0.05 * t1[static_cast<std::size_t>(i)];
  }

  // Starting point: 1/T1 is linear in the weights; relative-error weighted
  // linear least squares, clamped to stay strictly positive.
  // Each equation g_i . alpha = 1 / T1_i is multiplied through by T1_i.
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd gw(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) gw.row(i) = g.row(i) * t1[static_cast<std::size_t>(i)];
  Eigen::VectorXd alpha0 = gw.colPivHouseholderQr().solve(ones);
  const double floor = 1e-6 * std::max(1.0, alpha0.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < 3; ++j) alpha0(j) = std::max(alpha0(j), floor);

  // alpha = p^2 keeps the weights non-negative.
  const auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    r.resize(n);
    J.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gamma = g(i, 0) * p(0) * p(0) + g(i, 1) * p(1) * p(1) + g(i, 2) * p(2) * p(2);
      const double model = 1.0 / gamma;
      r(i) = (model - t1[static_cast<std::size_t>(i)]) / sigma(i);
      for (Eigen::Index j = 0; j < 3; ++j) J(i, j) = -model * model * g(i, j) * 2.0 * p(j) / sigma(i);
    }
  };
  Eigen::VectorXd p0 = alpha0.cwiseSqrt();
  LevenbergMarquardtOptions opt;
  opt.max_iter = max_iter;
  const auto fit = levenberg_marquardt(residual, p0, opt);

  SeriesFit out;
  out.weights = {fit.x(0) * fit.x(0), fit.x(1) * fit.x(1), fit.x(2) * fit.x(2)};
  out.residuals.assign(fit.residuals.data(), fit.residuals.data() + fit.residuals.size());
  out.chi2 = fit.residuals.squaredNorm();
  out.converged = fit.converged;
  out.condition_number = rate_design_condition(fields, tensor, constants);

  Eigen::MatrixXd ja(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gamma = g.row(i).dot(Eigen::Vector3d(out.weights.alpha_ani, out.weights.alpha_gs, out.weights.alpha_es));
    for (Eigen::Index j = 0; j < 3; ++j) ja(i, j) = -g(i, j) / (gamma * gamma * sigma(i));
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(ja, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  bool finite_cov = sv(2) > 0.0 && sv(0) / sv(2) < 1e12;
  double se[3] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
  if (finite_cov) {
    const double dof = static_cast<double>(n - 3);
    const double inflate = dof > 0.0 ? std::max(1.0, out.chi2 / dof) : 1.0;
    const Eigen::MatrixXd v = svd.matrixV();
    for (Eigen::Index j = 0; j < 3; ++j) {
      double var = 0.0;
      for (Eigen::Index k = 0; k < 3; ++k) var += v(j, k) * v(j, k) / (sv(k) * sv(k));
      se[j] = std::sqrt(var * inflate);
    }
  }
  out.std_error = {se[0], se[1], se[2]};
  // A weight whose standard error exceeds its value is not determined by the data.
  const bool unresolved = !(se[0] < out.weights.alpha_ani) || !(se[1] < out.weights.alpha_gs) ||
                          !(se[2] < out.weights.alpha_es);
  out.degenerate = !(out.condition_number < 1e8) || unresolved;
  if (!out.converged) {
    throw FitFailure("fit_weights: Levenberg-Marquardt did not converge",
                     {out.weights.alpha_ani, out.weights.alpha_gs, out.weights.alpha_es}, fit.history);
  }
  return out;
}

}  // namespace detail

// Fits (alpha_ani, alpha_gs, alpha_es) separately to the bright and dark T1(B)
// series, with A_ani fixed to `a_ani_assumed` (kHz).
inline WeightFit fit_weights(const T1Dataset& dataset, HyperfineTensor tensor, const PhysicalConstants& constants,
                             double a_ani_assumed, int max_iter = 500) {
  dataset.validate();
  if (dataset.points.size() < 4) throw InvalidArgument("fit_weights: need at least 4 data points");
  tensor.a_ani = a_ani_assumed;
  std::vector<double> fields, tb, td, eb, ed;
  for (const auto& p : dataset.points) {
    fields.push_back(p.b);
    tb.push_back(p.t1_bright);
    td.push_back(p.t1_dark);
    eb.push_back(p.err_bright);
    ed.push_back(p.err_dark);
  }
  return {detail::fit_series(fields, tb, eb, tensor, constants, max_iter),
          detail::fit_series(fields, td, ed, tensor, constants, max_iter)};
}

}  // namespace nvjump
