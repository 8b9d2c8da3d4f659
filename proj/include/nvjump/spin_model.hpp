#pragma once

// Spin Hamiltonians of the NV electron (S = 1) coupled to a 13C nucleus
// (I = 1/2), ESR line positions, ESR spectrum and Ramsey/FID synthesis, and a
// Fourier-domain estimator of the 13C polarization.
//
// Units: energies and frequencies in MHz, hyperfine couplings in kHz, fields
// in gauss, times in microseconds.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "nvjump/error.hpp"
#include "nvjump/hermitian.hpp"
#include "nvjump/optimize.hpp"

namespace nvjump {

struct PhysicalConstants {
  double d_gs = 2870.0;       // MHz
  double d_es = 1420.0;       // MHz
  double gamma_e = 2.80;      // MHz/G
  double gamma_n_c13 = 1.07;  // kHz/G

  void validate() const {
    for (double v : {d_gs, d_es, gamma_e, gamma_n_c13})
      if (!std::isfinite(v) || v <= 0.0) throw InvalidConfig("physical constants must be finite and positive");
    if (!(d_gs > d_es)) throw InvalidConfig("ground-state zero-field splitting must exceed the excited-state one");
  }
};

struct HyperfineTensor {
  double a_zz = 258.0;     // kHz
  double a_ani = 0.0;      // kHz, sqrt(A_zx^2 + A_zy^2)
  double phi = 0.0;        // rad
  double a_perp = -129.0;  // kHz, (A_xx + A_yy) / 2

  // Point-dipole tensor: traceless, so A_perp = -A_zz / 2.
  static HyperfineTensor pure_dipolar(double a_zz, double a_ani = 0.0, double phi = 0.0) {
    return {a_zz, a_ani, phi, -0.5 * a_zz};
  }

  void validate() const {
    for (double v : {a_zz, a_ani, phi, a_perp})
      if (!std::isfinite(v)) throw InvalidConfig("hyperfine tensor entries must be finite");
    if (a_ani < 0.0) throw InvalidConfig("a_ani must be non-negative");
  }
};

struct RegisterConfig {
  PhysicalConstants constants{};
  HyperfineTensor c13{};
  double a_n14 = 2.16;          // MHz
  double a_n14_es_perp = 40.0;  // MHz
  double b_field = 0.0;         // G

  void validate() const {
    constants.validate();
    c13.validate();
    if (!std::isfinite(a_n14) || a_n14 <= 0.0) throw InvalidConfig("a_n14 must be positive");
    if (!std::isfinite(a_n14_es_perp)) throw InvalidConfig("a_n14_es_perp must be finite");
    if (!std::isfinite(b_field) || b_field < 0.0) throw InvalidConfig("b_field must be non-negative");
  }
};

enum class Manifold { ground, excited };

inline constexpr std::size_t spin_dimension = 6;
using SpinHamiltonian = HermitianMatrix<spin_dimension>;

// Product basis |m_s> (x) |m_I>, m_s in {+1, 0, -1}, m_I in {up, down}.
inline constexpr std::size_t basis_index(int m_s, bool up) {
  return static_cast<std::size_t>(2 * (1 - m_s) + (up ? 0 : 1));
}

inline double zero_field_splitting(const PhysicalConstants& c, Manifold m) {
  return m == Manifold::ground ? c.d_gs : c.d_es;
}

// H = D Sz^2 + ge B Sz + gn B Iz + Azz Sz Iz
//   + Aani/2 (S+ Iz e^{-i phi} + h.c.) + Aani/2 (Sz I+ e^{-i phi} + h.c.)
//   + Aperp/2 (S+ I- + S- I+)
inline SpinHamiltonian build_hamiltonian(const RegisterConfig& config, Manifold manifold, double b) {
  config.validate();
  if (!std::isfinite(b) || b < 0.0) throw InvalidConfig("field must be finite and non-negative");

  const auto& c = config.constants;
  const double d = zero_field_splitting(c, manifold);
  const double gn = c.gamma_n_c13 * 1e-3;
  const double a_zz = config.c13.a_zz * 1e-3;
  const double a_ani = config.c13.a_ani * 1e-3;
  const double a_perp = config.c13.a_perp * 1e-3;
  const complex e_minus = std::polar(1.0, -config.c13.phi);
  const double sqrt2 = std::numbers::sqrt2;

  SpinHamiltonian h;
  for (int ms : {1, 0, -1}) {
    for (bool up : {true, false}) {
      const double mi = up ? 0.5 : -0.5;
      h.add_hermitian(basis_index(ms, up), basis_index(ms, up),
                      d * ms * ms + c.gamma_e * b * ms + gn * b * mi + a_zz * ms * mi);
    }
  }
  // S+ |ms> = sqrt2 |ms+1> for ms in {-1, 0}; entry <ms+1, mi| S+ Iz |ms, mi>.
  for (int ms : {0, -1}) {
    for (bool up : {true, false}) {
      const double mi = up ? 0.5 : -0.5;
      h.add_hermitian(basis_index(ms + 1, up), basis_index(ms, up), 0.5 * a_ani * sqrt2 * mi * e_minus);
    }
  }
  // <ms, up| Sz I+ |ms, down> = ms.
  for (int ms : {1, -1})
    h.add_hermitian(basis_index(ms, true), basis_index(ms, false), 0.5 * a_ani * static_cast<double>(ms) * e_minus);
  // <ms+1, down| S+ I- |ms, up> = sqrt2.
  for (int ms : {0, -1}) h.add_hermitian(basis_index(ms + 1, false), basis_index(ms, true), 0.5 * a_perp * sqrt2);
  return h;
}

inline std::array<double, spin_dimension> energy_levels(const RegisterConfig& config, Manifold manifold, double b) {
  return jacobi_eigen(build_hamiltonian(config, manifold, b)).values;
}

enum class C13State { up, down };

struct EsrLine {
  double frequency = 0.0;  // MHz
  int n14_projection = 0;
  C13State c13_state = C13State::up;
  double weight = 0.0;
};

// Relative populations used to weight the six lines.
struct LinePopulations {
  std::array<double, 3> n14{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};  // m_N = +1, 0, -1
  double c13_up = 0.5;
};

// The six nuclear-spin conserving m_s = 0 -> -1 transitions from the secular
// Hamiltonian. The 13C up state (m_I = +1/2) sits A_zz below the down state
// while D > gamma_e B; 14N groups are spaced by a_n14.
inline std::vector<EsrLine> esr_lines(const RegisterConfig& config, double b, const LinePopulations& pops = {}) {
  config.validate();
  if (!std::isfinite(b) || b < 0.0) throw InvalidConfig("field must be finite and non-negative");
  const double center = config.constants.d_gs - config.constants.gamma_e * b;
  const double a_zz = config.c13.a_zz * 1e-3;
  std::vector<EsrLine> lines;
  lines.reserve(6);
  for (int k = 0; k < 3; ++k) {
    const int mn = 1 - k;
    for (C13State s : {C13State::up, C13State::down}) {
      const double mi = s == C13State::up ? 0.5 : -0.5;
      const double weight = pops.n14[static_cast<std::size_t>(k)] * (s == C13State::up ? pops.c13_up : 1.0 - pops.c13_up);
      lines.push_back({std::abs(center - mn * config.a_n14 - a_zz * mi), mn, s, weight});
    }
  }
  return lines;
}

// 1 - contrast * sum_k w_k exp(-(f - f_k)^2 / 2 sigma^2), sigma from the FWHM linewidth.
inline std::vector<double> esr_spectrum(std::span<const EsrLine> lines, double linewidth_khz, double contrast,
                                        std::span<const double> freq_grid) {
  if (freq_grid.empty()) throw InvalidArgument("esr_spectrum: empty frequency grid");
  if (!(linewidth_khz > 0.0)) throw InvalidArgument("esr_spectrum: linewidth must be positive");
  const double sigma = linewidth_khz * 1e-3 / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  std::vector<double> out;
  out.reserve(freq_grid.size());
  for (double f : freq_grid) {
    double dip = 0.0;
    for (const auto& line : lines) {
      const double x = (f - line.frequency) / sigma;
      dip += line.weight * std::exp(-0.5 * x * x);
    }
    out.push_back(1.0 - contrast * dip);
  }
  return out;
}

inline constexpr double default_esr_contrast = 0.30;
inline constexpr double alignment_tolerance_mhz = 0.1;

// nu_plus + nu_minus - 2D; zero for a field along the NV axis.
inline double alignment_residual(double nu_plus, double nu_minus, double d_gs) { return nu_plus + nu_minus - 2.0 * d_gs; }

inline bool is_aligned(double residual_mhz, double tolerance_mhz = alignment_tolerance_mhz) {
  return std::abs(residual_mhz) <= tolerance_mhz + 1e-12;
}

struct FidComponents {
  std::vector<double> detunings;  // MHz
  std::vector<double> weights;
  double t2_star = 2.9;  // us

  void validate() const {
    if (detunings.size() != weights.size() || detunings.empty())
      throw InvalidArgument("FID components: detunings and weights must be non-empty and of equal length");
    double sum = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (!std::isfinite(detunings[k])) throw InvalidArgument("FID components: non-finite detuning");
      if (weights[k] < 0.0) throw InvalidArgument("FID components: negative weight");
      sum += weights[k];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("FID components: weights must sum to 1");
    if (!(t2_star > 0.0)) throw InvalidArgument("FID components: T2* must be positive");
  }
};

// sum_k w_k cos(2 pi delta_k tau) exp(-(tau / T2*)^2)
inline std::vector<double> fid_signal(const FidComponents& components, std::span<const double> tau_grid) {
  components.validate();
  std::vector<double> out;
  out.reserve(tau_grid.size());
  for (double tau : tau_grid) {
    const double envelope = std::exp(-(tau / components.t2_star) * (tau / components.t2_star));
    double s = 0.0;
    for (std::size_t k = 0; k < components.weights.size(); ++k)
      s += components.weights[k] * std::cos(2.0 * std::numbers::pi * components.detunings[k] * tau);
    out.push_back(s * envelope);
  }
  return out;
}

// Real part of the one-sided Fourier transform of uniformly sampled data,
// trapezoid weighted, at frequencies k / (N dt), k = 0..N/2. Returns
// (frequencies MHz, spectrum).
inline std::pair<std::vector<double>, std::vector<double>> cosine_spectrum(std::span<const double> samples,
                                                                           std::span<const double> tau_grid) {
  const std::size_t n = samples.size();
  if (n < 4 || tau_grid.size() != n) throw InvalidArgument("cosine_spectrum: need >= 4 matching samples");
  const double dt = (tau_grid.back() - tau_grid.front()) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw InvalidArgument("cosine_spectrum: grid must be ascending");
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs(tau_grid[i] - tau_grid[i - 1] - dt) > 1e-6 * dt) throw InvalidArgument("cosine_spectrum: grid must be uniform");

  const double tau0 = tau_grid.front();
  std::vector<double> cos_table(n), sin_table(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    cos_table[i] = std::cos(angle);
    sin_table[i] = std::sin(angle);
  }
  const std::size_t n_freq = n / 2 + 1;
  std::vector<double> freqs(n_freq), spectrum(n_freq);
  for (std::size_t k = 0; k < n_freq; ++k) {
    const double f = static_cast<double>(k) / (static_cast<double>(n) * dt);
    const double a0 = 2.0 * std::numbers::pi * f * tau0;
    const double ca = std::cos(a0), sa = std::sin(a0);
    double acc = 0.0;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      acc += w * samples[i] * (ca * cos_table[idx] - sa * sin_table[idx]);
      idx += k;
      if (idx >= n) idx -= n;
    }
    freqs[k] = f;
    spectrum[k] = acc * dt;
  }
  return {std::move(freqs), std::move(spectrum)};
}

struct PolarizationOptions {
  double split_mhz = 0.258;        // expected 13C doublet splitting (A_zz)
  bool up_is_lower_frequency = true;
  int half_window = 3;              // fit window: +/- bins around each peak
};

struct PolarizationEstimate {
  double polarization = 0.0;
  double uncertainty = 0.0;
  double f_up = 0.0, f_down = 0.0;        // MHz
  double area_up = 0.0, area_down = 0.0;  // arbitrary units
  double width = 0.0;                     // Gaussian sigma, MHz
};

// Locates the dominant peak of the cosine spectrum, places its partner one
// splitting away (on the side with more spectral weight) and fits two Gaussians
// of common width over +/- half_window bins around each peak. P = (A_up -
// A_down) / (A_up + A_down); the uncertainty is propagated from the fit
// covariance.
inline PolarizationEstimate estimate_polarization(std::span<const double> samples, std::span<const double> tau_grid,
                                                  const PolarizationOptions& opt = {}) {
  const auto [freqs, spec] = cosine_spectrum(samples, tau_grid);
  const double df = freqs[1] - freqs[0];
  if (opt.split_mhz < 2.0 * df)
    throw ResolutionError("estimate_polarization: doublet splitting below twice the spectral resolution");

  const auto hw = static_cast<std::size_t>(opt.half_window);
  std::size_t peak = hw + 1;
  for (std::size_t k = hw + 1; k + hw + 1 < spec.size(); ++k)
    if (spec[k] > spec[peak]) peak = k;
  if (spec[peak] <= 0.0) throw ResolutionError("estimate_polarization: no spectral peak");

  const auto split_bins = static_cast<std::ptrdiff_t>(std::lround(opt.split_mhz / df));
  const auto at = [&](std::ptrdiff_t k) {
    return (k >= 0 && k < static_cast<std::ptrdiff_t>(spec.size())) ? spec[static_cast<std::size_t>(k)] : -1e300;
  };
  const auto p = static_cast<std::ptrdiff_t>(peak);
  const double side = at(p + split_bins) >= at(p - split_bins) ? 1.0 : -1.0;
  const auto partner = p + static_cast<std::ptrdiff_t>(side) * split_bins;
  if (partner - static_cast<std::ptrdiff_t>(hw) < 0 || partner + static_cast<std::ptrdiff_t>(hw) >= static_cast<std::ptrdiff_t>(spec.size()))
    throw ResolutionError("estimate_polarization: partner peak outside the spectrum");

  std::vector<std::size_t> window;
  const auto lo = static_cast<std::size_t>(std::min(p, partner)) - hw;
  const auto hi = static_cast<std::size_t>(std::max(p, partner)) + hw;
  for (std::size_t k = lo; k <= hi; ++k) window.push_back(k);

  // Initial width from the dominant peak curvature (log-parabola through 3 points).
  double sigma0 = 2.0 * df;
  {
    const double l0 = std::log(spec[peak - 1]), l1 = std::log(spec[peak]), l2 = std::log(spec[peak + 1]);
    const double curvature = l0 - 2.0 * l1 + l2;
    if (std::isfinite(curvature) && curvature < 0.0) sigma0 = df * std::sqrt(-1.0 / curvature);
  }
  const double c0 = freqs[peak];
  const double split = side * opt.split_mhz;

  // Parameters: amplitude main, amplitude partner, center main, sigma.
  const auto model = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    r.resize(static_cast<Eigen::Index>(window.size()));
    J.resize(r.size(), 4);
    for (std::size_t i = 0; i < window.size(); ++i) {
      const double f = freqs[window[i]];
      const double s = x(3);
      const double u1 = (f - x(2)) / s, u2 = (f - x(2) - split) / s;
      const double g1 = std::exp(-0.5 * u1 * u1), g2 = std::exp(-0.5 * u2 * u2);
      const auto row = static_cast<Eigen::Index>(i);
      r(row) = x(0) * g1 + x(1) * g2 - spec[window[i]];
      J(row, 0) = g1;
      J(row, 1) = g2;
      J(row, 2) = (x(0) * g1 * u1 + x(1) * g2 * u2) / s;
      J(row, 3) = (x(0) * g1 * u1 * u1 + x(1) * g2 * u2 * u2) / s;
    }
  };
  Eigen::VectorXd x0(4);
  x0 << spec[peak], std::max(at(partner), 0.0), c0, sigma0;
  const auto fit = levenberg_marquardt(model, x0);

  const double a_main = fit.x(0), a_partner = fit.x(1), center = fit.x(2);
  const bool main_is_lower = side > 0.0;
  const bool main_is_up = main_is_lower == opt.up_is_lower_frequency;

  PolarizationEstimate out;
  out.width = std::abs(fit.x(3));
  out.area_up = (main_is_up ? a_main : a_partner) * out.width * std::sqrt(2.0 * std::numbers::pi);
  out.area_down = (main_is_up ? a_partner : a_main) * out.width * std::sqrt(2.0 * std::numbers::pi);
  out.f_up = main_is_up ? center : center + split;
  out.f_down = main_is_up ? center + split : center;
  const double total = a_main + a_partner;
  const double a_up = main_is_up ? a_main : a_partner;
  const double a_down = main_is_up ? a_partner : a_main;
  out.polarization = (a_up - a_down) / total;

  // Delta method on P(a_up, a_down) with covariance s^2 (J^T J)^-1.
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  model(fit.x, r, J);
  const auto dof = std::max<Eigen::Index>(1, r.size() - 4);
  const double s2 = r.squaredNorm() / static_cast<double>(dof);
  const Eigen::MatrixXd cov = s2 * (J.transpose() * J).completeOrthogonalDecomposition().pseudoInverse();
  Eigen::Vector2d grad;
  const double dp_dup = 2.0 * a_down / (total * total), dp_ddown = -2.0 * a_up / (total * total);
  grad << (main_is_up ? dp_dup : dp_ddown), (main_is_up ? dp_ddown : dp_dup);
  out.uncertainty = std::sqrt(std::max(0.0, grad.dot(cov.topLeftCorner(2, 2) * grad)));
  return out;
}

}  // namespace nvjump
