#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>

#include "nvjump/error.hpp"

namespace nvjump {

using complex = std::complex<double>;

// Dense N x N complex matrix stored row-major. Hermiticity is maintained by the
// builders (`set_hermitian`), not enforced on raw element access.
template <std::size_t N>
class HermitianMatrix {
 public:
  static constexpr std::size_t dimension = N;

  HermitianMatrix() { entries_.fill(complex{0.0, 0.0}); }

  complex& operator()(std::size_t i, std::size_t j) { return entries_[i * N + j]; }
  const complex& operator()(std::size_t i, std::size_t j) const { return entries_[i * N + j]; }

  // Adds v at (i, j) and conj(v) at (j, i). Diagonal entries keep only the real part.
  void add_hermitian(std::size_t i, std::size_t j, complex v) {
    if (i == j) {
      (*this)(i, i) += complex{v.real(), 0.0};
      return;
    }
    (*this)(i, j) += v;
    (*this)(j, i) += std::conj(v);
  }

  bool is_hermitian() const {
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        if ((*this)(i, j) != std::conj((*this)(j, i))) return false;
    return true;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) s += std::norm(e);
    return std::sqrt(s);
  }

  const std::array<complex, N * N>& entries() const { return entries_; }

 private:
  std::array<complex, N * N> entries_;
};

template <std::size_t N>
struct EigenDecomposition {
  std::array<double, N> values{};                  // ascending
  std::array<std::array<complex, N>, N> vectors{};  // vectors[k] pairs with values[k]
  int sweeps = 0;
};

// Cyclic Jacobi diagonalization of a Hermitian matrix. Each (p, q) rotation
// first removes the phase of the pivot and then applies a real Givens rotation.
// Iterates until the off-diagonal Frobenius norm drops below
// rel_tol * ||H||_F; throws NumericError after max_sweeps.
template <std::size_t N>
EigenDecomposition<N> jacobi_eigen(const HermitianMatrix<N>& h, double rel_tol = 1e-12, int max_sweeps = 64) {
  std::array<std::array<complex, N>, N> a{};
  std::array<std::array<complex, N>, N> v{};
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) a[i][j] = h(i, j);
    v[i][i] = 1.0;
  }

  const double scale = h.frobenius_norm();
  const auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        if (i != j) s += std::norm(a[i][j]);
    return std::sqrt(s);
  };

  EigenDecomposition<N> out;
  int sweep = 0;
  for (; sweep <= max_sweeps; ++sweep) {
    if (scale == 0.0 || off_norm() <= rel_tol * scale) break;
    if (sweep == max_sweeps) throw NumericError("jacobi_eigen: no convergence", off_norm() / scale);
    for (std::size_t p = 0; p + 1 < N; ++p) {
      for (std::size_t q = p + 1; q < N; ++q) {
        const double mag = std::abs(a[p][q]);
        if (mag == 0.0) continue;
        const complex phase = std::conj(a[p][q]) / mag;  // e^{-i arg a_pq}
        const double app = a[p][p].real();
        const double aqq = a[q][q].real();
        const double theta = (aqq - app) / (2.0 * mag);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        // G restricted to (p, q): [[c, s], [-s * phase, c * phase]]
        const complex gpp = c, gpq = s, gqp = -s * phase, gqq = c * phase;

        for (std::size_t k = 0; k < N; ++k) {
          const complex akp = a[k][p], akq = a[k][q];
          a[k][p] = akp * gpp + akq * gqp;
          a[k][q] = akp * gpq + akq * gqq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const complex apk = a[p][k], aqk = a[q][k];
          a[p][k] = std::conj(gpp) * apk + std::conj(gqp) * aqk;
          a[q][k] = std::conj(gpq) * apk + std::conj(gqq) * aqk;
        }
        a[p][q] = a[q][p] = 0.0;
        a[p][p] = a[p][p].real();
        a[q][q] = a[q][q].real();

        for (std::size_t k = 0; k < N; ++k) {
          const complex vkp = v[k][p], vkq = v[k][q];
          v[k][p] = vkp * gpp + vkq * gqp;
          v[k][q] = vkp * gpq + vkq * gqq;
        }
      }
    }
  }
  out.sweeps = sweep;

  std::array<std::size_t, N> order{};
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x].real() < a[y][y].real(); });
  for (std::size_t k = 0; k < N; ++k) {
    out.values[k] = a[order[k]][order[k]].real();
    for (std::size_t i = 0; i < N; ++i) out.vectors[k][i] = v[i][order[k]];
  }
  return out;
}

}  // namespace nvjump
