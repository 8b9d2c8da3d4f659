#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "nvjump/hermitian.hpp"

using nvjump::complex;
using nvjump::HermitianMatrix;

namespace {

template <std::size_t N>
HermitianMatrix<N> random_hermitian(std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  HermitianMatrix<N> h;
  for (std::size_t i = 0; i < N; ++i) {
    h.add_hermitian(i, i, complex(n(gen), 0.0));
    for (std::size_t j = i + 1; j < N; ++j) h.add_hermitian(i, j, complex(n(gen), n(gen)));
  }
  return h;
}

template <std::size_t N>
Eigen::Matrix<complex, N, N> to_eigen(const HermitianMatrix<N>& h) {
  Eigen::Matrix<complex, N, N> m;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h(i, j);
  return m;
}

}  // namespace

TEST(Hermitian, MatchesEigenOracleOnRandomMatrices) {
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 200; ++trial) {
    const auto h = random_hermitian<6>(gen, trial % 2 ? 1.0 : 1e3);
    ASSERT_TRUE(h.is_hermitian());
    const auto dec = nvjump::jacobi_eigen(h);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<complex, 6, 6>> oracle(to_eigen(h));
    const double tol = 1e-10 * h.frobenius_norm();
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(dec.values[k], oracle.eigenvalues()(static_cast<Eigen::Index>(k)), tol);
  }
}

TEST(Hermitian, EigenvectorsAreOrthonormalAndSatisfyEquation) {
  std::mt19937_64 gen(7);
  const auto h = random_hermitian<6>(gen);
  const auto dec = nvjump::jacobi_eigen(h);
  for (std::size_t k = 0; k < 6; ++k) {
    for (std::size_t i = 0; i < 6; ++i) {
      complex hv = 0.0;
      for (std::size_t j = 0; j < 6; ++j) hv += h(i, j) * dec.vectors[k][j];
      EXPECT_LT(std::abs(hv - dec.values[k] * dec.vectors[k][i]), 1e-10);
    }
    for (std::size_t l = 0; l < 6; ++l) {
      complex dot = 0.0;
      for (std::size_t i = 0; i < 6; ++i) dot += std::conj(dec.vectors[k][i]) * dec.vectors[l][i];
      EXPECT_LT(std::abs(dot - (k == l ? 1.0 : 0.0)), 1e-10);
    }
  }
}

TEST(Hermitian, EigenvaluesAscending) {
  std::mt19937_64 gen(3);
  const auto dec = nvjump::jacobi_eigen(random_hermitian<5>(gen));
  for (std::size_t k = 1; k < 5; ++k) EXPECT_LE(dec.values[k - 1], dec.values[k]);
}

TEST(Hermitian, DiagonalNeedsNoSweep) {
  HermitianMatrix<4> h;
  const double d[4] = {3.0, -1.0, 2.0, 0.5};
  for (std::size_t i = 0; i < 4; ++i) h.add_hermitian(i, i, d[i]);
  const auto dec = nvjump::jacobi_eigen(h);
  EXPECT_EQ(dec.sweeps, 0);
  EXPECT_DOUBLE_EQ(dec.values[0], -1.0);
  EXPECT_DOUBLE_EQ(dec.values[3], 3.0);
}

TEST(Hermitian, TwoByTwoClosedForm) {
  HermitianMatrix<2> h;
  h.add_hermitian(0, 0, 1.0);
  h.add_hermitian(1, 1, -2.0);
  h.add_hermitian(0, 1, complex(0.3, -0.4));
  const auto dec = nvjump::jacobi_eigen(h);
  const double mean = -0.5, half = std::sqrt(1.5 * 1.5 + 0.25);
  EXPECT_NEAR(dec.values[0], mean - half, 1e-13);
  EXPECT_NEAR(dec.values[1], mean + half, 1e-13);
}

TEST(Hermitian, ZeroMatrix) {
  const auto dec = nvjump::jacobi_eigen(HermitianMatrix<3>{});
  for (double v : dec.values) EXPECT_EQ(v, 0.0);
}

TEST(Hermitian, SweepBudgetExhaustedThrows) {
  std::mt19937_64 gen(11);
  EXPECT_THROW(nvjump::jacobi_eigen(random_hermitian<6>(gen), 1e-12, 0), nvjump::NumericError);
}

TEST(Hermitian, AddHermitianKeepsSymmetry) {
  HermitianMatrix<3> h;
  h.add_hermitian(0, 2, complex(1.0, 2.0));
  EXPECT_EQ(h(2, 0), complex(1.0, -2.0));
  EXPECT_TRUE(h.is_hermitian());
}
