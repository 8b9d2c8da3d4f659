#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace nvjump {

struct MinimizeResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;  // best objective after each iteration
};

struct NelderMeadOptions {
  double initial_step = 0.1;
  double f_tol = 1e-10;  // spread of simplex values
  double x_tol = 1e-8;   // simplex diameter
  int max_iter = 5000;
  int restarts = 2;  // re-seed the simplex at the optimum to escape collapse
};

// Derivative-free minimization (adaptive Nelder-Mead coefficients of Gao & Han).
inline MinimizeResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                                  const NelderMeadOptions& opt = {}) {
  const std::size_t n = x0.size();
  const double dn = static_cast<double>(n);
  const double alpha = 1.0, beta = 1.0 + 2.0 / dn, gamma = 0.75 - 1.0 / (2.0 * dn), delta = 1.0 - 1.0 / dn;

  MinimizeResult result;
  result.x = x0;
  result.value = f(x0);

  for (int round = 0; round <= opt.restarts; ++round) {
    std::vector<std::vector<double>> simplex(n + 1, result.x);
    std::vector<double> values(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = result.x[i] != 0.0 ? opt.initial_step * std::abs(result.x[i]) : opt.initial_step;
      simplex[i + 1][i] += h;
    }
    for (std::size_t i = 0; i <= n; ++i) values[i] = f(simplex[i]);

    std::vector<std::size_t> order(n + 1);
    bool converged = false;
    int iter = 0;
    for (; iter < opt.max_iter; ++iter) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
      const auto& best = simplex[order.front()];
      double diameter = 0.0;
      for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          diameter = std::max(diameter, std::abs(simplex[order[i]][k] - best[k]));
      result.history.push_back(values[order.front()]);
      if (std::abs(values[order.back()] - values[order.front()]) <= opt.f_tol * (1.0 + std::abs(values[order.front()])) &&
          diameter <= opt.x_tol * (1.0 + std::sqrt(std::inner_product(best.begin(), best.end(), best.begin(), 0.0)))) {
        converged = true;
        break;
      }

      std::vector<double> centroid(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[order[i]][k] / dn;

      auto& worst = simplex[order.back()];
      const auto along = [&](double t) {
        std::vector<double> p(n);
        for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + t * (worst[k] - centroid[k]);
        return p;
      };
      const double f_best = values[order.front()];
      const double f_second_worst = values[order[n - 1]];
      const double f_worst = values[order.back()];

      auto xr = along(-alpha);
      const double fr = f(xr);
      if (fr < f_best) {
        auto xe = along(-alpha * beta);
        const double fe = f(xe);
        if (fe < fr) {
          worst = std::move(xe);
          values[order.back()] = fe;
        } else {
          worst = std::move(xr);
          values[order.back()] = fr;
        }
        continue;
      }
      if (fr < f_second_worst) {
        worst = std::move(xr);
        values[order.back()] = fr;
        continue;
      }
      const bool outside = fr < f_worst;
      auto xc = along(outside ? -alpha * gamma : gamma);
      const double fc = f(xc);
      if (fc < (outside ? fr : f_worst)) {
        worst = std::move(xc);
        values[order.back()] = fc;
        continue;
      }
      for (std::size_t i = 1; i <= n; ++i) {
        auto& p = simplex[order[i]];
        for (std::size_t k = 0; k < n; ++k) p[k] = best[k] + delta * (p[k] - best[k]);
        values[order[i]] = f(p);
      }
    }
    const auto best_index = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
    result.iterations += iter;
    const bool improved = values[best_index] < result.value - opt.f_tol * (1.0 + std::abs(result.value));
    if (values[best_index] <= result.value) {
      result.x = simplex[best_index];
      result.value = values[best_index];
    }
    result.converged = converged;
    if (converged && !improved && round > 0) break;
  }
  return result;
}

struct LevenbergMarquardtOptions {
  int max_iter = 500;
  double grad_tol = 1e-14;
  double step_tol = 1e-14;
  double cost_tol = 1e-16;
  double initial_damping = 1e-3;
};

// Residual function: fills r (size m) and J (m x n) at x.
using ResidualFunction = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J)>;

struct LeastSquaresResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residuals;
  double cost = 0.0;  // 0.5 * |r|^2
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;
};

// Levenberg-Marquardt with Marquardt's diagonal scaling of J^T J.
inline LeastSquaresResult levenberg_marquardt(const ResidualFunction& fn, Eigen::VectorXd x,
                                              const LevenbergMarquardtOptions& opt = {}) {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  fn(x, r, J);
  double cost = 0.5 * r.squaredNorm();
  double lambda = opt.initial_damping;

  LeastSquaresResult out;
  int iter = 0;
  for (; iter < opt.max_iter; ++iter) {
    out.history.push_back(cost);
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol * std::max(1.0, cost)) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    for (int inner = 0; inner < 60 && !accepted; ++inner) {
      Eigen::MatrixXd A = JtJ;
      for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, i) += lambda * std::max(JtJ(i, i), 1e-300);
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      const Eigen::VectorXd trial = x + step;
      Eigen::VectorXd r_trial;
      Eigen::MatrixXd J_trial;
      fn(trial, r_trial, J_trial);
      const double trial_cost = 0.5 * r_trial.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const double drop = cost - trial_cost;
        const bool small_step = step.norm() <= opt.step_tol * (x.norm() + opt.step_tol);
        x = trial;
        r = std::move(r_trial);
        J = std::move(J_trial);
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-15);
        accepted = true;
        if (small_step || drop <= opt.cost_tol * std::max(cost, 1e-300)) out.converged = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) {
      // Damping exhausted: no descent direction left at machine precision.
      out.converged = true;
      break;
    }
    if (out.converged) break;
  }
  out.x = x;
  out.residuals = r;
  out.cost = cost;
  out.iterations = iter;
  return out;
}

}  // namespace nvjump
