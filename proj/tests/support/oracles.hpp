#pragma once

// Reference implementations used only by tests. They are deliberately
// written differently from the library code they check (primal Newton
// instead of dual scaling, exhaustive search instead of assignment, dense
// tridiagonal solves instead of the library's spline basis).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace fsbm::oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Minimizer of <C,P> + eps*KL(P | mu nu^T) over couplings, by damped Newton
/// on the concave dual in (f, g) with g_last = 0 fixed; P_ij = mu_i nu_j
/// exp((f_i + g_j - C_ij) / eps).
inline Mat entropic_plan_newton(const Mat& cost, const Vec& mu, const Vec& nu, double eps) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  const Index k = n + m - 1;
  const auto plan = [&](const Vec& x) {
    Mat p(n, m);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) {
        const double g = j + 1 < m ? x(n + j) : 0.0;
        p(i, j) = mu(i) * nu(j) * std::exp((x(i) + g - cost(i, j)) / eps);
      }
    return p;
  };
  const auto dual = [&](const Vec& x) {
    return x.head(n).dot(mu) + x.tail(m - 1).dot(nu.head(m - 1)) - eps * plan(x).sum();
  };

  Vec x = Vec::Zero(k);
  for (Index i = 0; i < n; ++i) x(i) = cost.row(i).minCoeff();
  for (int iter = 0; iter < 500; ++iter) {
    const Mat p = plan(x);
    Vec grad(k);
    grad.head(n) = mu - p.rowwise().sum();
    grad.tail(m - 1) = nu.head(m - 1) - p.colwise().sum().transpose().head(m - 1);
    if (grad.cwiseAbs().maxCoeff() < 1e-15) break;
    Mat h = Mat::Zero(k, k);
    for (Index i = 0; i < n; ++i) h(i, i) = p.row(i).sum() / eps;
    for (Index j = 0; j + 1 < m; ++j) {
      h(n + j, n + j) = p.col(j).sum() / eps;
      for (Index i = 0; i < n; ++i) h(i, n + j) = h(n + j, i) = p(i, j) / eps;
    }
    // Rows or columns with vanishing mass leave h nearly singular.
    h.diagonal().array() += 1e-12;
    const Vec step = h.ldlt().solve(grad);
    double t = 1.0;
    const double d0 = dual(x);
    while (t > 1e-12 && !(dual(x + t * step) >= d0)) t *= 0.5;
    if (t <= 1e-12) break;
    x += t * step;
  }
  return plan(x);
}

/// sqrt(min over all permutations of the mean squared distance).
inline double permutation_w2(const Mat& a, const Mat& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Index i = 0; i < a.rows(); ++i)
      s += (a.row(i) - b.row(perm[static_cast<std::size_t>(i)])).squaredNorm();
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.rows()));
}

/// Central difference of a scalar function along every coordinate.
inline Vec central_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                            double h = 1e-5) {
  Vec g(x.size());
  for (Index k = 0; k < x.size(); ++k) {
    Vec xp = x;
    Vec xm = x;
    xp(k) += h;
    xm(k) -= h;
    g(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// KL(N(m0, s0^2 I_d) || N(m1, s1^2 I_d)).
inline double gaussian_kl(const Vec& m0, double s0, const Vec& m1, double s1) {
  const double d = static_cast<double>(m0.size());
  return d * std::log(s1 / s0) + 0.5 * (d * s0 * s0 + (m1 - m0).squaredNorm()) / (s1 * s1) -
         0.5 * d;
}

/// One-sample Kolmogorov-Smirnov p-value against a continuous CDF, from the
/// asymptotic Kolmogorov distribution with the Stephens correction.
inline double ks_pvalue(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  if (lambda < 0.3) return 1.0;  // the series is numerically 1 there
  double q = 0.0;
  for (int k = 1; k <= 100; ++k)
    q += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

inline double normal_cdf(double x, double mean, double std) {
  return 0.5 * std::erfc(-(x - mean) / (std * std::sqrt(2.0)));
}

/// Natural cubic spline through (x_k, y_k) evaluated at t, with first
/// derivative; second derivatives from a dense solve of the standard
/// tridiagonal system.
struct NaturalSpline {
  Vec x, y, m;

  NaturalSpline(Vec xs, Vec ys) : x(std::move(xs)), y(std::move(ys)) {
    const Index n = x.size();
    Mat a = Mat::Zero(n, n);
    Vec r = Vec::Zero(n);
    a(0, 0) = 1.0;
    a(n - 1, n - 1) = 1.0;
    for (Index i = 1; i + 1 < n; ++i) {
      const double h0 = x(i) - x(i - 1);
      const double h1 = x(i + 1) - x(i);
      a(i, i - 1) = h0 / 6.0;
      a(i, i) = (h0 + h1) / 3.0;
      a(i, i + 1) = h1 / 6.0;
      r(i) = (y(i + 1) - y(i)) / h1 - (y(i) - y(i - 1)) / h0;
    }
    m = a.fullPivLu().solve(r);
  }

  void eval(double t, double& value, double& slope) const {
    Index i = 0;
    while (i + 2 < x.size() && t > x(i + 1)) ++i;
    const double h = x(i + 1) - x(i);
    const double a = (x(i + 1) - t) / h;
    const double b = (t - x(i)) / h;
    value = a * y(i) + b * y(i + 1) + ((a * a * a - a) * m(i) + (b * b * b - b) * m(i + 1)) * h * h / 6.0;
    slope = (y(i + 1) - y(i)) / h - (3.0 * a * a - 1.0) / 6.0 * h * m(i) +
            (3.0 * b * b - 1.0) / 6.0 * h * m(i + 1);
  }
};

}  // namespace fsbm::oracle
