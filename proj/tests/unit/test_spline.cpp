#include <cmath>

#include <gtest/gtest.h>

#include "fsbm/spline.hpp"
#include "oracles.hpp"

using namespace fsbm;
using namespace fsbm::spline;

namespace {

Vec random_nodes(Index n, Rng& rng) {
  std::uniform_real_distribution<double> gap(0.05, 1.0);
  Vec x(n);
  x(0) = 0.0;
  for (Index i = 1; i < n; ++i) x(i) = x(i - 1) + gap(rng);
  return x / x(n - 1);
}

}  // namespace

TEST(NaturalCubicBasis, MatchesTridiagonalOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 2 + trial % 9;
    const Vec nodes = random_nodes(n, rng);
    const Vec y = normal_matrix(n, 1, rng);
    const NaturalCubicBasis basis(nodes);
    const oracle::NaturalSpline ref(nodes, y);
    Vec w(n), dw(n);
    for (double t = 0.0; t <= 1.0; t += 0.01) {
      basis.weights(t, w, dw);
      double v = 0.0, s = 0.0;
      ref.eval(t, v, s);
      EXPECT_NEAR(w.dot(y), v, 1e-11);
      EXPECT_NEAR(dw.dot(y), s, 1e-9);
    }
  }
}

TEST(NaturalCubicBasis, WeightsFormPartitionOfUnity) {
  Rng rng(2);
  const Vec nodes = random_nodes(7, rng);
  const NaturalCubicBasis basis(nodes);
  Vec w(7), dw(7);
  for (double t = 0.0; t <= 1.0; t += 0.037) {
    basis.weights(t, w, dw);
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_NEAR(dw.sum(), 0.0, 1e-10);
  }
}

TEST(NaturalCubicBasis, LinearDataStaysLinear) {
  Rng rng(3);
  const Vec nodes = random_nodes(6, rng);
  const Vec y = 2.0 * nodes.array() - 0.5;
  const NaturalCubicBasis basis(nodes);
  Vec w(6), dw(6);
  for (double t = 0.0; t <= 1.0; t += 0.01) {
    basis.weights(t, w, dw);
    EXPECT_NEAR(w.dot(y), 2.0 * t - 0.5, 1e-12);
    EXPECT_NEAR(dw.dot(y), 2.0, 1e-10);
  }
}

TEST(NaturalCubicBasis, NaturalEndConditions) {
  Rng rng(4);
  const NaturalCubicBasis basis(random_nodes(5, rng));
  const Mat& s = basis.second_derivative_operator();
  EXPECT_EQ(s.row(0).norm(), 0.0);
  EXPECT_EQ(s.row(4).norm(), 0.0);
}

TEST(NaturalCubicBasis, DirectEvaluationAgreesWithWeights) {
  Rng rng(5);
  const Vec nodes = random_nodes(6, rng);
  const NaturalCubicBasis basis(nodes);
  const Mat values = normal_matrix(6, 3, rng);
  const Mat second = basis.second_derivative_operator() * values;
  Vec w(6), dw(6);
  Eigen::RowVectorXd y(3), dy(3);
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    basis.weights(t, w, dw);
    basis.evaluate(values, second, t, y, dy);
    EXPECT_LE((y - w.transpose() * values).norm(), 1e-12);
    EXPECT_LE((dy - dw.transpose() * values).norm(), 1e-10);
  }
}

TEST(NaturalCubicBasis, RejectsBadNodes) {
  EXPECT_THROW(NaturalCubicBasis(Vec::Zero(1)), std::invalid_argument);
  Vec n(3);
  n << 0.0, 0.5, 0.5;
  EXPECT_THROW(NaturalCubicBasis{n}, std::invalid_argument);
}

TEST(GradedGaussLegendre, ExactForPolynomials) {
  const Quadrature q = graded_gauss_legendre(0.1, 0.9);
  for (int p = 0; p <= 9; ++p) {
    double s = 0.0;
    for (Index i = 0; i < q.nodes.size(); ++i) s += q.weights(i) * std::pow(q.nodes(i), p);
    const double exact = (std::pow(0.9, p + 1) - std::pow(0.1, p + 1)) / (p + 1);
    EXPECT_NEAR(s, exact, 1e-13) << "degree " << p;
  }
}

TEST(GradedGaussLegendre, EndpointSingularIntegrand) {
  const double a = 1e-3;
  const Quadrature q = graded_gauss_legendre(a, 1.0 - a);
  double s = 0.0;
  for (Index i = 0; i < q.nodes.size(); ++i) s += q.weights(i) * q.nodes(i) / (1.0 - q.nodes(i));
  // integral of t/(1-t) is -t - log(1-t)
  const double exact = (-(1.0 - a) - std::log(a)) - (-a - std::log(1.0 - a));
  EXPECT_NEAR(s, exact, 1e-9 * exact);
}
