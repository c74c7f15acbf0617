#include <cmath>
#include <limits>
#include <map>

#include <gtest/gtest.h>

#include "fsbm/transport.hpp"
#include "oracles.hpp"

using namespace fsbm;
using namespace fsbm::transport;

namespace {

Vec uniform(Index n) { return Vec::Constant(n, 1.0 / static_cast<double>(n)); }

Mat random_points(Index n, Index d, Rng& rng) { return normal_matrix(n, d, rng); }

}  // namespace

TEST(Sinkhorn, SingleCellPlanIsOne) {
  const TransportPlan p = sinkhorn_plan(CostMatrix(Mat::Constant(1, 1, 3.0)), uniform(1), uniform(1), {});
  EXPECT_TRUE(p.converged);
  EXPECT_NEAR(p.plan(0, 0), 1.0, 1e-12);
}

TEST(Sinkhorn, LargeEpsilonApproachesIndependentCoupling) {
  Mat c(2, 2);
  c << 0, 1, 1, 0;
  SinkhornOptions o;
  o.epsilon = 10.0;
  const TransportPlan p = sinkhorn_plan(CostMatrix(c), uniform(2), uniform(2), o);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) EXPECT_NEAR(p.plan(i, j), 0.25, 0.05 * 0.25);
  // Closed form: symmetric plan with diagonal a, a/(0.5-a) = exp(1/eps).
  const double k = std::exp(1.0 / 10.0);
  EXPECT_NEAR(p.plan(0, 0), 0.5 * k / (1.0 + k), 1e-9);
}

TEST(Sinkhorn, MatchesPrimalNewtonOn3x3) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_points(3, 2, rng);
    const Mat b = random_points(3, 2, rng);
    const CostMatrix cost = CostMatrix::squared_euclidean(a, b);
    Vec mu = Vec::Random(3).cwiseAbs().array() + 0.2;
    Vec nu = Vec::Random(3).cwiseAbs().array() + 0.2;
    mu /= mu.sum();
    nu /= nu.sum();
    SinkhornOptions o;
    o.epsilon = 0.1;
    const TransportPlan p = sinkhorn_plan(cost, mu, nu, o);
    const Mat ref = oracle::entropic_plan_newton(cost.values(), mu, nu, 0.1);
    EXPECT_LE((p.plan - ref).cwiseAbs().maxCoeff(), 1e-3) << "trial " << trial;
  }
}

TEST(Sinkhorn, MarginalsMatchAfterConvergence) {
  Rng rng(3);
  const Mat a = random_points(40, 3, rng);
  const Mat b = random_points(30, 3, rng);
  SinkhornOptions o;
  o.epsilon = 0.05;
  o.tol = 1e-9;
  const TransportPlan p = sinkhorn_plan(CostMatrix::squared_euclidean(a, b), uniform(40), uniform(30), o);
  ASSERT_TRUE(p.converged);
  EXPECT_LE((p.plan.rowwise().sum() - uniform(40)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((p.plan.colwise().sum().transpose() - uniform(30)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GE(p.plan.minCoeff(), 0.0);
}

TEST(Sinkhorn, DualObjectiveNonDecreasingAcrossSweeps) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_points(25, 2, rng);
    const Mat b = random_points(25, 2, rng);
    SinkhornOptions o;
    o.epsilon = 0.2;
    o.epsilon_scaling = false;
    std::vector<double> trace;
    const CostMatrix cost = CostMatrix::squared_euclidean(a, b);
    const TransportPlan p = sinkhorn_plan(cost, uniform(25), uniform(25), o, &trace);
    ASSERT_GE(trace.size(), 2u);
    for (std::size_t k = 1; k < trace.size(); ++k)
      EXPECT_GE(trace[k], trace[k - 1] - 1e-12 * std::abs(trace[k - 1])) << "sweep " << k;
    // Strong duality at convergence.
    const double primal = entropic_objective(cost.values(), p.plan, uniform(25), uniform(25), o.epsilon);
    EXPECT_NEAR(trace.back(), primal, 1e-7);
  }
}

TEST(Sinkhorn, SmallEpsilonApproachesAssignmentCost) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat a = Mat::Random(4, 2);
    const Mat b = Mat::Random(4, 2);
    const CostMatrix cost = CostMatrix::squared_euclidean(a, b);
    SinkhornOptions o;
    o.epsilon = 1e-3;
    o.max_iter = 100000;
    const TransportPlan p = sinkhorn_plan(cost, uniform(4), uniform(4), o);
    const double plan_cost = (p.plan.array() * cost.values().array()).sum();
    const double w2 = exact_w2(a, b);
    EXPECT_NEAR(plan_cost, w2 * w2, 0.02 * w2 * w2);
  }
}

TEST(Sinkhorn, RejectsNaNCost) {
  Mat c = Mat::Ones(2, 2);
  c(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(CostMatrix{c}, std::invalid_argument);
}

TEST(Sinkhorn, NonConvergenceReturnsFlaggedIterate) {
  Rng rng(2);
  const Mat a = random_points(20, 2, rng);
  const Mat b = random_points(20, 2, rng);
  SinkhornOptions o;
  o.epsilon = 1e-3;
  o.max_iter = 3;
  const TransportPlan p = sinkhorn_plan(CostMatrix::squared_euclidean(a, b), uniform(20), uniform(20), o);
  EXPECT_FALSE(p.converged);
  EXPECT_TRUE(p.plan.allFinite());
}

TEST(SamplePairs, SingleCellAlwaysOrigin) {
  Rng rng(1);
  for (const auto& [i, j] : sample_pairs_from_plan(Mat::Ones(1, 1), 100, rng)) {
    EXPECT_EQ(i, 0);
    EXPECT_EQ(j, 0);
  }
}

TEST(SamplePairs, DiagonalFrequencies) {
  Rng rng(4);
  Mat plan = Mat::Zero(2, 2);
  plan(0, 0) = plan(1, 1) = 0.5;
  std::map<std::pair<Index, Index>, int> counts;
  for (const auto& pr : sample_pairs_from_plan(plan, 10000, rng)) ++counts[pr];
  EXPECT_EQ(counts.size(), 2u);
  EXPECT_NEAR(counts[std::make_pair(Index{0}, Index{0})] / 10000.0, 0.5, 0.02);
  EXPECT_NEAR(counts[std::make_pair(Index{1}, Index{1})] / 10000.0, 0.5, 0.02);
}

TEST(SamplePairs, OffDiagonalFrequencies) {
  Rng rng(5);
  Mat plan(2, 2);
  plan << 0.9, 0.1, 0.1, 0.9;
  std::map<std::pair<Index, Index>, int> counts;
  for (const auto& pr : sample_pairs_from_plan(plan, 10000, rng)) ++counts[pr];
  // Entries are normalized by the total mass 2.
  EXPECT_NEAR(counts[std::make_pair(Index{0}, Index{1})] / 10000.0, 0.05, 0.02);
  EXPECT_NEAR(counts[std::make_pair(Index{1}, Index{0})] / 10000.0, 0.05, 0.02);
  EXPECT_NEAR((counts[std::make_pair(Index{0}, Index{1})] + counts[std::make_pair(Index{1}, Index{0})]) / 10000.0, 0.1, 0.02);
}

TEST(SamplePairs, ZeroPlanThrows) {
  Rng rng(1);
  EXPECT_THROW(sample_pairs_from_plan(Mat::Zero(2, 2), 1, rng), std::invalid_argument);
}

TEST(Assignment, MatchesPermutationSearch) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_points(6, 2, rng);
    const Mat b = random_points(6, 2, rng);
    EXPECT_NEAR(exact_w2(a, b), oracle::permutation_w2(a, b), 1e-9);
  }
}

TEST(Assignment, RectangularCostsRejected) {
  EXPECT_THROW(solve_assignment(Mat::Ones(2, 3)), std::invalid_argument);
}

TEST(ExactW2, IdentityAndSinglePair) {
  Rng rng(1);
  const Mat a = random_points(50, 3, rng);
  EXPECT_EQ(exact_w2(a, a), 0.0);
  Mat p(1, 2), q(1, 2);
  p << 0, 0;
  q << 3, 4;
  EXPECT_DOUBLE_EQ(exact_w2(p, q), 5.0);
}

TEST(ExactW2, UnequalCountsThrow) {
  EXPECT_THROW(exact_w2(Mat::Zero(3, 2), Mat::Zero(4, 2)), std::invalid_argument);
  EXPECT_THROW(exact_w2(Mat::Zero(kW2MaxSize + 1, 1), Mat::Zero(kW2MaxSize + 1, 1)),
               std::invalid_argument);
}

TEST(ExactW2, MetricProperties) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const Mat a = random_points(12, 2, rng);
    const Mat b = random_points(12, 2, rng).array() + 1.0;
    const Mat c = random_points(12, 2, rng) * 2.0;
    EXPECT_NEAR(exact_w2(a, b), exact_w2(b, a), 1e-12);
    EXPECT_LE(exact_w2(a, c), exact_w2(a, b) + exact_w2(b, c) + 1e-9);
  }
}

TEST(ExactW2, LargeBatchesAreSubsampledDeterministically) {
  Rng rng(9);
  const Mat a = random_points(3000, 2, rng);
  const Mat b = random_points(3000, 2, rng);
  const double w = exact_w2(a, b);
  EXPECT_EQ(w, exact_w2(a, b));
  EXPECT_LT(w, 0.3);
}

TEST(EntropicW2, CloseToExactAtSmallEpsilon) {
  Rng rng(3);
  const Mat a = random_points(30, 2, rng);
  const Mat b = random_points(30, 2, rng).array() + 2.0;
  EXPECT_NEAR(entropic_w2(a, b, 1e-3), exact_w2(a, b), 0.02 * exact_w2(a, b));
}

TEST(KnnKl, SameDistributionNearZero) {
  Rng rng(21);
  const Mat p = random_points(5000, 2, rng);
  const Mat q = random_points(5000, 2, rng);
  EXPECT_NEAR(knn_kl(p, q), 0.0, 0.05);
}

TEST(KnnKl, ShiftedGaussian1D) {
  Rng rng(22);
  const Mat p = random_points(20000, 1, rng);
  const Mat q = random_points(20000, 1, rng).array() + 1.0;
  EXPECT_NEAR(knn_kl(p, q), 0.5, 0.1);
}

TEST(KnnKl, ScaledGaussian2D) {
  Rng rng(23);
  const Mat p = random_points(20000, 2, rng);
  const Mat q = random_points(20000, 2, rng) * 2.0;
  const double analytic = oracle::gaussian_kl(Vec::Zero(2), 1.0, Vec::Zero(2), 2.0);
  EXPECT_NEAR(analytic, 2.0 * (std::log(2.0) + 0.125 - 0.5), 1e-12);
  EXPECT_NEAR(knn_kl(p, q), analytic, 0.1);
}

TEST(KnnKl, DuplicatePointsStayFinite) {
  Mat p = Mat::Zero(10, 2);
  Mat q = Mat::Ones(10, 2);
  EXPECT_TRUE(std::isfinite(knn_kl(p, q, 3)));
}

TEST(KnnKl, TooFewSamplesThrow) {
  EXPECT_THROW(knn_kl(Mat::Zero(5, 2), Mat::Zero(10, 2), 5), std::invalid_argument);
}
