#include <cmath>

#include <gtest/gtest.h>

#include "fsbm/guidance.hpp"
#include "oracles.hpp"

using namespace fsbm;
using namespace fsbm::guidance;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

GuidanceContext line_context(const Mat& src, const Mat& dst, double alpha) {
  return GuidanceContext(KeypointSet::linear(src, dst), alpha);
}

// Keypoint i's trajectory is a straight line from `from` to `to`; guidance
// tests use a single keypoint.
GuidanceContext single(const Vec& from, const Vec& to, double alpha) {
  return line_context(from.transpose(), to.transpose(), alpha);
}

// Point whose components all differ from the keypoint by more than 1e-3.
Vec generic_point(const Vec& keypoint, Rng& rng) {
  std::uniform_real_distribution<double> off(0.05, 2.0);
  std::bernoulli_distribution flip(0.5);
  Vec x = keypoint;
  for (Index k = 0; k < x.size(); ++k) x(k) += (flip(rng) ? 1.0 : -1.0) * off(rng);
  return x;
}

}  // namespace

TEST(KeypointSet, LinearPinsEndpoints) {
  Rng rng(1);
  const Mat s = normal_matrix(4, 3, rng);
  const Mat t = normal_matrix(4, 3, rng);
  const KeypointSet ks = KeypointSet::linear(s, t, 64);
  ks.validate();
  for (Index i = 0; i < 4; ++i) {
    EXPECT_EQ(ks.trajectories[i].row(0), s.row(i));
    EXPECT_EQ(ks.trajectories[i].row(63), t.row(i));
  }
}

TEST(KeypointSet, ValidateRejectsUnpinnedTrajectory) {
  KeypointSet ks = KeypointSet::linear(Mat::Zero(1, 2), Mat::Ones(1, 2), 8);
  ks.trajectories[0](0, 0) = 0.5;
  EXPECT_THROW(ks.validate(), std::invalid_argument);
}

TEST(KeypointSet, ValidateRejectsEmptySet) {
  EXPECT_THROW(KeypointSet{}.validate(), std::invalid_argument);
}

TEST(GuidanceContext, NegativeAlphaRejected) {
  EXPECT_THROW(single(v1(0), v1(1), -1.0), std::invalid_argument);
}

TEST(AssignKeypoint, ExactMatch) {
  Rng rng(2);
  const Mat s = normal_matrix(6, 2, rng);
  const GuidanceContext ctx = line_context(s, s, 1.0);
  EXPECT_EQ(assign_keypoint(s.row(3).transpose(), ctx), 3);
}

TEST(AssignKeypoint, NearestOfTwo) {
  Mat s(2, 2);
  s << 0, 0, 10, 0;
  const GuidanceContext ctx = line_context(s, s, 1.0);
  EXPECT_EQ(assign_keypoint(v2(1, 1), ctx), 0);
}

TEST(AssignKeypoint, TiesGoToLowestIndex) {
  Mat s(3, 1);
  s << 1, -1, 1;
  const GuidanceContext ctx = line_context(s, s, 1.0);
  EXPECT_EQ(assign_keypoint(v1(0), ctx), 0);
}

TEST(AssignKeypoint, AgreesWithExhaustiveScan) {
  Rng rng(3);
  const Mat s = normal_matrix(50, 3, rng);
  const GuidanceContext ctx = line_context(s, s, 1.0);
  for (int q = 0; q < 100; ++q) {
    const Vec x = normal_matrix(3, 1, rng);
    Index best = 0;
    for (Index i = 1; i < 50; ++i)
      if ((s.row(i).transpose() - x).norm() < (s.row(best).transpose() - x).norm()) best = i;
    EXPECT_EQ(assign_keypoint(x, ctx), best);
  }
}

TEST(KeypointPosition, PinsAndInterpolation) {
  const GuidanceContext ctx = single(v2(0, 0), v2(2, 2), 1.0);
  EXPECT_EQ(keypoint_position(ctx, 0, 0.0), v2(0, 0));
  EXPECT_EQ(keypoint_position(ctx, 0, 1.0), v2(2, 2));
  EXPECT_LT((keypoint_position(ctx, 0, 0.5) - v2(1, 1)).norm(), 1e-12);
  EXPECT_THROW(keypoint_position(ctx, 0, 1.5), std::invalid_argument);
  EXPECT_THROW(keypoint_position(ctx, 0, -0.1), std::invalid_argument);
}

TEST(GuidanceValue, PreservedDistanceIsZero) {
  const GuidanceContext ctx = single(v2(0, 0), v2(4, 0), 2.0);
  // x0 is at L1 distance 1.5 from the keypoint source; x_t keeps that offset.
  const Vec x0 = v2(0.5, 1.0);
  EXPECT_DOUBLE_EQ(guidance_value(v2(2.0, -1.5), 0.5, x0, 0, ctx), 0.0);
}

TEST(GuidanceValue, HandEvaluation1D) {
  // x0 = 0, keypoint source 1 (c = 1); keypoint stays at 1, x_t = 3 (u = 2).
  const GuidanceContext ctx = single(v1(1), v1(1), 1.0);
  EXPECT_DOUBLE_EQ(guidance_value(v1(3), 0.3, v1(0), 0, ctx), 1.0);
  EXPECT_DOUBLE_EQ(guidance_grad(v1(3), 0.3, v1(0), 0, ctx)(0), 2.0);
}

TEST(GuidanceValue, ZeroAlphaZeroesEverything) {
  Rng rng(4);
  const GuidanceContext ctx = single(v2(0, 0), v2(3, 1), 0.0);
  for (int k = 0; k < 20; ++k) {
    const Vec x = normal_matrix(2, 1, rng);
    const Vec x0 = normal_matrix(2, 1, rng);
    EXPECT_EQ(guidance_value(x, 0.4, x0, 0, ctx), 0.0);
    EXPECT_EQ(guidance_grad(x, 0.4, x0, 0, ctx).norm(), 0.0);
    EXPECT_EQ(guidance_laplacian(x, 0.4, x0, 0, ctx), 0.0);
  }
}

TEST(GuidanceGrad, StationaryShellIsZero) {
  const GuidanceContext ctx = single(v2(0, 0), v2(0, 0), 1.0);
  EXPECT_EQ(guidance_grad(v2(1, 1), 0.5, v2(-2, 0), 0, ctx).norm(), 0.0);
}

TEST(GuidanceGrad, SignOfZeroComponentIsZero) {
  const GuidanceContext ctx = single(v2(0, 0), v2(0, 0), 1.0);
  const Vec g = guidance_grad(v2(0, 3), 0.5, v2(0, 1), 0, ctx);
  EXPECT_EQ(g(0), 0.0);
  EXPECT_EQ(g(1), 4.0);
}

TEST(GuidanceGrad, MatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec a = normal_matrix(3, 1, rng);
    const Vec b = normal_matrix(3, 1, rng);
    const GuidanceContext ctx = single(a, b, 0.7);
    const double t = 0.37;
    const Vec x0 = generic_point(a, rng);
    const Vec x = generic_point(keypoint_position(ctx, 0, t), rng);
    const auto f = [&](const Vec& y) { return guidance_value(y, t, x0, 0, ctx); };
    const Vec fd = oracle::central_gradient(f, x, 1e-6);
    const Vec an = guidance_grad(x, t, x0, 0, ctx);
    if (an.norm() < 1e-8) continue;
    EXPECT_LE((fd - an).norm() / an.norm(), 1e-5) << "trial " << trial;
  }
}

TEST(GuidanceLaplacian, GenericValueIs2AlphaD) {
  const GuidanceContext ctx = single(v2(0, 0), v2(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(guidance_laplacian(v2(0.3, -0.8), 0.5, v2(1, 1), 0, ctx), 4.0);
  const GuidanceContext off = single(v2(0, 0), v2(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(guidance_laplacian(v2(0.3, -0.8), 0.5, v2(1, 1), 0, off), 0.0);
}

TEST(GuidanceLaplacian, MatchesFiniteDifferences) {
  Rng rng(6);
  const double h = 1e-4;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec a = normal_matrix(2, 1, rng);
    const GuidanceContext ctx = single(a, a, 1.3);
    const Vec x0 = generic_point(a, rng);
    const Vec x = generic_point(a, rng);
    const auto f = [&](const Vec& y) { return guidance_value(y, 0.5, x0, 0, ctx); };
    double lap = 0.0;
    for (Index k = 0; k < 2; ++k) {
      Vec xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      lap += (f(xp) - 2.0 * f(x) + f(xm)) / (h * h);
    }
    const double an = guidance_laplacian(x, 0.5, x0, 0, ctx);
    EXPECT_LE(std::abs(lap - an) / an, 1e-3) << "trial " << trial;
  }
}

TEST(GuidanceProperties, NonNegativeAndScaleLinearInAlpha) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec a = normal_matrix(4, 1, rng);
    const Vec b = normal_matrix(4, 1, rng);
    const GuidanceContext c1 = single(a, b, 0.8);
    const GuidanceContext c3 = single(a, b, 0.8 * 3.0);
    const Vec x = normal_matrix(4, 1, rng);
    const Vec x0 = normal_matrix(4, 1, rng);
    const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double g1 = guidance_value(x, t, x0, 0, c1);
    EXPECT_GE(g1, 0.0);
    EXPECT_NEAR(guidance_value(x, t, x0, 0, c3), 3.0 * g1, 1e-12 * (1.0 + g1));
    EXPECT_LE((guidance_grad(x, t, x0, 0, c3) - 3.0 * guidance_grad(x, t, x0, 0, c1)).norm(),
              1e-12 * (1.0 + g1));
    EXPECT_NEAR(guidance_laplacian(x, t, x0, 0, c3), 3.0 * guidance_laplacian(x, t, x0, 0, c1),
                1e-12);
  }
}

TEST(GCoefficient, Cases) {
  EXPECT_EQ(g_coefficient(v2(0, 1), v2(1, 0)), 0.0);
  EXPECT_DOUBLE_EQ(g_coefficient(v2(0.3, 0.4), v2(0.3, 0.4)), 1.0);
  EXPECT_EQ(g_coefficient(v2(5, 0), v2(1, 0)), 1.0);
  EXPECT_EQ(g_coefficient(v2(-5, 0), v2(1, 0)), -1.0);
  EXPECT_EQ(g_coefficient(v2(5, 0), v2(1e-7, 0)), 0.0);
}

TEST(GCoefficient, AlwaysInUnitInterval) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec a = normal_matrix(3, 1, rng) * 3.0;
    const Vec g = normal_matrix(3, 1, rng);
    const double c = g_coefficient(a, g);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(Hamiltonian, HandEvaluations) {
  EXPECT_DOUBLE_EQ(hamiltonian(v2(1, 2), v2(0, 0), 0.0, 1.0), 2.5);
  EXPECT_DOUBLE_EQ(hamiltonian(v2(2, 0), v2(1, 0), 0.0, 1.0), 0.5);
}

TEST(Hamiltonian, SupremumOverControls) {
  Rng rng(9);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec a = normal_matrix(3, 1, rng) * 2.0;
    const Vec g = normal_matrix(3, 1, rng);
    const double lap = 2.0;
    const double sigma = 0.7;
    const double h = hamiltonian(a, g, lap, sigma);
    for (int k = 0; k < 1000; ++k) {
      Vec u(3);
      for (Index j = 0; j < 3; ++j) u(j) = unif(rng);
      EXPECT_LE(u.dot(a) - lagrangian(u, g, lap, sigma), h + 1e-9);
    }
    const Vec u_star = feedback_control(a, g);
    EXPECT_NEAR(u_star.dot(a) - lagrangian(u_star, g, lap, sigma), h, 1e-8);
  }
}

TEST(Bregman, ResidualEqualsRegressionResidual) {
  Rng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec a = normal_matrix(4, 1, rng) * 2.0;
    const Vec g = normal_matrix(4, 1, rng);
    const Vec u_star = normal_matrix(4, 1, rng);
    const Vec u_theta = feedback_control(a, g);
    EXPECT_NEAR(bregman_residual(a, u_star, g), (u_star - u_theta).squaredNorm(), 1e-12);
  }
}
