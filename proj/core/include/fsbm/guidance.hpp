#pragma once

// Keypoint bookkeeping and the guidance function G with its derivatives,
// plus the clipped projection coefficient and the Hamiltonian.

#include <vector>

#include "fsbm/types.hpp"

namespace fsbm::guidance {

/// N aligned pairs and their fixed trajectories on a shared time grid.
struct KeypointSet {
  Mat source_points;              // N x d
  Mat target_points;              // N x d
  std::vector<Mat> trajectories;  // N entries of T x d
  Vec time_grid;                  // T increasing values, 0 first, 1 last

  Index size() const { return source_points.rows(); }
  Index dim() const { return source_points.cols(); }
  Index steps() const { return time_grid.size(); }

  /// Throws std::invalid_argument when shapes or pinning are inconsistent.
  void validate() const;

  /// Straight-line trajectories between the given pairs on a uniform grid.
  static KeypointSet linear(const Mat& sources, const Mat& targets, Index steps = 64);
};

enum class AssignmentMetric { L2 };
enum class GuidanceMetric { L1 };

class GuidanceContext {
 public:
  GuidanceContext(KeypointSet keypoints, double alpha);

  const KeypointSet& keypoints() const { return keypoints_; }
  double alpha() const { return alpha_; }
  AssignmentMetric assignment_metric() const { return AssignmentMetric::L2; }
  GuidanceMetric guidance_metric() const { return GuidanceMetric::L1; }

 private:
  KeypointSet keypoints_;
  double alpha_;
};

/// Nearest keypoint source (L2); ties go to the lowest index.
Index assign_keypoint(const Vec& x0, const GuidanceContext& ctx);

/// Linear interpolation of keypoint i's trajectory at time t in [0,1].
Vec keypoint_position(const GuidanceContext& ctx, Index i, double t);

/// alpha * (|x_t - x_t^i|_1 - |x0 - x_0^i|_1)^2
double guidance_value(const Vec& x_t, double t, const Vec& x0, Index i, const GuidanceContext& ctx);

/// 2 alpha (u - c) sign(x_t - x_t^i), sign(0) = 0.
Vec guidance_grad(const Vec& x_t, double t, const Vec& x0, Index i, const GuidanceContext& ctx);

/// 2 alpha * (number of nonzero components of x_t - x_t^i).
double guidance_laplacian(const Vec& x_t, double t, const Vec& x0, Index i,
                          const GuidanceContext& ctx);

/// Value, gradient and Laplacian in one pass (shares the keypoint lookup).
struct GuidanceTerms {
  double value = 0.0;
  Vec grad;
  double laplacian = 0.0;
};
GuidanceTerms guidance_terms(const Vec& x_t, const Vec& keypoint_t, double c, double alpha);

/// Clipped projection: a.g/|g|^2 when that lies in [-1,1], else its sign;
/// 0 when |g|^2 < 1e-12.
double g_coefficient(const Vec& a, const Vec& grad_g);

/// 1/2 |a - g(a) grad_g|^2 - (sigma^2/2) laplacian_g
double hamiltonian(const Vec& a, const Vec& grad_g, double laplacian_g, double sigma);

/// Maximizer of <u,a> - L(u): the feedback-corrected control a - g(a) grad_g.
Vec feedback_control(const Vec& a, const Vec& grad_g);

/// Regression residual in the Bregman form, |a_theta - u_star - g(a_theta) grad_g|^2.
double bregman_residual(const Vec& a_theta, const Vec& u_star, const Vec& grad_g);

/// Lagrangian whose convex conjugate is the Hamiltonian above:
/// 1/2 |u|^2 + |u . grad_g| + (sigma^2/2) laplacian_g.
double lagrangian(const Vec& u, const Vec& grad_g, double laplacian_g, double sigma);

}  // namespace fsbm::guidance
