#pragma once

// Spline-parameterized Gaussian bridges N(I_t, sigma_t^2 I) pinned to a pair
// (x0, x1): sampling, closed-form drifts, the conditional objective and the
// simulation-free spline optimizer.

#include <functional>
#include <memory>
#include <vector>

#include "fsbm/guidance.hpp"
#include "fsbm/spline.hpp"
#include "fsbm/types.hpp"

namespace fsbm::paths {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kDefaultTMin = 1e-3;
inline constexpr Index kMaxKnots = 30;

/// Knot times k/(K+1), k = 1..K.
Vec uniform_knot_times(Index k);

/// sigma_t = nu sqrt(t(1-t)) rho(t), rho a natural cubic spline through
/// (0,1), (t_k, rho_k), (1,1). The std knots are sigma at the knot times.
class ConditionalPath {
 public:
  ConditionalPath(Vec x0, Vec x1, Vec knot_times, Mat mean_knots, Vec std_knots, double nu);

  /// Same endpoints and knot times, different control points. rho_knots are
  /// the ratios sigma_k / (nu sqrt(t_k(1-t_k))).
  ConditionalPath with_controls(const Mat& mean_knots, const Vec& rho_knots) const;

  const Vec& x0() const { return x0_; }
  const Vec& x1() const { return x1_; }
  const Vec& knot_times() const { return knot_times_; }
  const Mat& mean_knots() const { return mean_knots_; }
  const Vec& std_knots() const { return std_knots_; }
  const Vec& rho_knots() const { return rho_knots_; }
  double nu() const { return nu_; }
  Index dim() const { return x0_.size(); }
  Index knots() const { return knot_times_.size(); }
  const spline::NaturalCubicBasis& basis() const { return *basis_; }
  std::shared_ptr<const spline::NaturalCubicBasis> shared_basis() const { return basis_; }

  /// Node values [x0; knots; x1] and [1; rho; 1] with their spline second derivatives.
  const Mat& mean_values() const { return mean_values_; }
  const Mat& mean_second() const { return mean_second_; }
  const Mat& rho_values() const { return rho_values_; }
  const Mat& rho_second() const { return rho_second_; }

 private:
  void build_from_rho();

  Vec x0_, x1_;
  Vec knot_times_;
  Mat mean_knots_;
  Vec std_knots_;
  Vec rho_knots_;
  double nu_ = 1.0;
  std::shared_ptr<const spline::NaturalCubicBasis> basis_;
  Mat mean_values_, mean_second_;  // (K+2) x d
  Mat rho_values_, rho_second_;    // (K+2) x 1
};

struct SplineState {
  Vec mean;     // I_t
  Vec dmean;    // dI/dt
  double sigma = 0.0;
  double dsigma = 0.0;  // 0 while the floor is active; +-inf at t = 0, 1
};

SplineState spline_eval(const ConditionalPath& path, double t);

/// Knots on the segment with rho = 1, i.e. the exact Brownian bridge.
ConditionalPath brownian_bridge_path(const Vec& x0, const Vec& x1, double nu, Index k = 8);

struct PathSample {
  double t = 0.0;
  Vec x_t;
  Vec z;
};

PathSample sample_conditional(const ConditionalPath& path, double t, Rng& rng);

/// u = I' + (sigma'/sigma - nu^2/(2 sigma^2)) (x - I)
Vec conditional_drift(const ConditionalPath& path, const Vec& x_t, double t);

/// Drift of the time-reversed bridge in s = 1 - t: -u + nu^2 (I - x)/sigma^2.
Vec reverse_conditional_drift(const ConditionalPath& path, const Vec& x_t, double t);

struct ObjectiveEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Plain Monte Carlo estimate of the guided kinetic objective
/// 1/2|u|^2 + |u.grad G| + (sigma^2/2) lap G over uniform t in
/// [t_min, 1-t_min] and X_t ~ N(I_t, sigma_t^2 I). `guidance` may be null.
ObjectiveEstimate conditional_objective(const ConditionalPath& path,
                                        const guidance::GuidanceContext* guidance, Index keypoint,
                                        double sigma, int mc_times, int mc_samples, Rng& rng,
                                        double t_min = kDefaultTMin);

/// Optional running cost on the mean path; returns the value and, when
/// grad is non-null, writes its gradient.
using StateCost = std::function<double(const Vec& x, Vec* grad)>;

struct SplineProblem {
  Vec x0, x1;
  double nu = 1.0;
  double sigma = 1.0;  // diffusion in the Laplacian term
  const guidance::GuidanceContext* guidance = nullptr;
  Index keypoint = 0;
  StateCost state_cost;
  double t_min = kDefaultTMin;
};

/// The objective minimized by optimize_spline. The kinetic term is
/// integrated over z in closed form and over t by quadrature; the guidance
/// terms are Monte Carlo over stratified times with antithetic z pairs. A
/// fixed Draws object gives a common-random-numbers estimate.
class SplineObjective {
 public:
  SplineObjective(SplineProblem problem, const Vec& knot_times);

  struct Draws {
    Vec t;
    Mat keypoint_at_t;   // mc_times x d
    std::vector<Mat> z;  // per time, samples x d
  };
  Draws draw(int mc_times, int mc_samples, Rng& rng) const;

  double evaluate(const Mat& mean_knots, const Vec& rho_knots, const Draws& draws,
                  Mat* grad_mean = nullptr, Vec* grad_rho = nullptr) const;

  const SplineProblem& problem() const { return problem_; }
  bool guided() const;

 private:
  SplineProblem problem_;
  spline::NaturalCubicBasis basis_;
  Vec quad_t_, quad_w_;
  Mat phi_, dphi_;  // quadrature nodes x (K+2)
  double keypoint_reference_ = 0.0;
};

struct SplineOptions {
  double lr = 0.05;
  int steps = 200;
  int mc_times = 8;
  int mc_samples = 16;
  Index knots = 8;
  /// Mean knots to start from instead of the straight segment.
  Mat initial_mean;
  /// When false the optimizer runs even without guidance or state cost.
  bool skip_when_unguided = true;
  /// Draw counts for the final common-random-numbers comparison.
  int check_times = 32;
  int check_samples = 16;
};

struct SplineResult {
  ConditionalPath path;
  bool diverged = false;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int steps_taken = 0;
};

/// Adam on the mean and rho control points, cosine-decayed learning rate.
/// Returns whichever of the initialization and the final iterate has the
/// lower common-random-numbers objective; on divergence (objective above
/// 10x the initial value) returns the initialization with `diverged` set.
SplineResult optimize_spline(const SplineProblem& problem, const SplineOptions& options, Rng& rng);

}  // namespace fsbm::paths
