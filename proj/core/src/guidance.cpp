#include "fsbm/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsbm::guidance {

void KeypointSet::validate() const {
  const Index n = source_points.rows();
  if (n < 1) throw std::invalid_argument("keypoint set is empty");
  if (target_points.rows() != n || target_points.cols() != source_points.cols())
    throw std::invalid_argument("keypoint source/target shapes differ");
  if (static_cast<Index>(trajectories.size()) != n)
    throw std::invalid_argument("one trajectory per keypoint required");
  const Index t_count = time_grid.size();
  if (t_count < 2) throw std::invalid_argument("time grid needs at least two points");
  if (time_grid(0) != 0.0 || time_grid(t_count - 1) != 1.0)
    throw std::invalid_argument("time grid must start at 0 and end at 1");
  for (Index k = 1; k < t_count; ++k)
    if (!(time_grid(k) > time_grid(k - 1))) throw std::invalid_argument("time grid not increasing");
  for (Index i = 0; i < n; ++i) {
    const Mat& tr = trajectories[static_cast<std::size_t>(i)];
    if (tr.rows() != t_count || tr.cols() != source_points.cols())
      throw std::invalid_argument("trajectory shape mismatch");
    if (tr.row(0) != source_points.row(i) || tr.row(t_count - 1) != target_points.row(i))
      throw std::invalid_argument("trajectory endpoints must equal the keypoint pair");
  }
}

KeypointSet KeypointSet::linear(const Mat& sources, const Mat& targets, Index steps) {
  KeypointSet ks;
  ks.source_points = sources;
  ks.target_points = targets;
  ks.time_grid = Vec::LinSpaced(steps, 0.0, 1.0);
  for (Index i = 0; i < sources.rows(); ++i) {
    Mat tr(steps, sources.cols());
    for (Index k = 0; k < steps; ++k) {
      const double t = ks.time_grid(k);
      tr.row(k) = (1.0 - t) * sources.row(i) + t * targets.row(i);
    }
    tr.row(0) = sources.row(i);
    tr.row(steps - 1) = targets.row(i);
    ks.trajectories.push_back(std::move(tr));
  }
  return ks;
}

GuidanceContext::GuidanceContext(KeypointSet keypoints, double alpha)
    : keypoints_(std::move(keypoints)), alpha_(alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be >= 0");
  keypoints_.validate();
}

Index assign_keypoint(const Vec& x0, const GuidanceContext& ctx) {
  const Mat& src = ctx.keypoints().source_points;
  if (x0.size() != src.cols()) throw std::invalid_argument("assign_keypoint: dimension mismatch");
  Index best = 0;
  double best_d2 = (src.row(0).transpose() - x0).squaredNorm();
  for (Index i = 1; i < src.rows(); ++i) {
    const double d2 = (src.row(i).transpose() - x0).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

Vec keypoint_position(const GuidanceContext& ctx, Index i, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("keypoint_position: t outside [0,1]");
  const KeypointSet& ks = ctx.keypoints();
  if (i < 0 || i >= ks.size()) throw std::out_of_range("keypoint index out of range");
  const Mat& tr = ks.trajectories[static_cast<std::size_t>(i)];
  const Vec& grid = ks.time_grid;
  const auto* begin = grid.data();
  const auto* end = grid.data() + grid.size();
  const Index hi = std::clamp<Index>(std::upper_bound(begin, end, t) - begin, 1, grid.size() - 1);
  const Index lo = hi - 1;
  const double w = (t - grid(lo)) / (grid(hi) - grid(lo));
  if (w <= 0.0) return tr.row(lo).transpose();
  if (w >= 1.0) return tr.row(hi).transpose();
  return ((1.0 - w) * tr.row(lo) + w * tr.row(hi)).transpose();
}

namespace {

double reference_distance(const Vec& x0, Index i, const GuidanceContext& ctx) {
  return (x0 - ctx.keypoints().source_points.row(i).transpose()).lpNorm<1>();
}

}  // namespace

GuidanceTerms guidance_terms(const Vec& x_t, const Vec& keypoint_t, double c, double alpha) {
  GuidanceTerms out;
  const Vec diff = x_t - keypoint_t;
  const double u = diff.lpNorm<1>();
  const double gap = u - c;
  out.value = alpha * gap * gap;
  out.grad.resize(diff.size());
  int nonzero = 0;
  for (Index k = 0; k < diff.size(); ++k) {
    const double s = diff(k) > 0.0 ? 1.0 : (diff(k) < 0.0 ? -1.0 : 0.0);
    if (s != 0.0) ++nonzero;
    out.grad(k) = 2.0 * alpha * gap * s;
  }
  out.laplacian = 2.0 * alpha * nonzero;
  return out;
}

double guidance_value(const Vec& x_t, double t, const Vec& x0, Index i, const GuidanceContext& ctx) {
  return guidance_terms(x_t, keypoint_position(ctx, i, t), reference_distance(x0, i, ctx),
                        ctx.alpha())
      .value;
}

Vec guidance_grad(const Vec& x_t, double t, const Vec& x0, Index i, const GuidanceContext& ctx) {
  return guidance_terms(x_t, keypoint_position(ctx, i, t), reference_distance(x0, i, ctx),
                        ctx.alpha())
      .grad;
}

double guidance_laplacian(const Vec& x_t, double t, const Vec& x0, Index i,
                          const GuidanceContext& ctx) {
  return guidance_terms(x_t, keypoint_position(ctx, i, t), reference_distance(x0, i, ctx),
                        ctx.alpha())
      .laplacian;
}

double g_coefficient(const Vec& a, const Vec& grad_g) {
  const double nrm2 = grad_g.squaredNorm();
  if (nrm2 < 1e-12) return 0.0;
  const double dot = a.dot(grad_g);
  if (std::abs(dot) <= nrm2) return dot / nrm2;
  return dot > 0.0 ? 1.0 : -1.0;
}

double hamiltonian(const Vec& a, const Vec& grad_g, double laplacian_g, double sigma) {
  const double g = g_coefficient(a, grad_g);
  return 0.5 * (a - g * grad_g).squaredNorm() - 0.5 * sigma * sigma * laplacian_g;
}

double lagrangian(const Vec& u, const Vec& grad_g, double laplacian_g, double sigma) {
  return 0.5 * u.squaredNorm() + std::abs(u.dot(grad_g)) + 0.5 * sigma * sigma * laplacian_g;
}

Vec feedback_control(const Vec& a, const Vec& grad_g) {
  return a - g_coefficient(a, grad_g) * grad_g;
}

double bregman_residual(const Vec& a_theta, const Vec& u_star, const Vec& grad_g) {
  return (a_theta - u_star - g_coefficient(a_theta, grad_g) * grad_g).squaredNorm();
}

}  // namespace fsbm::guidance
