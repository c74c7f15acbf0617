#pragma once

// Benchmark scenes: S-tunnel and V-neck crowd navigation (2D, convex
// polygon obstacles) and high-dimensional opinion depolarization with the
// polarizing party-model drift.

#include <string>
#include <vector>

#include "fsbm/guidance.hpp"
#include "fsbm/paths.hpp"
#include "fsbm/types.hpp"

namespace fsbm::scenes {

enum class InitialCondition { Vanilla, PerturbedMean, PerturbedSTD, Uniform };

std::string to_string(InitialCondition ic);
InitialCondition parse_initial_condition(const std::string& name);
inline constexpr InitialCondition kAllInitialConditions[] = {
    InitialCondition::Vanilla, InitialCondition::PerturbedMean, InitialCondition::PerturbedSTD,
    InitialCondition::Uniform};

enum class SceneKind { STunnel, VNeck, Opinion };

/// Crowd-navigation initial-condition constants.
inline constexpr double kCrowdSourceMean[2] = {-11.0, -1.0};
inline constexpr double kCrowdSourceStd = 0.5;
inline constexpr double kPerturbedMean[2] = {-11.0, -4.0};
inline constexpr double kPerturbedStd = 3.0;
inline constexpr double kUniformHalfWidth = 1.5;
inline constexpr double kCrowdTargetMean[2] = {11.0, 1.0};
inline constexpr double kCrowdTargetStd = 0.5;
inline constexpr double kObstacleWeight = 1500.0;

/// Convex polygon, vertices counter-clockwise, one per row (k x 2).
struct Polygon {
  Mat vertices;

  /// Depth of x inside the polygon grown outward by `margin` with rounded
  /// corners (0 outside).
  /// When grad is non-null it receives d depth / dx.
  double depth(const Vec& x, double margin = 0.0, Vec* grad = nullptr) const;
  bool contains(const Vec& x) const { return depth(x) > 0.0; }
};

Polygon rectangle(double x_min, double x_max, double y_min, double y_max);

struct Scene {
  std::string name;
  SceneKind kind = SceneKind::VNeck;
  Index dim = 2;
  double sigma = 1.0;

  Vec source_mean;
  double source_std = 0.5;
  Vec perturbed_mean;
  double perturbed_std = 3.0;
  double uniform_half_width = 1.5;
  Vec target_mean;
  double target_std = 0.5;

  std::vector<Polygon> obstacles;
  double obstacle_weight = kObstacleWeight;

  /// Default keypoint count for generate-keypoints.
  Index default_keypoints = 20;
  /// Suggested fixed network scales for this scene's coordinates and drifts.
  double input_scale = 1.0;
  double output_scale = 1.0;

  bool has_base_drift() const { return kind == SceneKind::Opinion; }
  bool is_crowd() const { return kind != SceneKind::Opinion; }

  ParticleBatch sample_source(Index n, Rng& rng,
                              InitialCondition ic = InitialCondition::Vanilla) const;
  ParticleBatch sample_target(Index n, Rng& rng) const;

  /// weight * sum of squared penetration depths; throws for the opinion scene.
  double obstacle_cost(const Vec& x, Vec* grad = nullptr, double margin = 0.0) const;
};

Scene stunnel_scene();
Scene vneck_scene();
Scene opinion_scene(Index d = 10);
/// "stunnel", "vneck" or "opinion".
Scene make_scene(const std::string& name, Index opinion_dim = 10);

/// f(x) = mean_y a(x,y,xi) y/sqrt|y| with a = +1 when <x,xi> and <y,xi>
/// have the same sign and -1 otherwise; evaluated in O(n d).
ParticleBatch polarize_drift(const ParticleBatch& batch, const Vec& xi);

struct KeypointOptions {
  double epsilon = 0.01;
  Index steps = 64;
  Index knots = 16;
  int spline_steps = 300;
  double spline_lr = 0.05;
  /// Obstacles are grown by this much while optimizing trajectories.
  double safety_margin = 0.35;
  /// Multiplies the scene's obstacle weight while optimizing trajectories.
  double obstacle_scale = 100.0;
  /// Grid resolution of the initial route search.
  double route_resolution = 0.25;
};

/// Draw sources/targets, pair them by entropic OT (one target drawn from
/// each source's plan row), then give every pair a trajectory: obstacle-aware
/// spline optimization for crowd scenes, straight lines for the opinion scene.
guidance::KeypointSet generate_keypoints(const Scene& scene, Index n_kp, Rng& rng,
                                         const KeypointOptions& options = {});

/// Collision-free polyline from a to b on a grid (8-connected Dijkstra,
/// obstacles grown by `margin`), shortcut by line-of-sight. Includes a and b.
std::vector<Vec> grid_route(const Scene& scene, const Vec& a, const Vec& b, double resolution,
                            double margin);

}  // namespace fsbm::scenes
