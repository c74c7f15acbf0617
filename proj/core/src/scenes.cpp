#include "fsbm/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include "fsbm/transport.hpp"

namespace fsbm::scenes {

std::string to_string(InitialCondition ic) {
  switch (ic) {
    case InitialCondition::Vanilla: return "vanilla";
    case InitialCondition::PerturbedMean: return "perturbed_mean";
    case InitialCondition::PerturbedSTD: return "perturbed_std";
    case InitialCondition::Uniform: return "uniform";
  }
  return "vanilla";
}

InitialCondition parse_initial_condition(const std::string& name) {
  for (InitialCondition ic : kAllInitialConditions)
    if (to_string(ic) == name) return ic;
  throw std::invalid_argument("unknown initial condition '" + name +
                              "' (vanilla, perturbed_mean, perturbed_std, uniform)");
}

double Polygon::depth(const Vec& x, double margin, Vec* grad) const {
  const Index k = vertices.rows();
  const Eigen::Vector2d p = x.head<2>();
  // Inside: the largest outward edge offset. Outside: Euclidean distance to
  // the boundary, so grown obstacles have rounded corners.
  double max_offset = -std::numeric_limits<double>::infinity();
  Eigen::Vector2d max_normal = Eigen::Vector2d::Zero();
  double best_dist = std::numeric_limits<double>::infinity();
  Eigen::Vector2d closest = p;
  for (Index i = 0; i < k; ++i) {
    const Eigen::Vector2d a = vertices.row(i).transpose();
    const Eigen::Vector2d b = vertices.row((i + 1) % k).transpose();
    const Eigen::Vector2d e = b - a;
    const Eigen::Vector2d n = Eigen::Vector2d(e.y(), -e.x()).normalized();
    const double offset = (p - a).dot(n);
    if (offset > max_offset) {
      max_offset = offset;
      max_normal = n;
    }
    const double s = std::clamp((p - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const Eigen::Vector2d q = a + s * e;
    const double dist = (p - q).norm();
    if (dist < best_dist) {
      best_dist = dist;
      closest = q;
    }
  }
  const bool inside = max_offset <= 0.0;
  const double signed_distance = inside ? max_offset : best_dist;
  const double d = margin - signed_distance;
  if (d <= 0.0) {
    if (grad != nullptr) grad->setZero(x.size());
    return 0.0;
  }
  if (grad != nullptr) {
    grad->setZero(x.size());
    if (inside || best_dist == 0.0)
      grad->head<2>() = -max_normal;
    else
      grad->head<2>() = -(p - closest) / best_dist;
  }
  return d;
}

Polygon rectangle(double x_min, double x_max, double y_min, double y_max) {
  Polygon p;
  p.vertices.resize(4, 2);
  p.vertices << x_min, y_min, x_max, y_min, x_max, y_max, x_min, y_max;
  return p;
}

namespace {

Polygon triangle(double ax, double ay, double bx, double by, double cx, double cy) {
  Polygon p;
  p.vertices.resize(3, 2);
  p.vertices << ax, ay, bx, by, cx, cy;
  // Force counter-clockwise order.
  const double cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
  if (cross < 0.0) p.vertices.row(1).swap(p.vertices.row(2));
  return p;
}

Scene crowd_base(const std::string& name, SceneKind kind) {
  Scene s;
  s.name = name;
  s.kind = kind;
  s.dim = 2;
  s.sigma = 1.0;
  s.source_mean = Vec(2);
  s.source_mean << kCrowdSourceMean[0], kCrowdSourceMean[1];
  s.source_std = kCrowdSourceStd;
  s.perturbed_mean = Vec(2);
  s.perturbed_mean << kPerturbedMean[0], kPerturbedMean[1];
  s.perturbed_std = kPerturbedStd;
  s.uniform_half_width = kUniformHalfWidth;
  s.target_mean = Vec(2);
  s.target_mean << kCrowdTargetMean[0], kCrowdTargetMean[1];
  s.target_std = kCrowdTargetStd;
  s.input_scale = 0.1;
  s.output_scale = 10.0;
  return s;
}

ParticleBatch gaussian(Index n, const Vec& mean, double std, Rng& rng) {
  ParticleBatch x = std * normal_matrix(n, mean.size(), rng);
  x.rowwise() += mean.transpose();
  return x;
}

}  // namespace

Scene stunnel_scene() {
  Scene s = crowd_base("stunnel", SceneKind::STunnel);
  s.obstacles = {rectangle(-6.5, -4.5, -30.0, 2.5), rectangle(-1.0, 1.0, -2.5, 30.0),
                 rectangle(4.5, 6.5, -30.0, 2.5)};
  s.default_keypoints = 100;
  return s;
}

Scene vneck_scene() {
  Scene s = crowd_base("vneck", SceneKind::VNeck);
  s.obstacles = {triangle(-6.0, -10.0, 6.0, -10.0, 0.0, -1.0),
                 triangle(-6.0, 10.0, 0.0, 1.0, 6.0, 10.0)};
  s.default_keypoints = 20;
  return s;
}

Scene opinion_scene(Index d) {
  if (d < 2) throw std::invalid_argument("opinion scene needs d >= 2");
  Scene s;
  s.name = "opinion";
  s.kind = SceneKind::Opinion;
  s.dim = d;
  s.sigma = 0.5;
  s.source_mean = Vec::Zero(d);
  s.source_std = 0.5;  // covariance 0.25 I
  s.perturbed_mean = s.source_mean;
  s.perturbed_std = s.source_std;
  s.uniform_half_width = 0.5;
  s.target_mean = Vec::Zero(d);
  s.target_std = 2.0;  // covariance 4 I
  s.default_keypoints = 0;
  s.input_scale = 0.5;
  s.output_scale = 2.0;
  return s;
}

Scene make_scene(const std::string& name, Index opinion_dim) {
  if (name == "stunnel") return stunnel_scene();
  if (name == "vneck") return vneck_scene();
  if (name == "opinion") return opinion_scene(opinion_dim);
  throw std::invalid_argument("unknown scene '" + name + "' (stunnel, vneck, opinion)");
}

ParticleBatch Scene::sample_source(Index n, Rng& rng, InitialCondition ic) const {
  switch (ic) {
    case InitialCondition::Vanilla: return gaussian(n, source_mean, source_std, rng);
    case InitialCondition::PerturbedMean: return gaussian(n, perturbed_mean, source_std, rng);
    case InitialCondition::PerturbedSTD: return gaussian(n, source_mean, perturbed_std, rng);
    case InitialCondition::Uniform: {
      std::uniform_real_distribution<double> u(-uniform_half_width, uniform_half_width);
      ParticleBatch x(n, dim);
      for (Index j = 0; j < dim; ++j)
        for (Index i = 0; i < n; ++i) x(i, j) = source_mean(j) + u(rng);
      return x;
    }
  }
  throw std::invalid_argument("unknown initial condition");
}

ParticleBatch Scene::sample_target(Index n, Rng& rng) const {
  return gaussian(n, target_mean, target_std, rng);
}

double Scene::obstacle_cost(const Vec& x, Vec* grad, double margin) const {
  if (!is_crowd()) throw std::logic_error("obstacle_cost is defined for crowd scenes only");
  if (x.size() != 2) throw std::invalid_argument("obstacle_cost expects a 2-vector");
  double cost = 0.0;
  if (grad != nullptr) grad->setZero(2);
  Vec g(2);
  for (const Polygon& p : obstacles) {
    const double dep = p.depth(x, margin, grad != nullptr ? &g : nullptr);
    if (dep <= 0.0) continue;
    cost += obstacle_weight * dep * dep;
    if (grad != nullptr) *grad += 2.0 * obstacle_weight * dep * g;
  }
  return cost;
}

ParticleBatch polarize_drift(const ParticleBatch& batch, const Vec& xi) {
  if (batch.rows() == 0) throw std::invalid_argument("polarize_drift on an empty batch");
  if (xi.size() != batch.cols()) throw std::invalid_argument("polarize_drift: xi dimension");
  const Index n = batch.rows();
  Vec side(n);
  Eigen::RowVectorXd signed_sum = Eigen::RowVectorXd::Zero(batch.cols());
  for (Index i = 0; i < n; ++i) {
    side(i) = batch.row(i).dot(xi) >= 0.0 ? 1.0 : -1.0;
    const double norm = batch.row(i).norm();
    if (norm > 0.0) signed_sum += side(i) * batch.row(i) / std::sqrt(norm);
  }
  signed_sum /= static_cast<double>(n);
  ParticleBatch out(n, batch.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = side(i) * signed_sum;
  return out;
}

std::vector<Vec> grid_route(const Scene& scene, const Vec& a, const Vec& b, double resolution,
                            double margin) {
  auto free_point = [&](const Vec& x) {
    for (const Polygon& p : scene.obstacles)
      if (p.depth(x, margin) > 0.0) return false;
    return true;
  };
  auto segment_free = [&](const Vec& p, const Vec& q) {
    const double len = (q - p).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / (0.25 * resolution))));
    for (int k = 0; k <= n; ++k)
      if (!free_point(p + (q - p) * (static_cast<double>(k) / n))) return false;
    return true;
  };
  if (segment_free(a, b)) return {a, b};

  for (double pad = 4.0; pad <= 64.0; pad *= 2.0) {
    const double x0 = std::min(a(0), b(0)) - pad;
    const double x1 = std::max(a(0), b(0)) + pad;
    const double y0 = std::min(a(1), b(1)) - 2.0 * pad;
    const double y1 = std::max(a(1), b(1)) + 2.0 * pad;
    const Index nx = static_cast<Index>(std::ceil((x1 - x0) / resolution)) + 1;
    const Index ny = static_cast<Index>(std::ceil((y1 - y0) / resolution)) + 1;
    auto point = [&](Index id) {
      Vec p(2);
      p << x0 + static_cast<double>(id % nx) * resolution, y0 + static_cast<double>(id / nx) * resolution;
      return p;
    };
    std::vector<char> open(static_cast<std::size_t>(nx * ny));
    for (Index id = 0; id < nx * ny; ++id) open[static_cast<std::size_t>(id)] = free_point(point(id));

    auto nearest_open = [&](const Vec& p) {
      Index best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index id = 0; id < nx * ny; ++id) {
        if (!open[static_cast<std::size_t>(id)]) continue;
        const double d = (point(id) - p).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = id;
        }
      }
      return best;
    };
    const Index start = nearest_open(a);
    const Index goal = nearest_open(b);
    if (start < 0 || goal < 0) continue;

    std::vector<double> dist(static_cast<std::size_t>(nx * ny), std::numeric_limits<double>::infinity());
    std::vector<Index> prev(static_cast<std::size_t>(nx * ny), -1);
    using Item = std::pair<double, Index>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[static_cast<std::size_t>(start)] = 0.0;
    heap.emplace(0.0, start);
    while (!heap.empty()) {
      const auto [d, id] = heap.top();
      heap.pop();
      if (d > dist[static_cast<std::size_t>(id)]) continue;
      if (id == goal) break;
      const Index ix = id % nx;
      const Index iy = id / nx;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const Index jx = ix + dx;
          const Index jy = iy + dy;
          if (jx < 0 || jy < 0 || jx >= nx || jy >= ny) continue;
          const Index jd = jy * nx + jx;
          if (!open[static_cast<std::size_t>(jd)]) continue;
          if (dx != 0 && dy != 0 &&
              (!open[static_cast<std::size_t>(iy * nx + jx)] || !open[static_cast<std::size_t>(jy * nx + ix)]))
            continue;
          const double nd = d + resolution * ((dx != 0 && dy != 0) ? std::sqrt(2.0) : 1.0);
          if (nd < dist[static_cast<std::size_t>(jd)]) {
            dist[static_cast<std::size_t>(jd)] = nd;
            prev[static_cast<std::size_t>(jd)] = id;
            heap.emplace(nd, jd);
          }
        }
      }
    }
    if (!std::isfinite(dist[static_cast<std::size_t>(goal)])) continue;

    std::vector<Vec> raw = {b};
    for (Index id = goal; id >= 0; id = prev[static_cast<std::size_t>(id)]) raw.push_back(point(id));
    raw.push_back(a);
    std::reverse(raw.begin(), raw.end());

    // Line-of-sight shortcuts.
    std::vector<Vec> route = {raw.front()};
    std::size_t cur = 0;
    while (cur + 1 < raw.size()) {
      std::size_t next = cur + 1;
      for (std::size_t j = raw.size() - 1; j > cur + 1; --j) {
        if (segment_free(raw[cur], raw[j])) {
          next = j;
          break;
        }
      }
      route.push_back(raw[next]);
      cur = next;
    }
    return route;
  }
  return {a, b};
}

namespace {

// Position at fraction s of the polyline's arc length.
Vec along_polyline(const std::vector<Vec>& poly, const Vec& cumulative, double s) {
  const double target = s * cumulative(cumulative.size() - 1);
  for (std::size_t k = 1; k < poly.size(); ++k) {
    const auto ki = static_cast<Index>(k);
    if (target <= cumulative(ki) || k + 1 == poly.size()) {
      const double seg = cumulative(ki) - cumulative(ki - 1);
      const double w = seg > 0.0 ? std::clamp((target - cumulative(ki - 1)) / seg, 0.0, 1.0) : 0.0;
      return (1.0 - w) * poly[k - 1] + w * poly[k];
    }
  }
  return poly.back();
}

Mat route_knots(const std::vector<Vec>& route, const Vec& knot_times) {
  Vec cumulative(static_cast<Index>(route.size()));
  cumulative(0) = 0.0;
  for (std::size_t k = 1; k < route.size(); ++k)
    cumulative(static_cast<Index>(k)) =
        cumulative(static_cast<Index>(k) - 1) + (route[k] - route[k - 1]).norm();
  Mat knots(knot_times.size(), route.front().size());
  for (Index i = 0; i < knot_times.size(); ++i)
    knots.row(i) = along_polyline(route, cumulative, knot_times(i)).transpose();
  return knots;
}

}  // namespace

guidance::KeypointSet generate_keypoints(const Scene& scene, Index n_kp, Rng& rng,
                                         const KeypointOptions& options) {
  if (n_kp < 1) throw std::invalid_argument("n_kp must be >= 1");
  if (options.steps < 2) throw std::invalid_argument("keypoint trajectories need >= 2 steps");
  const Mat sources = scene.sample_source(n_kp, rng);
  const Mat targets = scene.sample_target(n_kp, rng);

  const auto cost = transport::CostMatrix::squared_euclidean(sources, targets);
  const Vec mu = Vec::Constant(n_kp, 1.0 / static_cast<double>(n_kp));
  transport::SinkhornOptions sk;
  sk.epsilon = options.epsilon;
  sk.tol = 1e-7;
  sk.max_iter = 100000;
  const transport::TransportPlan plan = transport::sinkhorn_plan(cost, mu, mu, sk);

  Mat paired(n_kp, scene.dim);
  for (Index i = 0; i < n_kp; ++i) {
    const Mat row = plan.plan.row(i);
    const auto draw = transport::sample_pairs_from_plan(row, 1, rng);
    paired.row(i) = targets.row(draw.front().second);
  }

  if (!scene.is_crowd()) return guidance::KeypointSet::linear(sources, paired, options.steps);

  guidance::KeypointSet ks;
  ks.source_points = sources;
  ks.target_points = paired;
  ks.time_grid = Vec::LinSpaced(options.steps, 0.0, 1.0);
  ks.trajectories.resize(static_cast<std::size_t>(n_kp));
  const std::uint64_t base = rng();
  const Vec knot_times = paths::uniform_knot_times(options.knots);

  std::vector<std::string> errors(static_cast<std::size_t>(n_kp));
#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < n_kp; ++i) {
    try {
      Rng local(derive_seed(base, static_cast<std::uint64_t>(i)));
      const Vec x0 = sources.row(i).transpose();
      const Vec x1 = paired.row(i).transpose();
      const auto route =
          grid_route(scene, x0, x1, options.route_resolution, options.safety_margin + 0.25);
      paths::SplineProblem problem;
      problem.x0 = x0;
      problem.x1 = x1;
      problem.nu = scene.sigma;
      problem.sigma = scene.sigma;
      const double margin = options.safety_margin;
      const double scale = options.obstacle_scale;
      problem.state_cost = [&scene, margin, scale](const Vec& x, Vec* grad) {
        const double c = scene.obstacle_cost(x, grad, margin);
        if (grad != nullptr) *grad *= scale;
        return scale * c;
      };
      paths::SplineOptions so;
      so.knots = options.knots;
      so.steps = options.spline_steps;
      so.lr = options.spline_lr;
      so.initial_mean = route_knots(route, knot_times);
      const paths::SplineResult res = paths::optimize_spline(problem, so, local);

      Mat traj(options.steps, scene.dim);
      for (Index k = 0; k < options.steps; ++k)
        traj.row(k) = paths::spline_eval(res.path, ks.time_grid(k)).mean.transpose();
      traj.row(0) = x0.transpose();
      traj.row(options.steps - 1) = x1.transpose();
      ks.trajectories[static_cast<std::size_t>(i)] = std::move(traj);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("keypoint trajectory failed: " + e);
  ks.validate();
  return ks;
}

}  // namespace fsbm::scenes
