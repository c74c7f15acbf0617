#include "fsbm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fsbm/io.hpp"
#include "fsbm/transport.hpp"

namespace fsbm::matching {

std::string to_string(Direction d) { return d == Direction::Forward ? "forward" : "backward"; }

namespace {

void clamp_rows(Mat& u) {
  for (Index i = 0; i < u.rows(); ++i) {
    const double norm = u.row(i).norm();
    if (norm > kMaxDriftNorm) u.row(i) *= kMaxDriftNorm / norm;
  }
}

Direction flip(Direction d) { return d == Direction::Forward ? Direction::Backward : Direction::Forward; }

double nu_for(const scenes::Scene& scene, const TrainConfig& config) {
  return config.nu > 0.0 ? config.nu : scene.sigma;
}

// Fixed sub-stream tags for derive_seed.
enum Stream : std::uint64_t {
  kForwardInit = 1,
  kBackwardInit = 2,
  kMonitor = 3,
  kEpochCoupling = 4,
  kEpochPaths = 5,
  kEpochRegression = 6,
};

}  // namespace

Trajectory simulate_sde(const DriftField& drift, const Mat& x0, double sigma, int steps, Rng& rng,
                        bool keep_states) {
  if (steps < 1) throw std::invalid_argument("simulate_sde needs steps >= 1");
  const double dt = 1.0 / steps;
  const double noise = sigma * std::sqrt(dt);
  Trajectory tr;
  tr.times = Vec::LinSpaced(steps + 1, 0.0, 1.0);
  tr.states.push_back(x0);
  Mat x = x0;
  Mat xi(x0.rows(), x0.cols());
  for (int k = 0; k < steps; ++k) {
    const double t = tr.times(k);
    Mat u = drift(x, t);
    clamp_rows(u);
    fill_normal(xi, rng);
    x += u * dt + noise * xi;
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "SDE state became non-finite at step " << k << " (t = " << t << ")";
      throw DivergenceError(msg.str());
    }
    if (keep_states || k + 1 == steps) tr.states.push_back(x);
  }
  if (!keep_states) tr.times = (Vec(2) << 0.0, 1.0).finished();
  return tr;
}

Trajectory euler_maruyama(const driftnet::DriftNetwork& net, const Mat& x0, double sigma, int steps,
                          Rng& rng, Direction direction, const BaseDrift& base_drift,
                          bool keep_states) {
  if (x0.cols() != net.input_dim()) throw std::invalid_argument("network/state dimension mismatch");
  DriftField field = [&](const Mat& x, double t) {
    Mat u = net.forward(x, Vec::Constant(x.rows(), t));
    if (direction == Direction::Forward && base_drift) u += base_drift(x, t, rng);
    return u;
  };
  return simulate_sde(field, x0, sigma, steps, rng, keep_states);
}

BaseDrift scene_base_drift(const scenes::Scene& scene) {
  if (!scene.has_base_drift()) return {};
  const Index d = scene.dim;
  return [d](const Mat& x, double, Rng& rng) {
    const Vec xi = normal_matrix(d, 1, rng);
    return scenes::polarize_drift(x, xi);
  };
}

TrainState init_state(const scenes::Scene& scene, const TrainConfig& config) {
  driftnet::NetConfig nc = config.net;
  nc.input_dim = scene.dim;
  if (config.scene_scales) {
    nc.input_scale = scene.input_scale;
    nc.output_scale = scene.output_scale;
  }
  Rng fr(derive_seed(config.seed, kForwardInit));
  Rng br(derive_seed(config.seed, kBackwardInit));
  TrainState s{driftnet::DriftNetwork(nc, fr), driftnet::DriftNetwork(nc, br), {}, {}, 0,
               Direction::Forward, {}};
  driftnet::AdamWOptions ao;
  ao.lr = config.lr;
  ao.weight_decay = config.weight_decay;
  s.forward_opt = driftnet::OptimizerState(s.forward_net.parameters().size(), ao);
  s.backward_opt = driftnet::OptimizerState(s.backward_net.parameters().size(), ao);
  return s;
}

Coupling sample_coupling(const TrainState& state, const scenes::Scene& scene, Index n, int steps,
                         Rng& rng) {
  if (n < 1) throw std::invalid_argument("coupling needs n >= 1");
  Coupling c;
  if (state.epoch == 0) {
    c.x0 = scene.sample_source(n, rng);
    c.x1 = scene.sample_target(n, rng);
    c.source = CouplingSource::Independent;
  } else if (state.direction == Direction::Backward) {
    c.x0 = scene.sample_source(n, rng);
    c.x1 = euler_maruyama(state.forward_net, c.x0, scene.sigma, steps, rng, Direction::Forward,
                          scene_base_drift(scene), false)
               .terminal();
    c.source = CouplingSource::ForwardSimulated;
  } else {
    c.x1 = scene.sample_target(n, rng);
    c.x0 = euler_maruyama(state.backward_net, c.x1, scene.sigma, steps, rng, Direction::Backward,
                          {}, false)
               .terminal();
    c.source = CouplingSource::BackwardSimulated;
  }
  return c;
}

PairPaths fit_pair_paths(const Coupling& coupling, const scenes::Scene& scene,
                         const guidance::GuidanceContext* guidance, const TrainConfig& config,
                         std::uint64_t seed) {
  const Index n = coupling.x0.rows();
  const double nu = nu_for(scene, config);
  const bool guided = guidance != nullptr && guidance->alpha() > 0.0;
  PairPaths out;
  out.paths.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    out.paths.push_back(paths::brownian_bridge_path(coupling.x0.row(i).transpose(),
                                                    coupling.x1.row(i).transpose(), nu,
                                                    config.spline.knots));
  if (!guided) return out;

  Index divergences = 0;
#pragma omp parallel for schedule(dynamic, 8) reduction(+ : divergences)
  for (Index i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    paths::SplineProblem p;
    p.x0 = coupling.x0.row(i).transpose();
    p.x1 = coupling.x1.row(i).transpose();
    p.nu = nu;
    p.sigma = scene.sigma;
    p.guidance = guidance;
    p.keypoint = guidance::assign_keypoint(p.x0, *guidance);
    p.t_min = config.t_min;
    paths::SplineResult r = paths::optimize_spline(p, config.spline, rng);
    if (r.diverged) ++divergences;
    out.paths[static_cast<std::size_t>(i)] = std::move(r.path);
  }
  out.divergences = divergences;
  return out;
}

std::vector<double> regress_drift(driftnet::DriftNetwork& net, driftnet::OptimizerState& opt,
                                  const std::vector<paths::ConditionalPath>& pair_paths,
                                  Direction fitted, const scenes::Scene& scene,
                                  const TrainConfig& config, Rng& rng) {
  if (pair_paths.empty()) throw std::invalid_argument("no pair paths to regress on");
  const Index d = scene.dim;
  const Index b = config.batch;
  const bool shared_time = fitted == Direction::Forward && scene.has_base_drift();
  std::uniform_int_distribution<std::size_t> pick(0, pair_paths.size() - 1);
  std::uniform_real_distribution<double> time(config.t_min, 1.0 - config.t_min);

  Mat x(b, d);
  Mat target(b, d);
  Vec tin(b);
  Vec grad;
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(config.inner_steps));
  // Cosine decay within each fit; the bridge targets are heavy-tailed near
  // the endpoints and a constant rate leaves the fit noisy.
  const double base_lr = opt.options.lr;
  for (int step = 0; step < config.inner_steps; ++step) {
    opt.options.lr = base_lr * 0.5 *
                     (1.0 + std::cos(std::numbers::pi * step / std::max(1, config.inner_steps)));
    const double shared_t = shared_time ? time(rng) : 0.0;
    for (Index k = 0; k < b; ++k) {
      const paths::ConditionalPath& path = pair_paths[pick(rng)];
      const double t = shared_time ? shared_t : time(rng);
      const paths::SplineState s = paths::spline_eval(path, t);
      const Vec z = normal_matrix(d, 1, rng);
      const double nu2 = path.nu() * path.nu();
      const double coef = s.dsigma / s.sigma - nu2 / (2.0 * s.sigma * s.sigma);
      const Vec u = s.dmean + (coef * s.sigma) * z;
      x.row(k) = (s.mean + s.sigma * z).transpose();
      if (fitted == Direction::Forward) {
        target.row(k) = u.transpose();
        tin(k) = t;
      } else {
        target.row(k) = (-u - (nu2 / s.sigma) * z).transpose();
        tin(k) = 1.0 - t;
      }
    }
    if (shared_time) target -= scenes::polarize_drift(x, normal_matrix(d, 1, rng));
    losses.push_back(net.regression_grads(x, tin, target, grad));
    driftnet::adamw_step(net, grad, opt);
  }
  opt.options.lr = base_lr;
  return losses;
}

namespace {

Mat sample_initial(const scenes::Scene& scene, scenes::InitialCondition ic, Index n,
                   std::uint64_t seed) {
  Rng rng(derive_seed(seed, 11));
  return scene.sample_source(n, rng, ic);
}

Mat sample_reference_target(const scenes::Scene& scene, Index n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 12));
  return scene.sample_target(n, rng);
}

double w2_capped(const Mat& a, const Mat& b) {
  const Index n = std::min<Index>(a.rows(), transport::kW2MaxSize);
  return transport::exact_w2(a.topRows(n), b.topRows(n));
}

}  // namespace

double monitor_w2(const driftnet::DriftNetwork& forward_net, const scenes::Scene& scene, Index n,
                  int sde_steps, std::uint64_t seed, scenes::InitialCondition ic) {
  const Mat x0 = sample_initial(scene, ic, n, seed);
  const Mat target = sample_reference_target(scene, n, seed);
  Rng rng(derive_seed(seed, 13));
  const Trajectory tr = euler_maruyama(forward_net, x0, scene.sigma, sde_steps, rng,
                                       Direction::Forward, scene_base_drift(scene), false);
  return w2_capped(tr.terminal(), target);
}

void train_epoch(TrainState& state, const scenes::Scene& scene,
                 const guidance::GuidanceContext* guidance, const TrainConfig& config) {
  const auto epoch = static_cast<std::uint64_t>(state.epoch);
  Rng coupling_rng(derive_seed(config.seed, kEpochCoupling, epoch));
  const Coupling coupling =
      sample_coupling(state, scene, config.pairs_per_epoch, config.sde_steps, coupling_rng);

  PairPaths pp =
      fit_pair_paths(coupling, scene, guidance, config, derive_seed(config.seed, kEpochPaths, epoch));
  const auto limit = static_cast<Index>(config.max_spline_divergence *
                                        static_cast<double>(coupling.x0.rows()));
  if (pp.divergences > limit) {
    std::ostringstream msg;
    msg << "epoch " << state.epoch << ": " << pp.divergences << " of " << coupling.x0.rows()
        << " spline optimizations diverged";
    throw TrainingAborted(msg.str());
  }

  Rng reg_rng(derive_seed(config.seed, kEpochRegression, epoch));
  const Direction fitted = state.direction;
  driftnet::DriftNetwork& net = fitted == Direction::Forward ? state.forward_net : state.backward_net;
  driftnet::OptimizerState& opt =
      fitted == Direction::Forward ? state.forward_opt : state.backward_opt;
  const std::vector<double> losses = regress_drift(net, opt, pp.paths, fitted, scene, config, reg_rng);

  EpochRecord rec;
  rec.epoch = state.epoch;
  rec.fitted = fitted;
  rec.spline_divergences = pp.divergences;
  const std::size_t tail = std::min<std::size_t>(50, losses.size());
  for (std::size_t k = losses.size() - tail; k < losses.size(); ++k) rec.bm_loss += losses[k];
  rec.bm_loss /= static_cast<double>(std::max<std::size_t>(1, tail));
  if (fitted == Direction::Forward || state.metrics.empty()) {
    rec.w2 = monitor_w2(state.forward_net, scene, config.monitor_samples, config.sde_steps,
                        derive_seed(config.seed, kMonitor));
  } else {
    rec.w2 = state.metrics.back().w2;
  }
  state.metrics.push_back(rec);
  ++state.epoch;
  state.direction = flip(state.direction);
}

TrainResult run_fsbm(const scenes::Scene& scene, const guidance::GuidanceContext* guidance,
                     const TrainConfig& config) {
  if (config.epochs < 1 || config.pairs_per_epoch < 1 || config.inner_steps < 1 || config.batch < 1 ||
      config.sde_steps < 1)
    throw std::invalid_argument("training counts must be >= 1");
  if (guidance != nullptr && guidance->keypoints().dim() != scene.dim)
    throw std::invalid_argument("keypoint dimension does not match the scene");

  TrainResult result{init_state(scene, config)};
  TrainState& state = result.state;
  if (!config.run_dir.empty()) std::filesystem::create_directories(config.run_dir);
  std::vector<double> forward_w2;

  for (int e = 0; e < config.epochs; ++e) {
    train_epoch(state, scene, guidance, config);
    const EpochRecord& rec = state.metrics.back();
    spdlog::info("epoch {:>3} fit {:<8} bm_loss {:.5f} W2 {:.5f}", rec.epoch, to_string(rec.fitted),
                 rec.bm_loss, rec.w2);
    if (!config.run_dir.empty()) {
      io::append_metrics(config.run_dir / "metrics.jsonl", rec);
      driftnet::save_checkpoint(config.run_dir / "forward.ckpt", state.forward_net);
      driftnet::save_checkpoint(config.run_dir / "backward.ckpt", state.backward_net);
    }
    if (rec.fitted == Direction::Forward) forward_w2.push_back(rec.w2);
    if (config.patience_tol > 0.0 && static_cast<int>(forward_w2.size()) > config.patience) {
      bool flat = true;
      for (std::size_t k = forward_w2.size() - static_cast<std::size_t>(config.patience);
           k < forward_w2.size(); ++k)
        flat = flat && std::abs(forward_w2[k] - forward_w2[k - 1]) < config.patience_tol;
      if (flat) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

Evaluation evaluate(const driftnet::DriftNetwork& forward_net, const scenes::Scene& scene,
                    scenes::InitialCondition ic, Index n, int sde_steps, std::uint64_t seed) {
  Evaluation ev;
  ev.ic = ic;
  const Mat x0 = sample_initial(scene, ic, n, seed);
  ev.target = sample_reference_target(scene, n, seed);
  Rng rng(derive_seed(seed, 13));
  ev.trajectory = euler_maruyama(forward_net, x0, scene.sigma, sde_steps, rng, Direction::Forward,
                                 scene_base_drift(scene), true);
  ev.w2 = w2_capped(ev.trajectory.terminal(), ev.target);
  if (!scene.is_crowd()) ev.kl = transport::knn_kl(ev.trajectory.terminal(), ev.target);
  return ev;
}

Trajectory simulate_reference(const scenes::Scene& scene, Index n, int sde_steps,
                              std::uint64_t seed, scenes::InitialCondition ic) {
  const Mat x0 = sample_initial(scene, ic, n, seed);
  Rng rng(derive_seed(seed, 13));
  const BaseDrift base = scene_base_drift(scene);
  DriftField field = [&](const Mat& x, double t) -> Mat {
    if (base) return base(x, t, rng);
    return Mat::Zero(x.rows(), x.cols());
  };
  return simulate_sde(field, x0, scene.sigma, sde_steps, rng, true);
}

}  // namespace fsbm::matching
