#pragma once

// Forward-backward bridge matching with keypoint guidance: simulate a
// coupling with the current drift, fit per-pair conditional splines, regress
// the other direction's network on the closed-form conditional drifts.

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsbm/driftnet.hpp"
#include "fsbm/guidance.hpp"
#include "fsbm/paths.hpp"
#include "fsbm/scenes.hpp"
#include "fsbm/types.hpp"

namespace fsbm::matching {

enum class Direction { Forward, Backward };
std::string to_string(Direction d);

/// Raised when a simulated state becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when too many spline optimizations diverge in one epoch.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMaxDriftNorm = 1e3;

/// Drift evaluated on a whole population at one time.
using DriftField = std::function<Mat(const Mat& x, double t)>;

struct Trajectory {
  Vec times;                // steps + 1 values
  std::vector<Mat> states;  // steps + 1 snapshots, n x d
  const Mat& terminal() const { return states.back(); }
};

/// X_{k+1} = X_k + u(X_k, t_k) dt + sigma sqrt(dt) xi on a uniform grid over
/// [0, 1]; per-particle drifts are clamped to norm <= 1e3. Throws
/// DivergenceError on a non-finite state. If `keep_states` is false only the
/// first and last snapshots are stored.
Trajectory simulate_sde(const DriftField& drift, const Mat& x0, double sigma, int steps, Rng& rng,
                        bool keep_states = true);

/// Network SDE. Backward integrates in s = 1 - t: the backward network is
/// queried with its own time s. `base_drift` (forward only) is added to the
/// network drift; it receives fresh randomness through `rng`.
using BaseDrift = std::function<Mat(const Mat& x, double t, Rng& rng)>;
Trajectory euler_maruyama(const driftnet::DriftNetwork& net, const Mat& x0, double sigma, int steps,
                          Rng& rng, Direction direction, const BaseDrift& base_drift = {},
                          bool keep_states = true);

/// Polarizing drift with a fresh shared xi ~ N(0, I) per call, or empty for
/// crowd scenes.
BaseDrift scene_base_drift(const scenes::Scene& scene);

enum class CouplingSource { Independent, ForwardSimulated, BackwardSimulated };

struct Coupling {
  Mat x0;
  Mat x1;
  CouplingSource source = CouplingSource::Independent;
};

struct TrainConfig {
  int epochs = 20;
  Index pairs_per_epoch = 1024;
  int inner_steps = 500;
  double lr = 1e-3;
  double weight_decay = 0.0;
  Index batch = 256;
  int sde_steps = 100;
  std::uint64_t seed = 0;
  /// Path noise scale; 0 means "use the scene's sigma".
  double nu = 0.0;
  double t_min = paths::kDefaultTMin;
  paths::SplineOptions spline;
  driftnet::NetConfig net;
  /// Replace net.input_scale/output_scale with the scene's suggestions.
  bool scene_scales = true;
  /// W2 monitor after each epoch (fixed monitor seed).
  Index monitor_samples = 512;
  /// Early stop when the W2 change stays below this over `patience` forward fits.
  double patience_tol = 0.0;
  int patience = 3;
  double max_spline_divergence = 0.1;
  /// When non-empty, metrics and checkpoints are written here every epoch.
  std::filesystem::path run_dir;
};

struct EpochRecord {
  int epoch = 0;
  Direction fitted = Direction::Forward;
  double bm_loss = 0.0;
  double w2 = 0.0;
  Index spline_divergences = 0;
};

struct TrainState {
  driftnet::DriftNetwork forward_net;
  driftnet::DriftNetwork backward_net;
  driftnet::OptimizerState forward_opt;
  driftnet::OptimizerState backward_opt;
  int epoch = 0;
  Direction direction = Direction::Forward;
  std::vector<EpochRecord> metrics;
};

/// Fresh networks with zero heads; the backward net uses a derived seed.
TrainState init_state(const scenes::Scene& scene, const TrainConfig& config);

/// Epoch 0: independent pairs. Forward direction: simulate the forward net
/// from the source sampler. Backward direction: simulate the backward net
/// from the target sampler.
Coupling sample_coupling(const TrainState& state, const scenes::Scene& scene, Index n, int steps,
                         Rng& rng);

/// Conditional paths for every pair of a coupling (optimized when guided).
struct PairPaths {
  std::vector<paths::ConditionalPath> paths;
  Index divergences = 0;
};
PairPaths fit_pair_paths(const Coupling& coupling, const scenes::Scene& scene,
                         const guidance::GuidanceContext* guidance, const TrainConfig& config,
                         std::uint64_t seed);

/// Minibatch regression of `net` on conditional drift targets drawn from the
/// pair paths. Returns per-step losses.
std::vector<double> regress_drift(driftnet::DriftNetwork& net, driftnet::OptimizerState& opt,
                                  const std::vector<paths::ConditionalPath>& pair_paths,
                                  Direction fitted, const scenes::Scene& scene,
                                  const TrainConfig& config, Rng& rng);

/// One epoch: coupling, pair paths, regression, direction flip, metrics.
void train_epoch(TrainState& state, const scenes::Scene& scene,
                 const guidance::GuidanceContext* guidance, const TrainConfig& config);

/// W2 between the forward model's terminal samples and the target sampler.
double monitor_w2(const driftnet::DriftNetwork& forward_net, const scenes::Scene& scene,
                  Index n, int sde_steps, std::uint64_t seed,
                  scenes::InitialCondition ic = scenes::InitialCondition::Vanilla);

struct TrainResult {
  TrainState state;
  bool early_stopped = false;
};

TrainResult run_fsbm(const scenes::Scene& scene, const guidance::GuidanceContext* guidance,
                     const TrainConfig& config);

struct Evaluation {
  scenes::InitialCondition ic = scenes::InitialCondition::Vanilla;
  Trajectory trajectory;
  Mat target;
  double w2 = 0.0;
  double kl = 0.0;  // opinion scenes only
};

/// Simulate n particles from the chosen initial condition with the forward
/// model (plus the scene's base drift) and compare with n target samples.
Evaluation evaluate(const driftnet::DriftNetwork& forward_net, const scenes::Scene& scene,
                    scenes::InitialCondition ic, Index n, int sde_steps, std::uint64_t seed);

/// Reference dynamics only: the scene's base drift (or none) plus noise.
Trajectory simulate_reference(const scenes::Scene& scene, Index n, int sde_steps,
                              std::uint64_t seed,
                              scenes::InitialCondition ic = scenes::InitialCondition::Vanilla);

}  // namespace fsbm::matching
