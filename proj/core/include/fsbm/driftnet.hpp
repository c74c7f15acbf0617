#pragma once

// Residual MLP drift u(x, t) with sinusoidal time embedding, hand-written
// reverse-mode gradients and AdamW.
//
// Parameter layout (flat vector, matrices column-major), H = hidden_dim,
// E = time_embed_dim, d = input_dim:
//   W_in  H x d,  b_in  H
//   per block: W1 H x H, U H x E, b1 H, W2 H x H, b2 H
//   W_out d x H,  b_out d
// Block: h <- h + W2 SiLU(W1 h + U e(t) + b1) + b2.
// Output: output_scale * (W_out h + b_out), with h0 = W_in (input_scale x) + b_in.

#include <filesystem>
#include <string>

#include "fsbm/types.hpp"

namespace fsbm::driftnet {

struct NetConfig {
  Index input_dim = 2;
  Index time_embed_dim = 32;
  Index hidden_dim = 128;
  Index n_blocks = 4;
  /// Fixed (non-trainable) affine scales; stored in checkpoints.
  double input_scale = 1.0;
  double output_scale = 1.0;
};

/// [sin(w_k t), cos(w_k t)], w_k geometric from 1 to 1000, k = 1..dim/2.
Vec time_embed(double t, Index dim);

class DriftNetwork {
 public:
  /// Uniform(+-1/sqrt(fan_in)) weights and biases, zero output head.
  DriftNetwork(const NetConfig& config, Rng& rng);
  /// Explicit parameters (e.g. from a checkpoint).
  DriftNetwork(const NetConfig& config, Vec parameters);

  static Index parameter_count(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  Index input_dim() const { return config_.input_dim; }
  const Vec& parameters() const { return params_; }
  Vec& parameters() { return params_; }

  /// x: n x d (one sample per row), t: n times. Returns n x d drifts.
  /// Throws std::runtime_error when a parameter is non-finite.
  Mat forward(const Mat& x, const Vec& t) const;

  /// Loss 1/2 mean_i |forward(x_i, t_i) - target_i|^2 and its gradient
  /// with respect to the flat parameter vector.
  double regression_grads(const Mat& x, const Vec& t, const Mat& target, Vec& grad) const;

 private:
  NetConfig config_;
  Vec params_;
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  Vec m;
  Vec v;
  long step = 0;
  AdamWOptions options;

  OptimizerState() = default;
  OptimizerState(Index n, const AdamWOptions& opts);
};

/// Decoupled weight decay w *= (1 - lr*wd), then the bias-corrected Adam step.
void adamw_step(Vec& parameters, const Vec& grads, OptimizerState& state);
void adamw_step(DriftNetwork& net, const Vec& grads, OptimizerState& state);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary: "FSBMNET\0", u32 version, u64 d, u64 time_embed_dim, u64 hidden,
/// u64 n_blocks, f64 input_scale, f64 output_scale, u64 parameter count,
/// then the parameters as little-endian f64 in the layout above.
void save_checkpoint(const std::filesystem::path& file, const DriftNetwork& net);
DriftNetwork load_checkpoint(const std::filesystem::path& file);

}  // namespace fsbm::driftnet
