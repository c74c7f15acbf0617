#include "fsbm/driftnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace fsbm::driftnet {

namespace {

using MapMat = Eigen::Map<Mat>;
using MapVec = Eigen::Map<Vec>;
using CMapMat = Eigen::Map<const Mat>;
using CMapVec = Eigen::Map<const Vec>;

struct Offsets {
  Index w_in, b_in;
  struct Block {
    Index w1, u, b1, w2, b2;
  };
  std::vector<Block> blocks;
  Index w_out, b_out, total;

  explicit Offsets(const NetConfig& c) {
    const Index h = c.hidden_dim;
    Index o = 0;
    w_in = o;
    o += h * c.input_dim;
    b_in = o;
    o += h;
    for (Index b = 0; b < c.n_blocks; ++b) {
      Block bl{};
      bl.w1 = o;
      o += h * h;
      bl.u = o;
      o += h * c.time_embed_dim;
      bl.b1 = o;
      o += h;
      bl.w2 = o;
      o += h * h;
      bl.b2 = o;
      o += h;
      blocks.push_back(bl);
    }
    w_out = o;
    o += c.input_dim * h;
    b_out = o;
    o += c.input_dim;
    total = o;
  }
};

void check_config(const NetConfig& c) {
  if (c.input_dim < 1 || c.hidden_dim < 1 || c.n_blocks < 0)
    throw std::invalid_argument("invalid network dimensions");
  if (c.time_embed_dim < 2 || c.time_embed_dim % 2 != 0)
    throw std::invalid_argument("time embedding dimension must be even and >= 2");
  if (!(c.input_scale > 0.0) || !(c.output_scale > 0.0))
    throw std::invalid_argument("network scales must be positive");
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

Mat embed_batch(const Vec& t, Index dim) {
  Mat e(dim, t.size());
  for (Index i = 0; i < t.size(); ++i) e.col(i) = time_embed(t(i), dim);
  return e;
}

}  // namespace

Vec time_embed(double t, Index dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time embedding dimension must be even");
  const Index half = dim / 2;
  Vec e(dim);
  for (Index k = 0; k < half; ++k) {
    const double w = half == 1 ? 1.0 : std::pow(1000.0, static_cast<double>(k) / (half - 1));
    e(k) = std::sin(w * t);
    e(half + k) = std::cos(w * t);
  }
  return e;
}

Index DriftNetwork::parameter_count(const NetConfig& config) { return Offsets(config).total; }

DriftNetwork::DriftNetwork(const NetConfig& config, Rng& rng) : config_(config) {
  check_config(config_);
  const Offsets off(config_);
  params_ = Vec::Zero(off.total);
  const Index h = config_.hidden_dim;
  auto fill = [&](Index start, Index count, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index k = 0; k < count; ++k) params_(start + k) = u(rng);
  };
  fill(off.w_in, h * config_.input_dim, static_cast<double>(config_.input_dim));
  fill(off.b_in, h, static_cast<double>(config_.input_dim));
  for (const auto& b : off.blocks) {
    const double fan = static_cast<double>(h + config_.time_embed_dim);
    fill(b.w1, h * h, fan);
    fill(b.u, h * config_.time_embed_dim, fan);
    fill(b.b1, h, fan);
    fill(b.w2, h * h, static_cast<double>(h));
    fill(b.b2, h, static_cast<double>(h));
  }
  // Output head stays zero.
}

DriftNetwork::DriftNetwork(const NetConfig& config, Vec parameters)
    : config_(config), params_(std::move(parameters)) {
  check_config(config_);
  if (params_.size() != parameter_count(config_))
    throw std::invalid_argument("parameter vector has the wrong length");
}

Mat DriftNetwork::forward(const Mat& x, const Vec& t) const {
  if (x.cols() != config_.input_dim || x.rows() != t.size())
    throw std::invalid_argument("forward: shape mismatch");
  if (!params_.allFinite()) throw std::runtime_error("drift network has non-finite weights");
  const Offsets off(config_);
  const Index h = config_.hidden_dim;
  const Index d = config_.input_dim;
  const Index e_dim = config_.time_embed_dim;
  const double* p = params_.data();

  const Mat emb = embed_batch(t, e_dim);
  Mat hid = CMapMat(p + off.w_in, h, d) * (config_.input_scale * x.transpose());
  hid.colwise() += CMapVec(p + off.b_in, h);
  Mat a(h, x.rows());
  for (const auto& b : off.blocks) {
    a.noalias() = CMapMat(p + b.w1, h, h) * hid;
    a.noalias() += CMapMat(p + b.u, h, e_dim) * emb;
    a.colwise() += CMapVec(p + b.b1, h);
    a = a.unaryExpr([](double v) { return v * sigmoid(v); });
    hid.noalias() += CMapMat(p + b.w2, h, h) * a;
    hid.colwise() += CMapVec(p + b.b2, h);
  }
  Mat out = CMapMat(p + off.w_out, d, h) * hid;
  out.colwise() += CMapVec(p + off.b_out, d);
  return config_.output_scale * out.transpose();
}

double DriftNetwork::regression_grads(const Mat& x, const Vec& t, const Mat& target,
                                      Vec& grad) const {
  if (x.rows() == 0) throw std::invalid_argument("regression batch is empty");
  if (x.cols() != config_.input_dim || x.rows() != t.size() || target.rows() != x.rows() ||
      target.cols() != x.cols())
    throw std::invalid_argument("regression_grads: shape mismatch");
  if (!params_.allFinite()) throw std::runtime_error("drift network has non-finite weights");
  const Offsets off(config_);
  const Index h = config_.hidden_dim;
  const Index d = config_.input_dim;
  const Index e_dim = config_.time_embed_dim;
  const Index n = x.rows();
  const double* p = params_.data();

  const Mat emb = embed_batch(t, e_dim);
  const Mat xin = config_.input_scale * x.transpose();
  std::vector<Mat> hs;   // input to each block, then the final hidden state
  std::vector<Mat> pre;  // block pre-activations
  hs.reserve(off.blocks.size() + 1);
  pre.reserve(off.blocks.size());
  Mat hid = CMapMat(p + off.w_in, h, d) * xin;
  hid.colwise() += CMapVec(p + off.b_in, h);
  for (const auto& b : off.blocks) {
    hs.push_back(hid);
    Mat a = CMapMat(p + b.w1, h, h) * hid;
    a.noalias() += CMapMat(p + b.u, h, e_dim) * emb;
    a.colwise() += CMapVec(p + b.b1, h);
    const Mat s = a.unaryExpr([](double v) { return v * sigmoid(v); });
    hid.noalias() += CMapMat(p + b.w2, h, h) * s;
    hid.colwise() += CMapVec(p + b.b2, h);
    pre.push_back(std::move(a));
  }
  Mat out = CMapMat(p + off.w_out, d, h) * hid;
  out.colwise() += CMapVec(p + off.b_out, d);
  const Mat resid = config_.output_scale * out - target.transpose();
  const double loss = 0.5 * resid.squaredNorm() / static_cast<double>(n);

  grad = Vec::Zero(params_.size());
  double* g = grad.data();
  const Mat dout = (config_.output_scale / static_cast<double>(n)) * resid;
  MapMat(g + off.w_out, d, h).noalias() = dout * hid.transpose();
  MapVec(g + off.b_out, d) = dout.rowwise().sum();
  Mat dh = CMapMat(p + off.w_out, d, h).transpose() * dout;

  for (Index k = static_cast<Index>(off.blocks.size()) - 1; k >= 0; --k) {
    const auto& b = off.blocks[static_cast<std::size_t>(k)];
    const Mat& a = pre[static_cast<std::size_t>(k)];
    const Mat s = a.unaryExpr([](double v) { return v * sigmoid(v); });
    MapMat(g + b.w2, h, h).noalias() = dh * s.transpose();
    MapVec(g + b.b2, h) = dh.rowwise().sum();
    Mat da = CMapMat(p + b.w2, h, h).transpose() * dh;
    da.array() *= a.unaryExpr([](double v) {
                     const double sg = sigmoid(v);
                     return sg * (1.0 + v * (1.0 - sg));
                   }).array();
    MapMat(g + b.w1, h, h).noalias() = da * hs[static_cast<std::size_t>(k)].transpose();
    MapMat(g + b.u, h, e_dim).noalias() = da * emb.transpose();
    MapVec(g + b.b1, h) = da.rowwise().sum();
    dh.noalias() += CMapMat(p + b.w1, h, h).transpose() * da;
  }
  MapMat(g + off.w_in, h, d).noalias() = dh * xin.transpose();
  MapVec(g + off.b_in, h) = dh.rowwise().sum();
  return loss;
}

OptimizerState::OptimizerState(Index n, const AdamWOptions& opts)
    : m(Vec::Zero(n)), v(Vec::Zero(n)), options(opts) {}

void adamw_step(Vec& parameters, const Vec& grads, OptimizerState& state) {
  if (grads.size() != parameters.size() || state.m.size() != parameters.size() ||
      state.v.size() != parameters.size())
    throw std::invalid_argument("adamw_step: shape mismatch");
  const AdamWOptions& o = state.options;
  ++state.step;
  parameters *= 1.0 - o.lr * o.weight_decay;
  state.m = o.beta1 * state.m + (1.0 - o.beta1) * grads;
  state.v = o.beta2 * state.v + (1.0 - o.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  parameters.array() -= o.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + o.eps);
}

void adamw_step(DriftNetwork& net, const Vec& grads, OptimizerState& state) {
  adamw_step(net.parameters(), grads, state);
}

namespace {

constexpr char kMagic[8] = {'F', 'S', 'B', 'M', 'N', 'E', 'T', '\0'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const DriftNetwork& net) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
  const NetConfig& c = net.config();
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.input_dim));
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.time_embed_dim));
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.hidden_dim));
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.n_blocks));
  write_le<double>(out, c.input_scale);
  write_le<double>(out, c.output_scale);
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(net.parameters().size()));
  for (Index i = 0; i < net.parameters().size(); ++i) write_le<double>(out, net.parameters()(i));
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

DriftNetwork load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(file.string() + " is not a drift network checkpoint");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  NetConfig c;
  c.input_dim = static_cast<Index>(read_le<std::uint64_t>(in));
  c.time_embed_dim = static_cast<Index>(read_le<std::uint64_t>(in));
  c.hidden_dim = static_cast<Index>(read_le<std::uint64_t>(in));
  c.n_blocks = static_cast<Index>(read_le<std::uint64_t>(in));
  c.input_scale = read_le<double>(in);
  c.output_scale = read_le<double>(in);
  const auto count = static_cast<Index>(read_le<std::uint64_t>(in));
  check_config(c);
  if (count != DriftNetwork::parameter_count(c))
    throw std::runtime_error("checkpoint parameter count does not match its header");
  Vec params(count);
  for (Index i = 0; i < count; ++i) params(i) = read_le<double>(in);
  return DriftNetwork(c, std::move(params));
}

}  // namespace fsbm::driftnet
