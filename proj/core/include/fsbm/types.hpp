#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace fsbm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// n samples in d dimensions, one sample per row.
using ParticleBatch = Eigen::MatrixXd;

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent per-item RNG streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

/// Fill a matrix with i.i.d. standard normal draws.
inline void fill_normal(Eigen::Ref<Mat> out, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < out.cols(); ++j)
    for (Index i = 0; i < out.rows(); ++i) out(i, j) = normal(rng);
}

inline Mat normal_matrix(Index rows, Index cols, Rng& rng) {
  Mat out(rows, cols);
  fill_normal(out, rng);
  return out;
}

}  // namespace fsbm
