#pragma once

// Entropic optimal transport, exact assignment-based W2 and a k-NN KL
// estimator. Everything here is a pure function of its inputs.

#include <cstddef>
#include <utility>
#include <vector>

#include "fsbm/types.hpp"

namespace fsbm::transport {

/// Nonnegative, finite n x m cost matrix.
class CostMatrix {
 public:
  explicit CostMatrix(Mat values);

  /// Pairwise squared Euclidean cost between the rows of a and b.
  static CostMatrix squared_euclidean(const ParticleBatch& a, const ParticleBatch& b);

  const Mat& values() const { return values_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

 private:
  Mat values_;
};

struct TransportPlan {
  Mat plan;
  Vec row_marginal;
  Vec col_marginal;
  bool converged = false;
  int iterations = 0;
  /// Max absolute marginal violation of the returned plan.
  double marginal_error = 0.0;
};

struct SinkhornOptions {
  double epsilon = 0.1;
  int max_iter = 10000;
  double tol = 1e-9;
  /// Start at epsilon * scaling_start and halve down to epsilon.
  bool epsilon_scaling = true;
  double scaling_start = 10.0;
};

/// Log-domain Sinkhorn for min <C,P> + eps*KL(P | mu x nu).
///
/// mu and nu must be probability vectors. A cost containing NaN is
/// rejected with std::invalid_argument. On non-convergence the last
/// iterate is returned with `converged == false`. If `objective_trace`
/// is non-null, the dual objective <f,mu> + <g,nu> - eps*(sum P - 1) after
/// every full sweep at the target epsilon is appended to it; it is
/// non-decreasing and converges to the primal optimum.
TransportPlan sinkhorn_plan(const CostMatrix& cost, const Vec& mu, const Vec& nu,
                            const SinkhornOptions& options,
                            std::vector<double>* objective_trace = nullptr);

/// <C,P> + eps * sum P log(P / (mu nu^T)).
double entropic_objective(const Mat& cost, const Mat& plan, const Vec& mu, const Vec& nu,
                          double epsilon);

/// `count` i.i.d. (row, col) draws with probability proportional to the
/// plan entries. Throws std::invalid_argument on a zero or negative plan.
std::vector<std::pair<Index, Index>> sample_pairs_from_plan(const Mat& plan, std::size_t count,
                                                            Rng& rng);

struct Assignment {
  /// row_to_col[i] is the column assigned to row i.
  std::vector<Index> row_to_col;
  double total_cost = 0.0;
};

/// Exact minimum-cost perfect matching on a square cost matrix
/// (Jonker-Volgenant column reduction followed by shortest augmenting paths).
Assignment solve_assignment(const Mat& cost);

/// Batches larger than this are subsampled before the exact solve.
inline constexpr Index kW2SubsampleSize = 2048;
inline constexpr Index kW2MaxSize = 4096;

/// sqrt(min over permutations of mean squared distance). Requires equal
/// row counts (<= kW2MaxSize) and equal dimension; batches above
/// kW2SubsampleSize are subsampled with a fixed-seed permutation.
double exact_w2(const ParticleBatch& a, const ParticleBatch& b);

/// sqrt(<C,P>) of the entropic plan between uniform empirical measures.
double entropic_w2(const ParticleBatch& a, const ParticleBatch& b, double epsilon);

/// Kozachenko-Leonenko / Wang-Kulkarni-Verdu k-NN estimate of KL(p || q).
/// Zero neighbour distances are floored at 1e-12 and reported via a warning.
double knn_kl(const ParticleBatch& p_samples, const ParticleBatch& q_samples, int k = 5);

}  // namespace fsbm::transport
