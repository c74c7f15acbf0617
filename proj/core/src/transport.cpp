#include "fsbm/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace fsbm::transport {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_probability_vector(const Vec& p, const char* name) {
  if (p.size() == 0) throw std::invalid_argument(std::string(name) + " is empty");
  if ((p.array() < 0.0).any() || !p.allFinite())
    throw std::invalid_argument(std::string(name) + " has negative or non-finite entries");
  if (std::abs(p.sum() - 1.0) > 1e-8)
    throw std::invalid_argument(std::string(name) + " does not sum to 1");
}

Vec safe_log(const Vec& p) {
  Vec out(p.size());
  for (Index i = 0; i < p.size(); ++i) out(i) = p(i) > 0.0 ? std::log(p(i)) : kNegInf;
  return out;
}

// f_i = -eps * log sum_j exp(log_nu_j + (g_j - C_ij) / eps)
void update_rows(const Mat& cost, const Vec& log_nu, const Vec& g, double eps, Vec& f) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  for (Index i = 0; i < n; ++i) {
    double mx = kNegInf;
    for (Index j = 0; j < m; ++j) mx = std::max(mx, log_nu(j) + (g(j) - cost(i, j)) / eps);
    double s = 0.0;
    for (Index j = 0; j < m; ++j) s += std::exp(log_nu(j) + (g(j) - cost(i, j)) / eps - mx);
    f(i) = -eps * (mx + std::log(s));
  }
}

void update_cols(const Mat& cost, const Vec& log_mu, const Vec& f, double eps, Vec& g) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  for (Index j = 0; j < m; ++j) {
    double mx = kNegInf;
    for (Index i = 0; i < n; ++i) mx = std::max(mx, log_mu(i) + (f(i) - cost(i, j)) / eps);
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += std::exp(log_mu(i) + (f(i) - cost(i, j)) / eps - mx);
    g(j) = -eps * (mx + std::log(s));
  }
}

Mat assemble_plan(const Mat& cost, const Vec& log_mu, const Vec& log_nu, const Vec& f,
                  const Vec& g, double eps) {
  Mat plan(cost.rows(), cost.cols());
  for (Index j = 0; j < cost.cols(); ++j)
    for (Index i = 0; i < cost.rows(); ++i)
      plan(i, j) = std::exp(log_mu(i) + log_nu(j) + (f(i) + g(j) - cost(i, j)) / eps);
  return plan;
}

double marginal_violation(const Mat& plan, const Vec& mu, const Vec& nu) {
  const double rows = (plan.rowwise().sum() - mu).cwiseAbs().maxCoeff();
  const double cols = (plan.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

}  // namespace

CostMatrix::CostMatrix(Mat values) : values_(std::move(values)) {
  if (values_.hasNaN()) throw std::invalid_argument("cost matrix contains NaN");
  if (!values_.allFinite()) throw std::invalid_argument("cost matrix contains infinite entries");
  if ((values_.array() < 0.0).any()) throw std::invalid_argument("cost matrix has negative entries");
}

CostMatrix CostMatrix::squared_euclidean(const ParticleBatch& a, const ParticleBatch& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("dimension mismatch in cost matrix");
  Mat c(a.rows(), b.rows());
  for (Index j = 0; j < b.rows(); ++j)
    for (Index i = 0; i < a.rows(); ++i) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return CostMatrix(std::move(c));
}

double entropic_objective(const Mat& cost, const Mat& plan, const Vec& mu, const Vec& nu,
                          double epsilon) {
  double linear = 0.0;
  double kl = 0.0;
  for (Index j = 0; j < plan.cols(); ++j) {
    for (Index i = 0; i < plan.rows(); ++i) {
      const double p = plan(i, j);
      linear += cost(i, j) * p;
      if (p > 0.0) kl += p * std::log(p / (mu(i) * nu(j)));
    }
  }
  return linear + epsilon * kl;
}

TransportPlan sinkhorn_plan(const CostMatrix& cost, const Vec& mu, const Vec& nu,
                            const SinkhornOptions& options, std::vector<double>* objective_trace) {
  const Mat& c = cost.values();
  if (mu.size() != c.rows() || nu.size() != c.cols())
    throw std::invalid_argument("marginal sizes do not match the cost matrix");
  check_probability_vector(mu, "mu");
  check_probability_vector(nu, "nu");
  if (!(options.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (options.max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");

  const Vec log_mu = safe_log(mu);
  const Vec log_nu = safe_log(nu);
  Vec f = Vec::Zero(c.rows());
  Vec g = Vec::Zero(c.cols());

  std::vector<double> schedule;
  if (options.epsilon_scaling && options.scaling_start > 1.0) {
    for (double e = options.epsilon * options.scaling_start; e > options.epsilon; e *= 0.5)
      schedule.push_back(e);
  }
  schedule.push_back(options.epsilon);

  TransportPlan result;
  result.row_marginal = mu;
  result.col_marginal = nu;

  for (std::size_t level = 0; level < schedule.size(); ++level) {
    const double eps = schedule[level];
    const bool final_level = level + 1 == schedule.size();
    const double level_tol = final_level ? options.tol : std::max(options.tol, 1e-6);
    for (int it = 0; it < options.max_iter; ++it) {
      update_rows(c, log_nu, g, eps, f);
      update_cols(c, log_mu, f, eps, g);
      ++result.iterations;
      // Columns are exact after the column update; rows carry the violation.
      double row_err = 0.0;
      for (Index i = 0; i < c.rows(); ++i) {
        double s = 0.0;
        for (Index j = 0; j < c.cols(); ++j)
          s += std::exp(log_mu(i) + log_nu(j) + (f(i) + g(j) - c(i, j)) / eps);
        row_err = std::max(row_err, std::abs(s - mu(i)));
      }
      if (final_level && objective_trace != nullptr) {
        // Dual value; each half-sweep maximizes it exactly over one block.
        objective_trace->push_back(f.dot(mu) + g.dot(nu) -
                                   eps * assemble_plan(c, log_mu, log_nu, f, g, eps).sum() + eps);
      }
      if (row_err <= level_tol) {
        if (final_level) result.converged = true;
        break;
      }
    }
  }

  result.plan = assemble_plan(c, log_mu, log_nu, f, g, options.epsilon);
  result.marginal_error = marginal_violation(result.plan, mu, nu);
  if (!result.converged)
    spdlog::warn("sinkhorn did not converge after {} sweeps (marginal error {:.3e})",
                 result.iterations, result.marginal_error);
  return result;
}

std::vector<std::pair<Index, Index>> sample_pairs_from_plan(const Mat& plan, std::size_t count,
                                                            Rng& rng) {
  if (plan.size() == 0) throw std::invalid_argument("empty plan");
  if (!plan.allFinite() || (plan.array() < 0.0).any())
    throw std::invalid_argument("plan entries must be finite and nonnegative");
  if (!(plan.sum() > 0.0)) throw std::invalid_argument("plan has zero total mass");

  std::discrete_distribution<Index> pick(plan.data(), plan.data() + plan.size());
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const Index flat = pick(rng);  // column-major storage
    pairs.emplace_back(flat % plan.rows(), flat / plan.rows());
  }
  return pairs;
}

namespace {

ParticleBatch subsample_rows(const ParticleBatch& x, Index size, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  ParticleBatch out(size, x.cols());
  for (Index i = 0; i < size; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

double exact_w2(const ParticleBatch& a, const ParticleBatch& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("exact_w2 requires equal sample counts; subsample first");
  if (a.cols() != b.cols()) throw std::invalid_argument("exact_w2 dimension mismatch");
  if (a.rows() == 0) throw std::invalid_argument("exact_w2 on empty batches");
  if (a.rows() > kW2MaxSize) throw std::invalid_argument("exact_w2 supports at most 4096 samples");
  if (a.rows() > kW2SubsampleSize) {
    return exact_w2(subsample_rows(a, kW2SubsampleSize, 0x5eedA),
                    subsample_rows(b, kW2SubsampleSize, 0x5eedB));
  }
  const CostMatrix cost = CostMatrix::squared_euclidean(a, b);
  const Assignment sol = solve_assignment(cost.values());
  return std::sqrt(std::max(0.0, sol.total_cost / static_cast<double>(a.rows())));
}

double entropic_w2(const ParticleBatch& a, const ParticleBatch& b, double epsilon) {
  const CostMatrix cost = CostMatrix::squared_euclidean(a, b);
  const Vec mu = Vec::Constant(a.rows(), 1.0 / static_cast<double>(a.rows()));
  const Vec nu = Vec::Constant(b.rows(), 1.0 / static_cast<double>(b.rows()));
  SinkhornOptions opts;
  opts.epsilon = epsilon;
  opts.tol = 1e-7;
  const TransportPlan plan = sinkhorn_plan(cost, mu, nu, opts);
  return std::sqrt(std::max(0.0, cost.values().cwiseProduct(plan.plan).sum()));
}

namespace {

// Distance to the k-th nearest row of `pool` from `query`, optionally
// skipping row `skip` of the pool.
double kth_neighbour_distance(const ParticleBatch& pool, const Eigen::RowVectorXd& query, int k,
                              Index skip) {
  std::vector<double> best(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
  for (Index r = 0; r < pool.rows(); ++r) {
    if (r == skip) continue;
    const double d2 = (pool.row(r) - query).squaredNorm();
    if (d2 < best.back()) {
      auto pos = std::upper_bound(best.begin(), best.end(), d2);
      std::move_backward(pos, best.end() - 1, best.end());
      *pos = d2;
    }
  }
  return std::sqrt(best.back());
}

}  // namespace

double knn_kl(const ParticleBatch& p_samples, const ParticleBatch& q_samples, int k) {
  if (k < 1) throw std::invalid_argument("knn_kl requires k >= 1");
  if (p_samples.cols() != q_samples.cols()) throw std::invalid_argument("knn_kl dimension mismatch");
  if (p_samples.rows() < k + 1 || q_samples.rows() < k + 1)
    throw std::invalid_argument("knn_kl needs at least k+1 samples in each batch");

  constexpr double kFloor = 1e-12;
  const Index n = p_samples.rows();
  const Index m = q_samples.rows();
  const double d = static_cast<double>(p_samples.cols());

  std::vector<double> terms(static_cast<std::size_t>(n));
  int floored = 0;
#pragma omp parallel for schedule(static) reduction(+ : floored)
  for (Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd x = p_samples.row(i);
    double rho = kth_neighbour_distance(p_samples, x, k, i);
    double nu = kth_neighbour_distance(q_samples, x, k, -1);
    if (rho < kFloor) {
      rho = kFloor;
      ++floored;
    }
    if (nu < kFloor) {
      nu = kFloor;
      ++floored;
    }
    terms[static_cast<std::size_t>(i)] = std::log(nu / rho);
  }
  if (floored > 0)
    spdlog::warn("knn_kl: {} zero neighbour distances (duplicate points) floored at 1e-12", floored);

  double sum = 0.0;
  for (double t : terms) sum += t;
  return d * sum / static_cast<double>(n) +
         std::log(static_cast<double>(m) / static_cast<double>(n - 1));
}

}  // namespace fsbm::transport
