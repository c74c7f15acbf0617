#include "fsbm/paths.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace fsbm::paths {

namespace {

Vec node_times(const Vec& knot_times) {
  Vec nodes(knot_times.size() + 2);
  nodes(0) = 0.0;
  nodes.segment(1, knot_times.size()) = knot_times;
  nodes(nodes.size() - 1) = 1.0;
  return nodes;
}

Mat stack_values(const Vec& x0, const Mat& knots, const Vec& x1) {
  Mat y(knots.rows() + 2, x0.size());
  y.row(0) = x0.transpose();
  y.middleRows(1, knots.rows()) = knots;
  y.row(y.rows() - 1) = x1.transpose();
  return y;
}

Vec stack_rho(const Vec& rho) {
  Vec r(rho.size() + 2);
  r(0) = 1.0;
  r.segment(1, rho.size()) = rho;
  r(r.size() - 1) = 1.0;
  return r;
}

// sigma = base * rho with base = nu sqrt(t(1-t)); derivatives w.r.t. rho
// flow through base and its time derivative.
struct SigmaJet {
  double sigma = 0.0;
  double dsigma = 0.0;
  double base = 0.0;
  double dbase = 0.0;
  bool clamped = false;
};

SigmaJet sigma_jet(double t, double nu, double rho, double drho) {
  SigmaJet j;
  const double s = std::sqrt(t * (1.0 - t));
  j.base = nu * s;
  j.dbase = nu * (1.0 - 2.0 * t) / (2.0 * s);
  j.sigma = j.base * rho;
  j.dsigma = j.dbase * rho + j.base * drho;
  if (j.sigma < kSigmaFloor) {
    j.sigma = kSigmaFloor;
    j.dsigma = 0.0;
    j.clamped = true;
  }
  return j;
}

void check_open_time(double t) {
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("drift is singular outside 0 < t < 1");
}

}  // namespace

Vec uniform_knot_times(Index k) {
  Vec t(k);
  for (Index i = 0; i < k; ++i) t(i) = static_cast<double>(i + 1) / static_cast<double>(k + 1);
  return t;
}

ConditionalPath::ConditionalPath(Vec x0, Vec x1, Vec knot_times, Mat mean_knots, Vec std_knots,
                                 double nu)
    : x0_(std::move(x0)),
      x1_(std::move(x1)),
      knot_times_(std::move(knot_times)),
      mean_knots_(std::move(mean_knots)),
      std_knots_(std::move(std_knots)),
      nu_(nu) {
  const Index k = knot_times_.size();
  if (!(nu_ > 0.0)) throw std::invalid_argument("nu must be positive");
  if (x0_.size() != x1_.size() || x0_.size() == 0)
    throw std::invalid_argument("path endpoints must have equal nonzero dimension");
  if (k > kMaxKnots) throw std::invalid_argument("at most 30 interior knots");
  if (mean_knots_.rows() != k || (k > 0 && mean_knots_.cols() != x0_.size()))
    throw std::invalid_argument("mean_knots must be K x d");
  if (k == 0) mean_knots_.resize(0, x0_.size());
  if (std_knots_.size() != k) throw std::invalid_argument("std_knots must have K entries");
  for (Index i = 0; i < k; ++i) {
    if (!(knot_times_(i) > 0.0 && knot_times_(i) < 1.0))
      throw std::invalid_argument("knot times must lie in (0,1)");
    if (i > 0 && !(knot_times_(i) > knot_times_(i - 1)))
      throw std::invalid_argument("knot times must increase");
    if (!(std_knots_(i) > 0.0)) throw std::invalid_argument("std knots must be positive");
  }
  if (!mean_knots_.allFinite() || !x0_.allFinite() || !x1_.allFinite())
    throw std::invalid_argument("path control points must be finite");

  rho_knots_.resize(k);
  for (Index i = 0; i < k; ++i) {
    const double t = knot_times_(i);
    rho_knots_(i) = std_knots_(i) / (nu_ * std::sqrt(t * (1.0 - t)));
  }
  basis_ = std::make_shared<const spline::NaturalCubicBasis>(node_times(knot_times_));
  build_from_rho();
}

void ConditionalPath::build_from_rho() {
  mean_values_ = stack_values(x0_, mean_knots_, x1_);
  mean_second_ = basis_->second_derivative_operator() * mean_values_;
  rho_values_ = stack_rho(rho_knots_);
  rho_second_ = basis_->second_derivative_operator() * rho_values_;
}

ConditionalPath ConditionalPath::with_controls(const Mat& mean_knots, const Vec& rho_knots) const {
  if (mean_knots.rows() != knots() || mean_knots.cols() != dim() || rho_knots.size() != knots())
    throw std::invalid_argument("control point shapes do not match the path");
  if ((rho_knots.array() <= 0.0).any()) throw std::invalid_argument("rho knots must be positive");
  ConditionalPath out = *this;
  out.mean_knots_ = mean_knots;
  out.rho_knots_ = rho_knots;
  for (Index i = 0; i < knots(); ++i) {
    const double t = knot_times_(i);
    out.std_knots_(i) = rho_knots(i) * nu_ * std::sqrt(t * (1.0 - t));
  }
  out.build_from_rho();
  return out;
}

SplineState spline_eval(const ConditionalPath& path, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("spline_eval: t outside [0,1]");
  SplineState s;
  Eigen::RowVectorXd y(path.dim());
  Eigen::RowVectorXd dy(path.dim());
  path.basis().evaluate(path.mean_values(), path.mean_second(), t, y, dy);
  s.mean = y.transpose();
  s.dmean = dy.transpose();
  if (t == 0.0 || t == 1.0) {
    s.mean = t == 0.0 ? path.x0() : path.x1();
    s.sigma = 0.0;
    s.dsigma = t == 0.0 ? std::numeric_limits<double>::infinity()
                        : -std::numeric_limits<double>::infinity();
    return s;
  }
  Eigen::RowVectorXd r(1);
  Eigen::RowVectorXd dr(1);
  path.basis().evaluate(path.rho_values(), path.rho_second(), t, r, dr);
  const SigmaJet j = sigma_jet(t, path.nu(), r(0), dr(0));
  s.sigma = j.sigma;
  s.dsigma = j.dsigma;
  return s;
}

ConditionalPath brownian_bridge_path(const Vec& x0, const Vec& x1, double nu, Index k) {
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be positive");
  const Vec times = uniform_knot_times(k);
  Mat mean(k, x0.size());
  Vec stds(k);
  for (Index i = 0; i < k; ++i) {
    const double t = times(i);
    mean.row(i) = ((1.0 - t) * x0 + t * x1).transpose();
    stds(i) = nu * std::sqrt(t * (1.0 - t));
  }
  return ConditionalPath(x0, x1, times, mean, stds, nu);
}

PathSample sample_conditional(const ConditionalPath& path, double t, Rng& rng) {
  check_open_time(t);
  const SplineState s = spline_eval(path, t);
  PathSample out;
  out.t = t;
  out.z = normal_matrix(path.dim(), 1, rng);
  out.x_t = s.mean + s.sigma * out.z;
  return out;
}

Vec conditional_drift(const ConditionalPath& path, const Vec& x_t, double t) {
  check_open_time(t);
  const SplineState s = spline_eval(path, t);
  const double nu2 = path.nu() * path.nu();
  const double coef = s.dsigma / s.sigma - nu2 / (2.0 * s.sigma * s.sigma);
  return s.dmean + coef * (x_t - s.mean);
}

Vec reverse_conditional_drift(const ConditionalPath& path, const Vec& x_t, double t) {
  check_open_time(t);
  const SplineState s = spline_eval(path, t);
  const double nu2 = path.nu() * path.nu();
  const double coef = s.dsigma / s.sigma - nu2 / (2.0 * s.sigma * s.sigma);
  const Vec u = s.dmean + coef * (x_t - s.mean);
  return -u + nu2 * (s.mean - x_t) / (s.sigma * s.sigma);
}

ObjectiveEstimate conditional_objective(const ConditionalPath& path,
                                        const guidance::GuidanceContext* guidance, Index keypoint,
                                        double sigma, int mc_times, int mc_samples, Rng& rng,
                                        double t_min) {
  if (mc_times < 1 || mc_samples < 1) throw std::invalid_argument("mc counts must be >= 1");
  std::uniform_real_distribution<double> uniform(t_min, 1.0 - t_min);
  const double nu2 = path.nu() * path.nu();
  const bool guided = guidance != nullptr && guidance->alpha() > 0.0;
  double c0 = 0.0;
  if (guided)
    c0 = (path.x0() - guidance->keypoints().source_points.row(keypoint).transpose()).lpNorm<1>();

  double sum = 0.0;
  double sum_sq = 0.0;
  const int total = mc_times * mc_samples;
  for (int a = 0; a < mc_times; ++a) {
    const double t = uniform(rng);
    const SplineState s = spline_eval(path, t);
    const double coef = s.dsigma / s.sigma - nu2 / (2.0 * s.sigma * s.sigma);
    Vec kp;
    if (guided) kp = guidance::keypoint_position(*guidance, keypoint, t);
    for (int b = 0; b < mc_samples; ++b) {
      const Vec z = normal_matrix(path.dim(), 1, rng);
      const Vec x = s.mean + s.sigma * z;
      const Vec u = s.dmean + coef * s.sigma * z;
      double v = 0.5 * u.squaredNorm();
      if (guided) {
        const guidance::GuidanceTerms g = guidance::guidance_terms(x, kp, c0, guidance->alpha());
        v += std::abs(u.dot(g.grad)) + 0.5 * sigma * sigma * g.laplacian;
      }
      sum += v;
      sum_sq += v * v;
    }
  }
  ObjectiveEstimate est;
  est.mean = sum / total;
  const double var = total > 1 ? std::max(0.0, (sum_sq - total * est.mean * est.mean) / (total - 1)) : 0.0;
  est.std_error = std::sqrt(var / total);
  return est;
}

SplineObjective::SplineObjective(SplineProblem problem, const Vec& knot_times)
    : problem_(std::move(problem)), basis_(node_times(knot_times)) {
  if (!(problem_.nu > 0.0)) throw std::invalid_argument("nu must be positive");
  if (!(problem_.t_min > 0.0 && problem_.t_min < 0.5)) throw std::invalid_argument("t_min in (0, 0.5)");
  const spline::Quadrature q = spline::graded_gauss_legendre(problem_.t_min, 1.0 - problem_.t_min);
  quad_t_ = q.nodes;
  quad_w_ = q.weights / (1.0 - 2.0 * problem_.t_min);
  const Index n = basis_.size();
  phi_.resize(quad_t_.size(), n);
  dphi_.resize(quad_t_.size(), n);
  Vec w(n);
  Vec dw(n);
  for (Index i = 0; i < quad_t_.size(); ++i) {
    basis_.weights(quad_t_(i), w, dw);
    phi_.row(i) = w.transpose();
    dphi_.row(i) = dw.transpose();
  }
  if (guided()) {
    keypoint_reference_ =
        (problem_.x0 -
         problem_.guidance->keypoints().source_points.row(problem_.keypoint).transpose())
            .lpNorm<1>();
  }
}

bool SplineObjective::guided() const {
  return problem_.guidance != nullptr && problem_.guidance->alpha() > 0.0;
}

SplineObjective::Draws SplineObjective::draw(int mc_times, int mc_samples, Rng& rng) const {
  if (mc_times < 1 || mc_samples < 1) throw std::invalid_argument("mc counts must be >= 1");
  Draws d;
  const Index dim = problem_.x0.size();
  const double lo = problem_.t_min;
  const double width = (1.0 - 2.0 * lo) / mc_times;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  d.t.resize(mc_times);
  d.keypoint_at_t.resize(guided() ? mc_times : 0, dim);
  const int half = (mc_samples + 1) / 2;
  for (int a = 0; a < mc_times; ++a) {
    d.t(a) = lo + width * (a + unit(rng));
    if (guided())
      d.keypoint_at_t.row(a) =
          guidance::keypoint_position(*problem_.guidance, problem_.keypoint, d.t(a)).transpose();
    Mat z(2 * half, dim);
    fill_normal(z.topRows(half), rng);
    z.bottomRows(half) = -z.topRows(half);
    d.z.push_back(std::move(z));
  }
  return d;
}

double SplineObjective::evaluate(const Mat& mean_knots, const Vec& rho_knots, const Draws& draws,
                                 Mat* grad_mean, Vec* grad_rho) const {
  const Index dim = problem_.x0.size();
  const Index n = basis_.size();
  const double nu = problem_.nu;
  const double nu2 = nu * nu;
  const bool want_grad = grad_mean != nullptr || grad_rho != nullptr;

  const Mat y = stack_values(problem_.x0, mean_knots, problem_.x1);
  const Vec r = stack_rho(rho_knots);
  Mat gy = Mat::Zero(n, dim);
  Vec gr = Vec::Zero(n);

  // Kinetic part, expectation over z in closed form:
  // 1/2 |I'|^2 + d/2 (sigma' - nu^2 / (2 sigma))^2.
  const Mat dmean = dphi_ * y;
  const Vec rho_q = phi_ * r;
  const Vec drho_q = dphi_ * r;
  double value = 0.0;
  const double dd = static_cast<double>(dim);
  for (Index q = 0; q < quad_t_.size(); ++q) {
    const SigmaJet j = sigma_jet(quad_t_(q), nu, rho_q(q), drho_q(q));
    const double w = j.dsigma - nu2 / (2.0 * j.sigma);
    const double wq = quad_w_(q);
    value += wq * (0.5 * dmean.row(q).squaredNorm() + 0.5 * dd * w * w);
    if (want_grad) {
      gy.noalias() += wq * dphi_.row(q).transpose() * dmean.row(q);
      if (!j.clamped) {
        const double k = nu2 / (2.0 * j.sigma * j.sigma);
        gr += (wq * dd * w) *
              ((j.dbase + k * j.base) * phi_.row(q).transpose() + j.base * dphi_.row(q).transpose());
      }
    }
  }

  if (problem_.state_cost) {
    const Mat mean_q = phi_ * y;
    Vec grad_x(dim);
    for (Index q = 0; q < quad_t_.size(); ++q) {
      const Vec x = mean_q.row(q).transpose();
      const double c = problem_.state_cost(x, want_grad ? &grad_x : nullptr);
      value += quad_w_(q) * c;
      if (want_grad && c != 0.0) gy.noalias() += quad_w_(q) * phi_.row(q).transpose() * grad_x.transpose();
    }
  }

  if (guided()) {
    const double alpha = problem_.guidance->alpha();
    const double sig2 = problem_.sigma * problem_.sigma;
    const double c0 = keypoint_reference_;
    Index total = 0;
    for (const Mat& z : draws.z) total += z.rows();
    const double inv = 1.0 / static_cast<double>(total);

    Vec phi(n);
    Vec dphi(n);
    Vec diff(dim);
    Vec sg(dim);
    Vec grad_g(dim);
    Vec x(dim);
    Vec u(dim);
    for (Index a = 0; a < draws.t.size(); ++a) {
      const double t = draws.t(a);
      basis_.weights(t, phi, dphi);
      const Vec mean = y.transpose() * phi;
      const Vec vel = y.transpose() * dphi;
      const SigmaJet j = sigma_jet(t, nu, r.dot(phi), r.dot(dphi));
      const double w = j.dsigma - nu2 / (2.0 * j.sigma);
      const double k = nu2 / (2.0 * j.sigma * j.sigma);
      const Vec kp = draws.keypoint_at_t.row(a).transpose();
      const Mat& zs = draws.z[static_cast<std::size_t>(a)];
      for (Index b = 0; b < zs.rows(); ++b) {
        const auto z = zs.row(b).transpose();
        x = mean + j.sigma * z;
        u = vel + w * z;
        diff = x - kp;
        int nonzero = 0;
        for (Index c = 0; c < dim; ++c) {
          sg(c) = diff(c) > 0.0 ? 1.0 : (diff(c) < 0.0 ? -1.0 : 0.0);
          if (sg(c) != 0.0) ++nonzero;
        }
        const double gap = diff.lpNorm<1>() - c0;
        grad_g = (2.0 * alpha * gap) * sg;
        const double proj = u.dot(grad_g);
        value += inv * (std::abs(proj) + sig2 * alpha * nonzero);
        if (!want_grad || proj == 0.0) continue;
        const double s = proj > 0.0 ? inv : -inv;
        const double sgu = sg.dot(u);
        // d(proj)/dY_j = phi'_j grad G + phi_j * 2 alpha (sg.u) sg
        gy.noalias() += s * (dphi * grad_g.transpose() + (2.0 * alpha * sgu) * phi * sg.transpose());
        if (!j.clamped) {
          const double gz = z.dot(grad_g);
          const double sgz = sg.dot(z);
          // dw/drho = (dbase + k base) phi + base phi',  dsigma/drho = base phi
          gr += s * (gz * ((j.dbase + k * j.base) * phi + j.base * dphi) +
                     (2.0 * alpha * sgu * sgz * j.base) * phi);
        }
      }
    }
  }

  const Index kk = n - 2;
  if (grad_mean != nullptr) *grad_mean = gy.middleRows(1, kk);
  if (grad_rho != nullptr) *grad_rho = gr.segment(1, kk);
  return value;
}

SplineResult optimize_spline(const SplineProblem& problem, const SplineOptions& options, Rng& rng) {
  if (options.knots > kMaxKnots) throw std::invalid_argument("at most 30 interior knots");
  if (options.steps < 0) throw std::invalid_argument("steps must be >= 0");
  ConditionalPath init = brownian_bridge_path(problem.x0, problem.x1, problem.nu, options.knots);
  if (options.initial_mean.size() > 0) init = init.with_controls(options.initial_mean, init.rho_knots());

  SplineResult result{init};
  const SplineObjective objective(problem, init.knot_times());
  const bool active = objective.guided() || static_cast<bool>(problem.state_cost);
  if (!active && options.skip_when_unguided) {
    const SplineObjective::Draws none;
    result.initial_objective = objective.evaluate(init.mean_knots(), init.rho_knots(), none);
    result.final_objective = result.initial_objective;
    return result;
  }

  const SplineObjective::Draws check = objective.draw(options.check_times, options.check_samples, rng);
  result.initial_objective = objective.evaluate(init.mean_knots(), init.rho_knots(), check);
  const double limit = 10.0 * std::abs(result.initial_objective) + 1e-12;

  Mat mean = init.mean_knots();
  Vec rho = init.rho_knots();
  Mat m_mean = Mat::Zero(mean.rows(), mean.cols());
  Mat v_mean = m_mean;
  Vec m_rho = Vec::Zero(rho.size());
  Vec v_rho = m_rho;
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  Mat g_mean;
  Vec g_rho;
  for (int step = 0; step < options.steps; ++step) {
    const SplineObjective::Draws draws = objective.draw(options.mc_times, options.mc_samples, rng);
    const double value = objective.evaluate(mean, rho, draws, &g_mean, &g_rho);
    if (!std::isfinite(value) || value > limit || !g_mean.allFinite() || !g_rho.allFinite()) {
      result.diverged = true;
      result.final_objective = value;
      result.steps_taken = step;
      return result;
    }
    const double lr =
        options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / std::max(1, options.steps)));
    const double c1 = 1.0 - std::pow(b1, step + 1);
    const double c2 = 1.0 - std::pow(b2, step + 1);
    m_mean = b1 * m_mean + (1.0 - b1) * g_mean;
    v_mean = b2 * v_mean + (1.0 - b2) * g_mean.cwiseProduct(g_mean);
    m_rho = b1 * m_rho + (1.0 - b1) * g_rho;
    v_rho = b2 * v_rho + (1.0 - b2) * g_rho.cwiseProduct(g_rho);
    mean.array() -= lr * (m_mean.array() / c1) / ((v_mean.array() / c2).sqrt() + eps);
    rho.array() -= lr * (m_rho.array() / c1) / ((v_rho.array() / c2).sqrt() + eps);
    rho = rho.cwiseMax(1e-3);
    result.steps_taken = step + 1;
  }

  const double final_value = objective.evaluate(mean, rho, check);
  if (final_value <= result.initial_objective) {
    result.path = init.with_controls(mean, rho);
    result.final_objective = final_value;
  } else {
    result.final_objective = result.initial_objective;
  }
  return result;
}

}  // namespace fsbm::paths
