#include "fsbm/spline.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>
#include <vector>

namespace fsbm::spline {

NaturalCubicBasis::NaturalCubicBasis(Vec nodes) : nodes_(std::move(nodes)) {
  const Index n = nodes_.size();
  if (n < 2) throw std::invalid_argument("spline needs at least two nodes");
  for (Index k = 1; k < n; ++k)
    if (!(nodes_(k) > nodes_(k - 1))) throw std::invalid_argument("spline nodes must increase");

  s_ = Mat::Zero(n, n);
  if (n == 2) return;

  // Interior second derivatives M_1..M_{n-2} solve A M = D y.
  const Index m = n - 2;
  Mat a = Mat::Zero(m, m);
  Mat d = Mat::Zero(m, n);
  for (Index r = 0; r < m; ++r) {
    const Index j = r + 1;
    const double h0 = nodes_(j) - nodes_(j - 1);
    const double h1 = nodes_(j + 1) - nodes_(j);
    a(r, r) = 2.0 * (h0 + h1);
    if (r > 0) a(r, r - 1) = h0;
    if (r + 1 < m) a(r, r + 1) = h1;
    d(r, j - 1) = 6.0 / h0;
    d(r, j) = -6.0 / h0 - 6.0 / h1;
    d(r, j + 1) = 6.0 / h1;
  }
  s_.middleRows(1, m) = a.partialPivLu().solve(d);
}

Index NaturalCubicBasis::interval(double t) const {
  const auto* begin = nodes_.data();
  const auto* end = nodes_.data() + nodes_.size();
  const Index hi = std::upper_bound(begin, end, t) - begin;
  return std::clamp<Index>(hi - 1, 0, nodes_.size() - 2);
}

void NaturalCubicBasis::weights(double t, Eigen::Ref<Vec> w, Eigen::Ref<Vec> dw) const {
  const Index j = interval(t);
  const double h = nodes_(j + 1) - nodes_(j);
  const double A = (nodes_(j + 1) - t) / h;
  const double B = (t - nodes_(j)) / h;
  const double ca = (A * A * A - A) * h * h / 6.0;
  const double cb = (B * B * B - B) * h * h / 6.0;
  const double da = -(3.0 * A * A - 1.0) * h / 6.0;
  const double db = (3.0 * B * B - 1.0) * h / 6.0;
  w = ca * s_.row(j).transpose() + cb * s_.row(j + 1).transpose();
  dw = da * s_.row(j).transpose() + db * s_.row(j + 1).transpose();
  w(j) += A;
  w(j + 1) += B;
  dw(j) -= 1.0 / h;
  dw(j + 1) += 1.0 / h;
}

void NaturalCubicBasis::evaluate(const Mat& values, const Mat& second, double t,
                                 Eigen::Ref<Eigen::RowVectorXd> y,
                                 Eigen::Ref<Eigen::RowVectorXd> dy) const {
  const Index j = interval(t);
  const double h = nodes_(j + 1) - nodes_(j);
  const double A = (nodes_(j + 1) - t) / h;
  const double B = (t - nodes_(j)) / h;
  y = A * values.row(j) + B * values.row(j + 1) +
      ((A * A * A - A) * second.row(j) + (B * B * B - B) * second.row(j + 1)) * (h * h / 6.0);
  dy = (values.row(j + 1) - values.row(j)) / h -
       (3.0 * A * A - 1.0) / 6.0 * h * second.row(j) +
       (3.0 * B * B - 1.0) / 6.0 * h * second.row(j + 1);
}

Quadrature graded_gauss_legendre(double a, double b, double coarsest) {
  if (!(b > a)) throw std::invalid_argument("quadrature interval is empty");
  static constexpr std::array<double, 5> x = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                              0.5384693101056831, 0.9061798459386640};
  static constexpr std::array<double, 5> w = {0.2369268850561891, 0.4786286704993665,
                                              0.5688888888888889, 0.4786286704993665,
                                              0.2369268850561891};
  const double mid = 0.5 * (a + b);
  const double half = mid - a;
  const double first = std::min(coarsest, half);

  // Breakpoints measured from the nearer end grow by 1.5x, then uniform.
  std::vector<double> offsets = {0.0};
  double step = std::min(first, std::max(half * 1e-3, 1e-300));
  double pos = 0.0;
  while (pos + step < half) {
    pos += step;
    offsets.push_back(pos);
    step = std::min(1.5 * step, coarsest);
  }
  offsets.push_back(half);

  std::vector<double> breaks;
  for (double o : offsets) breaks.push_back(a + o);
  for (auto it = offsets.rbegin() + 1; it != offsets.rend(); ++it) breaks.push_back(b - *it);

  Quadrature q;
  const Index panels = static_cast<Index>(breaks.size()) - 1;
  q.nodes.resize(panels * 5);
  q.weights.resize(panels * 5);
  for (Index p = 0; p < panels; ++p) {
    const double lo = breaks[static_cast<std::size_t>(p)];
    const double hi = breaks[static_cast<std::size_t>(p + 1)];
    const double c = 0.5 * (lo + hi);
    const double r = 0.5 * (hi - lo);
    for (std::size_t k = 0; k < 5; ++k) {
      q.nodes(p * 5 + static_cast<Index>(k)) = c + r * x[k];
      q.weights(p * 5 + static_cast<Index>(k)) = r * w[k];
    }
  }
  return q;
}

}  // namespace fsbm::spline
