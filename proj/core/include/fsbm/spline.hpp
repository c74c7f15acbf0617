#pragma once

// Natural cubic splines expressed as a linear map from node values, so that
// both the value and its time derivative are inner products phi(t).y.

#include "fsbm/types.hpp"

namespace fsbm::spline {

class NaturalCubicBasis {
 public:
  /// nodes: strictly increasing, at least two entries.
  explicit NaturalCubicBasis(Vec nodes);

  Index size() const { return nodes_.size(); }
  const Vec& nodes() const { return nodes_; }

  /// Maps node values to second derivatives at the nodes (zero at both ends).
  const Mat& second_derivative_operator() const { return s_; }

  /// Weights with y(t) = w.y and y'(t) = dw.y for any node values y.
  void weights(double t, Eigen::Ref<Vec> w, Eigen::Ref<Vec> dw) const;

  /// Direct evaluation given node values (rows) and their second derivatives.
  void evaluate(const Mat& values, const Mat& second, double t, Eigen::Ref<Eigen::RowVectorXd> y,
                Eigen::Ref<Eigen::RowVectorXd> dy) const;

  /// Index j of the interval [nodes[j], nodes[j+1]] containing t (clamped).
  Index interval(double t) const;

 private:
  Vec nodes_;
  Mat s_;
};

struct Quadrature {
  Vec nodes;
  Vec weights;
};

/// Composite 5-point Gauss-Legendre rule on [a, b] whose panels shrink
/// geometrically towards both ends; suited to integrands with
/// inverse-power growth at the endpoints.
Quadrature graded_gauss_legendre(double a, double b, double coarsest = 0.0625);

}  // namespace fsbm::spline
