#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "pdemorph/expr.hpp"
#include "pdemorph/sampling.hpp"

namespace pdemorph {

using Point = std::vector<double>;

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  bool periodic = false;  // identify lo with hi; period = hi - lo
};

/// Coordinate chart: named coordinates over a box, minus small neighborhoods
/// of explicitly excluded points.
struct Chart {
  std::string name;
  std::vector<std::string> coords;
  std::vector<Interval> ranges;
  std::vector<Point> excluded;
  double excluded_radius = 1e-3;

  std::size_t dim() const { return coords.size(); }
  void validate() const;  // throws DomainError

  /// Coordinate distance that accounts for periodic wrap.
  double wrap_distance(const Point& a, const Point& b) const;

  bool is_excluded(const Point& x) const;
  bool contains(const Point& x) const;
  Bindings bind(const Point& x) const;
};

/// Draws sample points from a chart's box, skipping excluded neighborhoods.
/// shrink pulls samples away from non-periodic box edges by that fraction
/// of each range.
class ChartSampler {
 public:
  ChartSampler(const Chart& chart, unsigned seed, double shrink = 0.0);
  Point next();

 private:
  const Chart* chart_;
  HaltonSampler halton_;
  std::vector<double> lo_, hi_;
};

struct VectorField {
  Chart chart;
  std::vector<Expr> comp;  // one Expr per coordinate

  void validate() const;
  Eigen::VectorXd value(const Point& x) const;
};

/// Riemannian metric with symbolic entries. Entries are stored as the full
/// symmetric matrix; construction rejects structurally asymmetric input.
class MetricField {
 public:
  MetricField(Chart chart, std::vector<std::vector<Expr>> g);

  const Chart& chart() const { return chart_; }
  std::size_t dim() const { return chart_.dim(); }
  const Expr& entry(std::size_t i, std::size_t j) const;

  Eigen::MatrixXd value(const Point& x) const;
  double det_value(const Point& x) const;

  /// Checks positive definiteness at sampled points; throws DomainError on
  /// the first failure, naming the point.
  void check_positive_definite(unsigned seed = 42,
                               std::size_t samples = 50) const;

 private:
  Chart chart_;
  std::vector<std::vector<Expr>> g_;
};

/// Numeric inverse of g at a point, with a residual guard:
/// ||g * ginv - I||_inf must stay below 1e-10, else DomainError.
Eigen::MatrixXd metric_inverse(const MetricField& g, const Point& x);

/// Pointwise inner product g(v, w) as a symbolic expression.
Expr inner(const MetricField& g, const VectorField& v, const VectorField& w);

}  // namespace pdemorph
