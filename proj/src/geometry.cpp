#include "pdemorph/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "pdemorph/errors.hpp"

namespace pdemorph {

namespace {

std::string point_to_string(const Point& x) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i) os << ", ";
    os << x[i];
  }
  os << ")";
  return os.str();
}

}  // namespace

void Chart::validate() const {
  if (coords.empty()) throw DomainError("chart '" + name + "' has no coordinates");
  if (ranges.size() != coords.size()) {
    throw DomainError("chart '" + name + "' has " + std::to_string(ranges.size()) +
                      " ranges for " + std::to_string(coords.size()) + " coordinates");
  }
  std::set<std::string> seen;
  for (const auto& c : coords) {
    if (c.empty()) throw DomainError("chart '" + name + "' has an empty coordinate name");
    if (!seen.insert(c).second) {
      throw DomainError("chart '" + name + "' repeats coordinate '" + c + "'");
    }
  }
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (!(ranges[i].lo < ranges[i].hi)) {
      throw DomainError("chart '" + name + "' range for '" + coords[i] +
                        "' is empty");
    }
  }
  for (const auto& p : excluded) {
    if (p.size() != dim()) {
      throw DomainError("chart '" + name + "' excluded point has dimension " +
                        std::to_string(p.size()));
    }
  }
}

double Chart::wrap_distance(const Point& a, const Point& b) const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    double d = a[i] - b[i];
    if (ranges[i].periodic) {
      double period = ranges[i].hi - ranges[i].lo;
      d = std::remainder(d, period);
    }
    s += d * d;
  }
  return std::sqrt(s);
}

bool Chart::is_excluded(const Point& x) const {
  for (const auto& p : excluded) {
    if (wrap_distance(x, p) < excluded_radius) return true;
  }
  return false;
}

bool Chart::contains(const Point& x) const {
  if (x.size() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (ranges[i].periodic) continue;
    if (x[i] < ranges[i].lo || x[i] > ranges[i].hi) return false;
  }
  return !is_excluded(x);
}

Bindings Chart::bind(const Point& x) const {
  if (x.size() != dim()) {
    throw DomainError("point has dimension " + std::to_string(x.size()) +
                      ", chart '" + name + "' expects " + std::to_string(dim()));
  }
  Bindings b;
  for (std::size_t i = 0; i < dim(); ++i) b.set(coords[i], x[i]);
  return b;
}

ChartSampler::ChartSampler(const Chart& chart, unsigned seed, double shrink)
    : chart_(&chart), halton_(chart.dim(), seed) {
  chart.validate();
  for (std::size_t i = 0; i < chart.dim(); ++i) {
    double lo = chart.ranges[i].lo;
    double hi = chart.ranges[i].hi;
    if (!chart.ranges[i].periodic && shrink > 0.0) {
      double pad = shrink * (hi - lo);
      lo += pad;
      hi -= pad;
    }
    lo_.push_back(lo);
    hi_.push_back(hi);
  }
}

Point ChartSampler::next() {
  for (int attempt = 0; attempt < 4096; ++attempt) {
    Point p = halton_.next_box(lo_, hi_);
    if (!chart_->is_excluded(p)) return p;
  }
  throw DomainError("chart '" + chart_->name +
                    "' sampling exhausted: excluded set covers the box");
}

void VectorField::validate() const {
  chart.validate();
  if (comp.size() != chart.dim()) {
    throw DomainError("vector field on '" + chart.name + "' has " +
                      std::to_string(comp.size()) + " components for dimension " +
                      std::to_string(chart.dim()));
  }
  for (const auto& e : comp) {
    for (const auto& v : free_vars(e)) {
      if (std::find(chart.coords.begin(), chart.coords.end(), v) ==
          chart.coords.end()) {
        throw DomainError("vector field component uses unknown variable '" + v +
                          "'");
      }
    }
  }
}

Eigen::VectorXd VectorField::value(const Point& x) const {
  Bindings b = chart.bind(x);
  Eigen::VectorXd v(static_cast<Eigen::Index>(comp.size()));
  for (std::size_t i = 0; i < comp.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = eval(comp[i], b);
  }
  return v;
}

MetricField::MetricField(Chart chart, std::vector<std::vector<Expr>> g)
    : chart_(std::move(chart)), g_(std::move(g)) {
  chart_.validate();
  std::size_t n = chart_.dim();
  if (g_.size() != n) {
    throw DomainError("metric on '" + chart_.name + "' has " +
                      std::to_string(g_.size()) + " rows for dimension " +
                      std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (g_[i].size() != n) {
      throw DomainError("metric row " + std::to_string(i) + " has " +
                        std::to_string(g_[i].size()) + " entries");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!equal(g_[i][j], g_[j][i])) {
        throw DomainError("metric entries (" + std::to_string(i) + "," +
                          std::to_string(j) + ") and transpose differ");
      }
    }
  }
  for (const auto& row : g_) {
    for (const auto& e : row) {
      for (const auto& v : free_vars(e)) {
        if (std::find(chart_.coords.begin(), chart_.coords.end(), v) ==
            chart_.coords.end()) {
          throw DomainError("metric entry uses unknown variable '" + v + "'");
        }
      }
    }
  }
}

const Expr& MetricField::entry(std::size_t i, std::size_t j) const {
  return g_.at(i).at(j);
}

Eigen::MatrixXd MetricField::value(const Point& x) const {
  Bindings b = chart_.bind(x);
  std::size_t n = dim();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          eval(g_[i][j], b);
    }
  }
  return m;
}

double MetricField::det_value(const Point& x) const {
  return value(x).determinant();
}

void MetricField::check_positive_definite(unsigned seed,
                                          std::size_t samples) const {
  ChartSampler sampler(chart_, seed);
  for (std::size_t k = 0; k < samples; ++k) {
    Point x = sampler.next();
    Eigen::MatrixXd m = value(x);
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
      throw DomainError("metric on '" + chart_.name +
                        "' is not positive definite at " + point_to_string(x));
    }
  }
}

Eigen::MatrixXd metric_inverse(const MetricField& g, const Point& x) {
  Eigen::MatrixXd m = g.value(x);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible()) {
    throw DomainError("metric is singular at " + point_to_string(x));
  }
  Eigen::MatrixXd inv = lu.inverse();
  Eigen::MatrixXd r = m * inv - Eigen::MatrixXd::Identity(m.rows(), m.cols());
  double resid = r.cwiseAbs().maxCoeff();
  if (resid >= 1e-10) {
    throw DomainError("metric inverse residual " + std::to_string(resid) +
                      " at " + point_to_string(x));
  }
  return inv;
}

Expr inner(const MetricField& g, const VectorField& v, const VectorField& w) {
  if (v.chart.name != g.chart().name || w.chart.name != g.chart().name ||
      v.chart.coords != g.chart().coords || w.chart.coords != g.chart().coords) {
    throw DomainError("inner product requires fields on the chart of the metric");
  }
  std::size_t n = g.dim();
  Expr acc = Expr::constant(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      acc = acc + g.entry(i, j) * v.comp[i] * w.comp[j];
    }
  }
  return acc;
}

}  // namespace pdemorph
