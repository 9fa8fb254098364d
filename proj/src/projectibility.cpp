#include "pdemorph/projectibility.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
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

void SmoothMap::validate() const {
  source.validate();
  target.validate();
  if (components.size() != target.dim()) {
    throw DomainError("map has " + std::to_string(components.size()) +
                      " components, target dimension is " +
                      std::to_string(target.dim()));
  }
  for (const auto& e : components) {
    for (const auto& v : free_vars(e)) {
      if (std::find(source.coords.begin(), source.coords.end(), v) ==
          source.coords.end()) {
        throw DomainError("map component uses unknown variable '" + v + "'");
      }
    }
  }
}

Point SmoothMap::value(const Point& x) const {
  Bindings b = source.bind(x);
  Point y(components.size());
  for (std::size_t i = 0; i < components.size(); ++i) y[i] = eval(components[i], b);
  return y;
}

bool SmoothMap::coordinate_projection(std::vector<std::size_t>* axes) const {
  std::vector<std::size_t> out;
  for (const auto& e : components) {
    if (e.kind() != ExprKind::Variable) return false;
    auto it = std::find(source.coords.begin(), source.coords.end(), e.var_name());
    if (it == source.coords.end()) return false;
    out.push_back(static_cast<std::size_t>(it - source.coords.begin()));
  }
  if (axes) *axes = out;
  return true;
}

void Fibering::validate(unsigned seed, double tol) const {
  p.validate();
  if (params.size() != param_ranges.size()) {
    throw DomainError("fibering has " + std::to_string(param_ranges.size()) +
                      " ranges for " + std::to_string(params.size()) +
                      " parameters");
  }
  if (base_dim() + fiber_dim() != p.source.dim()) {
    throw DomainError("fibering dimensions do not add up: base " +
                      std::to_string(base_dim()) + " + fiber " +
                      std::to_string(fiber_dim()) + " != " +
                      std::to_string(p.source.dim()));
  }
  for (const auto& name : params) {
    if (std::find(p.target.coords.begin(), p.target.coords.end(), name) !=
        p.target.coords.end()) {
      throw DomainError("fiber parameter '" + name +
                        "' collides with a base coordinate");
    }
  }
  if (section.size() != p.source.dim()) {
    throw DomainError("fiber parametrization has " +
                      std::to_string(section.size()) + " components");
  }
  for (const auto& e : section) {
    for (const auto& v : free_vars(e)) {
      bool known =
          std::find(p.target.coords.begin(), p.target.coords.end(), v) !=
              p.target.coords.end() ||
          std::find(params.begin(), params.end(), v) != params.end();
      if (!known) {
        throw DomainError("fiber parametrization uses unknown variable '" + v +
                          "'");
      }
    }
  }

  ChartSampler ys(p.target, seed);
  std::optional<HaltonSampler> ss;
  if (fiber_dim() > 0) ss.emplace(fiber_dim(), seed + 1);
  std::vector<double> lo, hi;
  for (const auto& r : param_ranges) {
    lo.push_back(r.lo);
    hi.push_back(r.hi);
  }
  for (int k = 0; k < 30; ++k) {
    Point y = ys.next();
    Point s = ss ? ss->next_box(lo, hi) : Point{};
    Point x = point(y, s);
    Point back = p.value(x);
    if (p.target.wrap_distance(back, y) > tol) {
      throw DomainError("fiber parametrization is not a section over " +
                        point_to_string(y) + ": p gives " +
                        point_to_string(back));
    }
  }
}

Point Fibering::point(const Point& y, const Point& s) const {
  Bindings b;
  for (std::size_t i = 0; i < p.target.dim(); ++i) b.set(p.target.coords[i], y[i]);
  for (std::size_t i = 0; i < params.size(); ++i) b.set(params[i], s[i]);
  Point x(section.size());
  for (std::size_t i = 0; i < section.size(); ++i) x[i] = eval(section[i], b);
  return x;
}

FiberConstancyReport fiber_constancy(
    const Fibering& fib, const std::function<double(const Point&)>& field,
    const ProjectionSettings& settings, double threshold_base) {
  FiberConstancyReport rep;
  rep.threshold = threshold_base * settings.tol_scale;

  ChartSampler ys(fib.p.target, settings.seed);
  std::optional<HaltonSampler> ss;
  if (fib.fiber_dim() > 0) ss.emplace(fib.fiber_dim(), settings.seed + 1);
  std::vector<double> lo, hi;
  for (const auto& r : fib.param_ranges) {
    lo.push_back(r.lo);
    hi.push_back(r.hi);
  }
  std::size_t per_fiber = ss ? settings.fiber_samples : 1;
  std::size_t need_kept = ss ? std::max<std::size_t>(2, settings.fiber_samples / 2) : 1;

  double gmax = 0.0;
  double worst_spread = 0.0;
  Point worst_y;
  for (std::size_t k = 0; k < settings.base_points; ++k) {
    Point y = ys.next();
    double vmin = std::numeric_limits<double>::infinity();
    double vmax = -vmin;
    std::size_t kept = 0;
    for (std::size_t j = 0; j < per_fiber; ++j) {
      Point s = ss ? ss->next_box(lo, hi) : Point{};
      Point x = fib.point(y, s);
      if (!fib.p.source.contains(x)) continue;
      double v;
      try {
        v = field(x);
      } catch (const EvalError&) {
        continue;
      }
      ++kept;
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
      gmax = std::max(gmax, std::abs(v));
    }
    if (kept < need_kept) {
      ++rep.points_skipped;
      continue;
    }
    ++rep.points_used;
    double spread = vmax - vmin;
    if (spread > worst_spread) {
      worst_spread = spread;
      worst_y = y;
    }
  }
  if (rep.points_used < settings.base_points / 2) {
    throw DomainError("fiber constancy check retained only " +
                      std::to_string(rep.points_used) + " fibers");
  }
  rep.witness = worst_spread / (1.0 + gmax);
  rep.worst_y = worst_y;
  rep.constant = rep.witness <= rep.threshold;
  return rep;
}

std::size_t ReducedTables::node_count() const {
  std::size_t n = 1;
  for (std::size_t c : nodes) n *= c;
  return n;
}

Point ReducedTables::node_point(std::size_t flat) const {
  std::size_t m = nodes.size();
  Point y(m);
  for (std::size_t a = m; a-- > 0;) {
    y[a] = axis[a][flat % nodes[a]];
    flat /= nodes[a];
  }
  return y;
}

namespace {

// Catmull-Rom weights for local coordinate fraction f in [0, 1].
void catmull_rom(double f, double w[4]) {
  double f2 = f * f, f3 = f2 * f;
  w[0] = 0.5 * (-f3 + 2 * f2 - f);
  w[1] = 0.5 * (3 * f3 - 5 * f2 + 2);
  w[2] = 0.5 * (-3 * f3 + 4 * f2 + f);
  w[3] = 0.5 * (f3 - f2);
}

}  // namespace

double ReducedTables::interpolate(const std::vector<double>& per_u_flat,
                                  const Point& y, double u) const {
  (void)u;
  std::size_t m = nodes.size();
  std::vector<std::array<long, 4>> idx(m);
  std::vector<std::array<double, 4>> wt(m);
  for (std::size_t a = 0; a < m; ++a) {
    const auto& ax = axis[a];
    long n = static_cast<long>(nodes[a]);
    double lo = ax.front(), hi = ax.back();
    double h = (hi - lo) / static_cast<double>(n - 1);
    bool periodic = chart.ranges[a].periodic;
    double yy = y[a];
    if (periodic) {
      double period = hi - lo;
      yy = lo + std::fmod(std::fmod(yy - lo, period) + period, period);
    }
    double pos = (yy - lo) / h;
    long i1 = static_cast<long>(std::floor(pos));
    double f = pos - static_cast<double>(i1);
    if (i1 < 0) { i1 = 0; f = 0.0; }
    if (i1 > n - 2) { i1 = n - 2; f = 1.0; }
    double w[4];
    catmull_rom(f, w);
    for (int t = 0; t < 4; ++t) {
      long raw = i1 - 1 + t;
      if (periodic) {
        long span = n - 1;  // last node repeats the first
        raw = ((raw % span) + span) % span;
      } else {
        raw = std::clamp<long>(raw, 0, n - 1);
      }
      idx[a][t] = raw;
      wt[a][t] = w[t];
    }
  }
  double acc = 0.0;
  std::size_t combos = 1;
  for (std::size_t a = 0; a < m; ++a) combos *= 4;
  for (std::size_t c = 0; c < combos; ++c) {
    std::size_t rem = c;
    double w = 1.0;
    std::size_t flat = 0;
    for (std::size_t a = 0; a < m; ++a) {
      std::size_t t = rem % 4;
      rem /= 4;
      w *= wt[a][t];
      flat = flat * nodes[a] + static_cast<std::size_t>(idx[a][t]);
    }
    acc += w * per_u_flat[flat];
  }
  return acc;
}

namespace {

double table_lookup(const ReducedTables& rt,
                    const std::vector<std::vector<double>>& per_u,
                    const Point& y, double u) {
  if (rt.u_values.size() == 1) return rt.interpolate(per_u[0], y, u);
  // Linear in u, clamped at the table ends.
  const auto& uv = rt.u_values;
  if (u <= uv.front()) return rt.interpolate(per_u.front(), y, u);
  if (u >= uv.back()) return rt.interpolate(per_u.back(), y, u);
  std::size_t k = 0;
  while (k + 2 < uv.size() && uv[k + 1] < u) ++k;
  double f = (u - uv[k]) / (uv[k + 1] - uv[k]);
  return (1.0 - f) * rt.interpolate(per_u[k], y, u) +
         f * rt.interpolate(per_u[k + 1], y, u);
}

}  // namespace

ParabolicOperator ReducedTables::as_operator() const {
  auto data = std::make_shared<ReducedTables>(*this);
  std::size_t m = nodes.size();
  bool u_dep = u_values.size() > 1;
  auto make = [&](const std::vector<std::vector<double>>* tab) {
    return Coef::function(
        [data, tab](const Point& y, double u, double) {
          return table_lookup(*data, *tab, y, u);
        },
        u_dep, false);
  };
  std::vector<std::vector<Coef>> b2c(m), c2c(m);
  std::vector<Coef> b1c;
  auto base = data.get();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      b2c[i].push_back(make(&base->b2[i * m + j]));
      c2c[i].push_back(make(&base->c2[i * m + j]));
    }
    b1c.push_back(make(&base->b1[i]));
  }
  return ParabolicOperator(chart, std::move(b2c), std::move(c2c), std::move(b1c),
                           make(&base->q), /*numeric_tier=*/true);
}

namespace {

struct FiberAverager {
  const Fibering& fib;
  std::vector<Point> s_set;

  FiberAverager(const Fibering& f, unsigned seed, std::size_t count) : fib(f) {
    if (f.fiber_dim() == 0) {
      s_set.push_back({});
      return;
    }
    HaltonSampler ss(f.fiber_dim(), seed + 1);
    std::vector<double> lo, hi;
    for (const auto& r : f.param_ranges) {
      lo.push_back(r.lo);
      hi.push_back(r.hi);
    }
    for (std::size_t k = 0; k < count; ++k) s_set.push_back(ss.next_box(lo, hi));
  }

  double average(const ParabolicOperator& L, const TestFunction& tf,
                 const Point& y, double u) const {
    double acc = 0.0;
    std::size_t kept = 0;
    for (const auto& s : s_set) {
      Point x = fib.point(y, s);
      if (!fib.p.source.contains(x)) continue;
      acc += apply(L, tf, x, u);
      ++kept;
    }
    if (kept < std::min<std::size_t>(2, s_set.size())) {
      throw DomainError("fiber of " + point_to_string(y) +
                        " leaves the chart at recovery nodes");
    }
    return acc / static_cast<double>(kept);
  }
};

}  // namespace

ProjectionReport project_operator(const ParabolicOperator& L,
                                  const Fibering& fib,
                                  const ProjectionSettings& settings) {
  if (L.chart().coords != fib.p.source.coords) {
    throw DomainError("operator chart and fibering source disagree");
  }
  if (!L.autonomous()) {
    throw DomainError("projection requires an autonomous operator");
  }
  fib.validate(settings.seed);

  const Chart& ychart = fib.p.target;
  std::size_t m = fib.base_dim();
  std::vector<double> us = L.depends_on_u()
                               ? std::vector<double>{-1.0, -0.3, 0.1, 0.7, 2.0}
                               : std::vector<double>{0.0};
  double tier = L.numeric_tier() ? 1e-5 : 1e-7;

  std::map<std::string, Expr> pull;
  for (std::size_t i = 0; i < m; ++i) pull[ychart.coords[i]] = fib.p.components[i];

  ProjectionReport rep;
  rep.threshold = tier * settings.tol_scale;

  // Step 1: pullbacks of the probe family must be fiber-constant under L.
  std::vector<Expr> fam = test_function_family(ychart);
  for (const auto& phi : fam) {
    TestFunction tf = TestFunction::build(subst(phi, pull), L.chart());
    for (double u : us) {
      auto field = [&](const Point& x) { return apply(L, tf, x, u); };
      FiberConstancyReport fc = fiber_constancy(fib, field, settings, tier);
      if (fc.witness > rep.witness) {
        rep.witness = fc.witness;
        rep.worst_probe = to_string(phi);
        rep.worst_y = fc.worst_y;
      }
    }
  }
  rep.projectible = rep.witness <= rep.threshold;
  if (!rep.projectible) return rep;

  // Step 2: recover the base coefficients on a regular grid.
  if (m > 3) {
    throw DomainError("reduced tables support base dimension <= 3");
  }
  ReducedTables rt;
  rt.chart = ychart;
  rt.u_values = us;
  rt.nodes.assign(m, settings.grid_nodes);
  rt.axis.resize(m);
  for (std::size_t a = 0; a < m; ++a) {
    const Interval& r = ychart.ranges[a];
    for (std::size_t i = 0; i < rt.nodes[a]; ++i) {
      rt.axis[a].push_back(r.lo + (r.hi - r.lo) * static_cast<double>(i) /
                                      static_cast<double>(rt.nodes[a] - 1));
    }
  }
  std::size_t total = rt.node_count();
  rt.b2.assign(m * m, {});
  rt.c2.assign(m * m, {});
  rt.b1.assign(m, {});
  for (auto& t : rt.b2) t.assign(us.size(), std::vector<double>(total, 0.0));
  for (auto& t : rt.c2) t.assign(us.size(), std::vector<double>(total, 0.0));
  for (auto& t : rt.b1) t.assign(us.size(), std::vector<double>(total, 0.0));
  rt.q.assign(us.size(), std::vector<double>(total, 0.0));

  // Probe pullbacks, built once.
  auto pull_tf = [&](const Expr& phi) {
    return TestFunction::build(subst(phi, pull), L.chart());
  };
  std::vector<Expr> yv(m);
  for (std::size_t a = 0; a < m; ++a) yv[a] = Expr::variable(ychart.coords[a]);
  TestFunction one = pull_tf(Expr::constant(1.0));
  std::vector<TestFunction> lin_p(m), lin_m(m), sq_p(m), sq_m(m);
  for (std::size_t a = 0; a < m; ++a) {
    lin_p[a] = pull_tf(yv[a]);
    lin_m[a] = pull_tf(Expr::constant(0.0) - yv[a]);
    sq_p[a] = pull_tf(yv[a] * yv[a]);
    sq_m[a] = pull_tf(Expr::constant(0.0) - yv[a] * yv[a]);
  }
  std::vector<std::vector<TestFunction>> cross_p(m, std::vector<TestFunction>(m)),
      cross_m(m, std::vector<TestFunction>(m)), sum_p(m, std::vector<TestFunction>(m)),
      sum_m(m, std::vector<TestFunction>(m));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      cross_p[a][b] = pull_tf(yv[a] * yv[b]);
      cross_m[a][b] = pull_tf(Expr::constant(0.0) - yv[a] * yv[b]);
      sum_p[a][b] = pull_tf(yv[a] + yv[b]);
      sum_m[a][b] = pull_tf(Expr::constant(0.0) - (yv[a] + yv[b]));
    }
  }

  FiberAverager avg(fib, settings.seed, std::min<std::size_t>(4, settings.fiber_samples));

  for (std::size_t ui = 0; ui < us.size(); ++ui) {
    double u = us[ui];
    for (std::size_t flat = 0; flat < total; ++flat) {
      Point y = rt.node_point(flat);
      double q = avg.average(L, one, y, u);
      rt.q[ui][flat] = q;
      std::vector<double> b1v(m), c2kk(m);
      for (std::size_t a = 0; a < m; ++a) {
        double ap = avg.average(L, lin_p[a], y, u);
        double am = avg.average(L, lin_m[a], y, u);
        b1v[a] = 0.5 * (ap - am);
        c2kk[a] = 0.5 * (ap + am) - q;
        rt.b1[a][ui][flat] = b1v[a];
        rt.c2[a * m + a][ui][flat] = c2kk[a];
        double sp = avg.average(L, sq_p[a], y, u);
        double sm = avg.average(L, sq_m[a], y, u);
        double B = 0.5 * (sp - sm);
        rt.b2[a * m + a][ui][flat] = 0.5 * (B - 2.0 * y[a] * b1v[a]);
      }
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
          double cp = avg.average(L, cross_p[a][b], y, u);
          double cm = avg.average(L, cross_m[a][b], y, u);
          double B = 0.5 * (cp - cm);
          double b2ab = 0.5 * (B - y[b] * b1v[a] - y[a] * b1v[b]);
          rt.b2[a * m + b][ui][flat] = b2ab;
          rt.b2[b * m + a][ui][flat] = b2ab;
          double up = avg.average(L, sum_p[a][b], y, u);
          double um = avg.average(L, sum_m[a][b], y, u);
          double C = 0.5 * (up + um) - q;
          double c2ab = 0.5 * (C - c2kk[a] - c2kk[b]);
          rt.c2[a * m + b][ui][flat] = c2ab;
          rt.c2[b * m + a][ui][flat] = c2ab;
        }
      }
    }
  }
  rep.reduced = rt;

  // Held-out probes, compared at grid nodes where interpolation is exact.
  ParabolicOperator Lred = rt.as_operator();
  std::vector<Expr> holdout;
  holdout.push_back(yv[0] * yv[0] * yv[0]);
  {
    Expr arg = Expr::constant(0.25) * yv[0];
    if (m > 1) arg = arg + Expr::constant(0.35) * yv[1];
    holdout.push_back(exp(arg));
    holdout.push_back(sin(Expr::constant(0.9) * yv[0] +
                          Expr::constant(0.2) * yv[m - 1]));
    if (m > 1) holdout.push_back(yv[0] * yv[0] * yv[1]);
  }
  double hscale = 0.0, hwit = 0.0;
  for (const auto& psi : holdout) {
    TestFunction up = pull_tf(psi);
    TestFunction down = TestFunction::build(psi, ychart);
    for (std::size_t ui = 0; ui < us.size(); ++ui) {
      for (std::size_t flat = 0; flat < total; flat += 2) {
        Point y = rt.node_point(flat);
        double lhs = avg.average(L, up, y, us[ui]);
        double rhs = apply(Lred, down, y, us[ui]);
        hscale = std::max(hscale, std::abs(lhs));
        hwit = std::max(hwit, std::abs(lhs - rhs));
      }
    }
  }
  rep.holdout_witness = hwit / (1.0 + hscale);
  rep.holdout_threshold =
      (L.numeric_tier() ? 1e-4 : 1e-6) * settings.tol_scale;
  rep.projectible = rep.projectible && rep.holdout_witness <= rep.holdout_threshold;
  return rep;
}

ConformalReport conformal_factor_check(const SmoothMap& map2d,
                                       const Expr& lambda, unsigned seed,
                                       double tol_scale) {
  map2d.validate();
  if (map2d.source.dim() != 2 || map2d.target.dim() != 2) {
    throw DomainError("conformal factor check requires a 2-D map");
  }
  for (const auto& v : free_vars(lambda)) {
    if (std::find(map2d.source.coords.begin(), map2d.source.coords.end(), v) ==
        map2d.source.coords.end()) {
      throw DomainError("factor uses unknown variable '" + v + "'");
    }
  }
  Expr j00 = diff(map2d.components[0], map2d.source.coords[0]);
  Expr j01 = diff(map2d.components[0], map2d.source.coords[1]);
  Expr j10 = diff(map2d.components[1], map2d.source.coords[0]);
  Expr j11 = diff(map2d.components[1], map2d.source.coords[1]);
  Expr det = j00 * j11 - j01 * j10;

  ConformalReport rep;
  rep.threshold = 1e-9 * tol_scale;
  ChartSampler sampler(map2d.source, seed);
  for (int k = 0; k < 200; ++k) {
    Point x = sampler.next();
    double dv, lv;
    try {
      Bindings b = map2d.source.bind(x);
      dv = eval(det, b);
      lv = eval(lambda, b);
    } catch (const EvalError&) {
      ++rep.points_skipped;
      continue;
    }
    ++rep.points_used;
    double sj = std::sqrt(std::abs(dv));
    rep.witness = std::max(rep.witness, std::abs(sj - lv) / (1.0 + sj));
  }
  if (rep.points_used < 100) {
    throw DomainError("conformal factor check retained only " +
                      std::to_string(rep.points_used) + " of 200 points");
  }
  rep.pass = rep.witness <= rep.threshold;
  return rep;
}

}  // namespace pdemorph
