#include "pdemorph/connection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
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

double simpson_leaf(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson_rec(const std::function<double(double)>& f, double a,
                            double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = simpson_leaf(a, m, fa, flm, fm);
  double right = simpson_leaf(m, b, fm, frm, fb);
  double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  if (depth <= 0) throw DomainError("quadrature failed to converge");
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol) {
  if (a == b) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = simpson_leaf(a, b, fa, fm, fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 24);
}

// Gauss-Legendre nodes/weights on [-1, 1], Newton on the Legendre recurrence.
const std::vector<std::pair<double, double>>& gauss_legendre_64() {
  static const std::vector<std::pair<double, double>> table = [] {
    const int n = 64;
    const double pi = std::acos(-1.0);
    std::vector<std::pair<double, double>> t(n);
    for (int i = 0; i < n; ++i) {
      double x = std::cos(pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-15) break;
      }
      t[i] = {x, 2.0 / ((1.0 - x * x) * dp * dp)};
    }
    return t;
  }();
  return table;
}

Point rk4_flow(const VectorField& eta, const Point& x, double eps) {
  std::size_t n = x.size();
  auto evalv = [&](const Point& p) {
    Eigen::VectorXd v = eta.value(p);
    Point out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = v[static_cast<Eigen::Index>(i)];
    return out;
  };
  auto axpy = [&](const Point& p, double c, const Point& d) {
    Point out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = p[i] + c * d[i];
    return out;
  };
  Point k1 = evalv(x);
  Point k2 = evalv(axpy(x, 0.5 * eps, k1));
  Point k3 = evalv(axpy(x, 0.5 * eps, k2));
  Point k4 = evalv(axpy(x, eps, k3));
  Point out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i] + eps / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

Eigen::MatrixXd transported_metric(const MetricField& g, const VectorField& eta,
                                   const Point& x, double eps) {
  std::size_t n = x.size();
  double h = 1e-5;
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    Point xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    Point fp = rk4_flow(eta, xp, eps);
    Point fm = rk4_flow(eta, xm, eps);
    for (std::size_t i = 0; i < n; ++i) {
      J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (fp[i] - fm[i]) / (2.0 * h);
    }
  }
  Point phi = rk4_flow(eta, x, eps);
  Eigen::MatrixXd G = g.value(phi);
  return J.transpose() * G * J;
}

}  // namespace

double killing_witness(const MetricField& g, const VectorField& eta,
                       unsigned seed, std::size_t samples) {
  double eps = 1e-2;
  ChartSampler sampler(g.chart(), seed, 0.05);
  double w = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    Point x = sampler.next();
    Eigen::MatrixXd gp = transported_metric(g, eta, x, eps);
    Eigen::MatrixXd gm = transported_metric(g, eta, x, -eps);
    Eigen::MatrixXd lie = (gp - gm) / (2.0 * eps);
    double scale = 1.0 + g.value(x).cwiseAbs().maxCoeff();
    w = std::max(w, lie.cwiseAbs().maxCoeff() / scale);
  }
  return w;
}

void GroupFibering::validate(unsigned seed) const {
  fib.validate(seed);
  eta.validate();
  if (fib.fiber_dim() != 1) {
    throw DomainError("group fibering requires one-dimensional fibers");
  }
  if (eta.chart.coords != metric.chart().coords ||
      fib.p.source.coords != metric.chart().coords) {
    throw DomainError("generator, metric, and fibering charts disagree");
  }
  bool periodic = fib.param_ranges[0].periodic;
  if (topology == FiberTopology::Circle && !periodic) {
    throw DomainError("circle topology requires a periodic fiber parameter");
  }
  if (topology == FiberTopology::Line && periodic) {
    throw DomainError("line topology requires a non-periodic fiber parameter");
  }

  const Chart& chart = metric.chart();
  std::size_t n = chart.dim();
  ChartSampler sampler(chart, seed);
  for (int k = 0; k < 50; ++k) {
    Point x = sampler.next();
    Eigen::VectorXd ev = eta.value(x);
    double n2 = ev.dot(metric.value(x) * ev);
    if (!(n2 > 1e-12)) {
      throw DomainError("generator degenerates at " + point_to_string(x));
    }
    // Tangency to the fibers: the projection must kill the generator.
    Bindings b = chart.bind(x);
    double escale = 1.0 + ev.cwiseAbs().maxCoeff();
    for (std::size_t c = 0; c < fib.p.components.size(); ++c) {
      double push = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        push += eval(diff(fib.p.components[c], chart.coords[j]), b) *
                ev[static_cast<Eigen::Index>(j)];
      }
      if (std::abs(push) > 1e-8 * escale) {
        throw DomainError("generator is not tangent to the fibers at " +
                          point_to_string(x));
      }
    }
  }

  double kw = killing_witness(metric, eta, seed);
  if (kw > 1e-6) {
    throw DomainError("generator does not flow by isometries (witness " +
                      std::to_string(kw) + ")");
  }
}

OneForm connection_form(const GroupFibering& gf) {
  const Chart& chart = gf.metric.chart();
  std::size_t n = chart.dim();
  Expr norm2 = inner(gf.metric, gf.eta, gf.eta);
  OneForm chi;
  chi.chart = chart;
  chi.comp.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Expr acc = Expr::constant(0.0);
    for (std::size_t j = 0; j < n; ++j) {
      acc = acc + gf.metric.entry(i, j) * gf.eta.comp[j];
    }
    chi.comp[i] = acc / norm2;
  }
  return chi;
}

namespace {

// Shared symbolic data for the fiber-parametrized pullback of a form.
struct PullbackData {
  Fibering fib;
  std::vector<Expr> chi;                     // on the total chart
  std::vector<std::vector<Expr>> dsec_dy;    // [i][k]
  std::vector<Expr> dsec_ds;                 // [i]

  static PullbackData build(const GroupFibering& gf,
                            const std::vector<Expr>& chi) {
    PullbackData d;
    d.fib = gf.fib;
    d.chi = chi;
    std::size_t n = gf.fib.p.source.dim();
    std::size_t m = gf.fib.base_dim();
    d.dsec_dy.assign(n, std::vector<Expr>(m));
    d.dsec_ds.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < m; ++k) {
        d.dsec_dy[i][k] = diff(gf.fib.section[i], gf.fib.p.target.coords[k]);
      }
      d.dsec_ds[i] = diff(gf.fib.section[i], gf.fib.params[0]);
    }
    return d;
  }

  Bindings base_bindings(const Point& y, double s) const {
    Bindings b;
    for (std::size_t k = 0; k < fib.p.target.dim(); ++k) {
      b.set(fib.p.target.coords[k], y[k]);
    }
    b.set(fib.params[0], s);
    return b;
  }

  // chi_i evaluated at section(y, s), all i.
  std::vector<double> chi_at(const Point& y, double s) const {
    Bindings by = base_bindings(y, s);
    std::size_t n = fib.section.size();
    Point x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = eval(fib.section[i], by);
    Bindings bx = fib.p.source.bind(x);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = eval(chi[i], bx);
    return out;
  }

  // Base component k of the pullback at (y, s).
  double base_comp(const Point& y, double s, std::size_t k) const {
    Bindings by = base_bindings(y, s);
    std::vector<double> cs = chi_at(y, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      acc += cs[i] * eval(dsec_dy[i][k], by);
    }
    return acc;
  }

  // Fiber component of the pullback at (y, s).
  double fiber_comp(const Point& y, double s) const {
    Bindings by = base_bindings(y, s);
    std::vector<double> cs = chi_at(y, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      acc += cs[i] * eval(dsec_ds[i], by);
    }
    return acc;
  }
};

}  // namespace

CurvatureReport curvature(const GroupFibering& gf, unsigned seed,
                          double tol_scale) {
  const Chart& chart = gf.metric.chart();
  std::size_t n = chart.dim();
  std::size_t m = gf.fib.base_dim();
  OneForm chi = connection_form(gf);

  CurvatureReport rep;
  rep.dchi.assign(n, std::vector<Expr>(n, Expr::constant(0.0)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      rep.dchi[i][j] = diff(chi.comp[j], chart.coords[i]) -
                       diff(chi.comp[i], chart.coords[j]);
    }
  }

  auto data = std::make_shared<PullbackData>(PullbackData::build(gf, chi.comp));
  auto dchi = rep.dchi;

  // (d chi')_kl(y, s) through the section differential.
  auto projected_at = [data, dchi, chart](const Point& y, double s,
                                          std::size_t k, std::size_t l) {
    Bindings by = data->base_bindings(y, s);
    std::size_t n2 = data->fib.section.size();
    Point x(n2);
    for (std::size_t i = 0; i < n2; ++i) x[i] = eval(data->fib.section[i], by);
    Bindings bx = chart.bind(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < n2; ++i) {
      double vk = eval(data->dsec_dy[i][k], by);
      if (vk == 0.0) continue;
      for (std::size_t j = 0; j < n2; ++j) {
        double wl = eval(data->dsec_dy[j][l], by);
        if (wl == 0.0) continue;
        acc += eval(dchi[i][j], bx) * vk * wl;
      }
    }
    return acc;
  };

  // Fiber constancy of the projected components, plus horizontality
  // (contraction with the generator must vanish).
  ChartSampler ys(gf.fib.p.target, seed);
  double lo = gf.fib.param_ranges[0].lo, hi = gf.fib.param_ranges[0].hi;
  double gmax = 0.0, spread = 0.0, vert = 0.0;
  for (int a = 0; a < 50; ++a) {
    Point y = ys.next();
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t l = k + 1; l < m; ++l) {
        double vmin = std::numeric_limits<double>::infinity(), vmax = -vmin;
        for (int si = 0; si < 20; ++si) {
          double s = lo + (hi - lo) * (si + 0.5) / 20.0;
          double v = projected_at(y, s, k, l);
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
          gmax = std::max(gmax, std::abs(v));
        }
        spread = std::max(spread, vmax - vmin);
      }
    }
  }
  ChartSampler xs(chart, seed + 2);
  for (int a = 0; a < 50; ++a) {
    Point x = xs.next();
    Bindings bx = chart.bind(x);
    Eigen::VectorXd ev = gf.eta.value(x);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += eval(rep.dchi[i][j], bx) * ev[static_cast<Eigen::Index>(i)];
      }
      vert = std::max(vert, std::abs(acc));
    }
  }
  rep.basic_witness = std::max(spread, vert) / (1.0 + gmax);
  rep.basic_threshold = 1e-7 * tol_scale;
  rep.basic = rep.basic_witness <= rep.basic_threshold;

  // d(d chi) = 0, by central differences of the symbolic components.
  double d2 = 0.0, d2scale = 0.0;
  double step = 1e-4;
  ChartSampler xs2(chart, seed + 3);
  auto dchi_at = [&](const Point& x, std::size_t i, std::size_t j) {
    return eval(rep.dchi[i][j], chart.bind(x));
  };
  for (int a = 0; a < 30; ++a) {
    Point x = xs2.next();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        d2scale = std::max(d2scale, std::abs(dchi_at(x, i, j)));
        for (std::size_t k = j + 1; k < n; ++k) {
          double acc = 0.0;
          struct Term { std::size_t d, a, b; };
          for (const Term& t : {Term{i, j, k}, Term{j, k, i}, Term{k, i, j}}) {
            Point xp = x, xm = x;
            xp[t.d] += step;
            xm[t.d] -= step;
            acc += (dchi_at(xp, t.a, t.b) - dchi_at(xm, t.a, t.b)) / (2.0 * step);
          }
          d2 = std::max(d2, std::abs(acc));
        }
      }
    }
  }
  rep.d2_witness = d2 / (1.0 + d2scale);
  rep.d2_threshold = 1e-4 * tol_scale;

  auto avg_projected = [projected_at, lo, hi](const Point& y, std::size_t k,
                                              std::size_t l) {
    double acc = 0.0;
    for (int si = 0; si < 8; ++si) {
      double s = lo + (hi - lo) * (si + 0.5) / 8.0;
      acc += projected_at(y, s, k, l);
    }
    return acc / 8.0;
  };
  rep.projected = avg_projected;
  return rep;
}

Decomposition decompose(const GroupFibering& gf, unsigned seed,
                        double tol_scale) {
  return decompose(gf, connection_form(gf), seed, tol_scale);
}

Decomposition decompose(const GroupFibering& gf, const OneForm& chi,
                        unsigned seed, double tol_scale) {
  if (chi.chart.coords != gf.metric.chart().coords) {
    throw DomainError("form lives on a different chart than the fibering");
  }
  auto data = std::make_shared<PullbackData>(PullbackData::build(gf, chi.comp));
  bool circle = gf.topology == FiberTopology::Circle;
  double lo = gf.fib.param_ranges[0].lo, hi = gf.fib.param_ranges[0].hi;
  double period = hi - lo;
  std::size_t m = gf.fib.base_dim();

  Decomposition dec;
  double drift = 0.0;  // holonomy per unit fiber parameter, circle only

  if (circle) {
    ChartSampler ys(gf.fib.p.target, seed + 4);
    double hmin = std::numeric_limits<double>::infinity(), hmax = -hmin;
    double hsum = 0.0;
    const int reps = 10;
    for (int a = 0; a < reps; ++a) {
      Point y = ys.next();
      auto f = [&](double s) { return data->fiber_comp(y, s); };
      double H = adaptive_simpson(f, lo, hi, 1e-10);
      hmin = std::min(hmin, H);
      hmax = std::max(hmax, H);
      hsum += H;
    }
    double H = hsum / reps;
    if (hmax - hmin > 1e-8 * (1.0 + std::abs(H))) {
      throw DomainError("fiber integral of the connection form varies across "
                        "fibers (spread " + std::to_string(hmax - hmin) + ")");
    }
    dec.holonomy = H;
    drift = H / period;
  }

  // 64-point trapezoid average over a periodic fiber; 64-point Gauss-Legendre
  // average over a truncated line fiber.
  auto chi_base = [data, circle, lo, hi, period](const Point& y, std::size_t k) {
    if (circle) {
      const int n = 64;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += data->base_comp(y, lo + period * i / n, k);
      }
      return acc / n;
    }
    double acc = 0.0;
    for (const auto& [node, weight] : gauss_legendre_64()) {
      double s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * node;
      acc += weight * data->base_comp(y, s, k);
    }
    return 0.5 * acc;  // weights sum to 2
  };

  auto h = [data, drift, lo](const Point& y, double s) {
    auto f = [&](double sp) { return data->fiber_comp(y, sp) - drift; };
    return adaptive_simpson(f, lo, s, 1e-10);
  };

  // Residual of the reconstruction at sampled (y, s).
  ChartSampler ys(gf.fib.p.target, seed + 5);
  double delta = 1e-4;
  double witness = 0.0, scale = 0.0;
  for (int a = 0; a < 24; ++a) {
    Point y = ys.next();
    for (int si = 0; si < 6; ++si) {
      double s = lo + (hi - lo) * (si + 0.5) / 6.0;
      for (std::size_t k = 0; k < m; ++k) {
        double lhs = data->base_comp(y, s, k);
        scale = std::max(scale, std::abs(lhs));
        Point yp = y, ym = y;
        yp[k] += delta;
        ym[k] -= delta;
        double dh = (h(yp, s) - h(ym, s)) / (2.0 * delta);
        double r = lhs - chi_base(y, k) - dh;
        witness = std::max(witness, std::abs(r));
      }
    }
  }
  dec.chi_base = chi_base;
  dec.h = h;
  dec.residual = witness / (1.0 + scale);
  dec.residual_threshold = 1e-6 * tol_scale;
  if (dec.residual > dec.residual_threshold) {
    throw DomainError("connection form does not split over the base (residual " +
                      std::to_string(dec.residual) + ")");
  }
  return dec;
}

LiftReport lift_check(const GroupFibering& gf, const Decomposition& dec,
                      const std::vector<std::vector<Expr>>& generators,
                      const std::vector<Loop>& loops, unsigned seed,
                      double tol_scale) {
  const Chart& ychart = gf.fib.p.target;
  std::size_t m = ychart.dim();
  bool circle = gf.topology == FiberTopology::Circle;
  if (circle && !dec.holonomy) {
    throw DomainError("circle fibers require the holonomy from the decomposition");
  }

  LiftReport out;
  out.liftable = true;

  for (const auto& gen : generators) {
    if (gen.size() != m) {
      throw DomainError("base map has " + std::to_string(gen.size()) +
                        " components for dimension " + std::to_string(m));
    }
    for (const auto& e : gen) {
      for (const auto& v : free_vars(e)) {
        if (std::find(ychart.coords.begin(), ychart.coords.end(), v) ==
            ychart.coords.end()) {
          throw DomainError("base map uses unknown variable '" + v + "'");
        }
      }
    }
    std::vector<std::vector<Expr>> jac(m, std::vector<Expr>(m));
    for (std::size_t l = 0; l < m; ++l) {
      for (std::size_t k = 0; k < m; ++k) {
        jac[l][k] = diff(gen[l], ychart.coords[k]);
      }
    }
    auto omega = [&, gen, jac](const Point& y, std::size_t k) {
      Bindings b;
      for (std::size_t i = 0; i < m; ++i) b.set(ychart.coords[i], y[i]);
      Point gy(m);
      for (std::size_t i = 0; i < m; ++i) gy[i] = eval(gen[i], b);
      double acc = 0.0;
      for (std::size_t l = 0; l < m; ++l) {
        double jl = eval(jac[l][k], b);
        if (jl != 0.0) acc += dec.chi_base(gy, l) * jl;
      }
      return acc - dec.chi_base(y, k);
    };

    GeneratorReport rep;

    // Closedness of omega by central differences at sampled base points.
    ChartSampler ys(ychart, seed + 6, 0.05);
    double delta = 1e-4;
    double w = 0.0, scale = 0.0;
    for (int a = 0; a < 20; ++a) {
      Point y = ys.next();
      for (std::size_t k = 0; k < m; ++k) {
        scale = std::max(scale, std::abs(omega(y, k)));
        for (std::size_t l = k + 1; l < m; ++l) {
          Point ykp = y, ykm = y, ylp = y, ylm = y;
          ykp[k] += delta;
          ykm[k] -= delta;
          ylp[l] += delta;
          ylm[l] -= delta;
          double d = (omega(ykp, l) - omega(ykm, l)) / (2.0 * delta) -
                     (omega(ylp, k) - omega(ylm, k)) / (2.0 * delta);
          w = std::max(w, std::abs(d));
        }
      }
    }
    rep.closedness_witness = w / (1.0 + scale);
    rep.closedness_threshold = 1e-5 * tol_scale;
    rep.closed = rep.closedness_witness <= rep.closedness_threshold;

    bool periods_ok = true;
    for (const auto& loop : loops) {
      if (loop.comp.size() != m) {
        throw DomainError("loop has wrong dimension");
      }
      std::vector<Expr> vel(m);
      for (std::size_t k = 0; k < m; ++k) vel[k] = diff(loop.comp[k], "s");
      auto at = [&](double s) {
        Bindings b;
        b.set("s", s);
        Point y(m);
        for (std::size_t k = 0; k < m; ++k) y[k] = eval(loop.comp[k], b);
        return y;
      };
      Point y0 = at(0.0), y1 = at(1.0);
      if (ychart.wrap_distance(y0, y1) > 1e-8) {
        throw DomainError("loop endpoints do not close up: " +
                          point_to_string(y0) + " vs " + point_to_string(y1));
      }
      auto integrand = [&](double s) {
        Bindings b;
        b.set("s", s);
        Point y(m);
        for (std::size_t k = 0; k < m; ++k) y[k] = eval(loop.comp[k], b);
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          double vk = eval(vel[k], b);
          if (vk != 0.0) acc += omega(y, k) * vk;
        }
        return acc;
      };
      double P = adaptive_simpson(integrand, 0.0, 1.0, 1e-9);
      rep.periods.push_back(P);
      if (circle) {
        double ratio = P / *dec.holonomy;
        double defect = std::abs(ratio - std::round(ratio));
        rep.period_defects.push_back(defect);
        if (defect > 1e-6 * (1.0 + std::abs(ratio)) * tol_scale) periods_ok = false;
      } else {
        rep.period_defects.push_back(std::abs(P));
        if (std::abs(P) > 1e-6 * tol_scale) periods_ok = false;
      }
    }
    rep.liftable = rep.closed && periods_ok;
    out.liftable = out.liftable && rep.liftable;
    out.generators.push_back(std::move(rep));
  }
  return out;
}

}  // namespace pdemorph
