#include "pdemorph/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
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

void check_coef_vars(const Expr& e, const Chart& chart) {
  for (const auto& v : free_vars(e)) {
    if (v == "u" || v == "t") continue;
    if (std::find(chart.coords.begin(), chart.coords.end(), v) ==
        chart.coords.end()) {
      throw DomainError("coefficient uses unknown variable '" + v + "'");
    }
  }
}

}  // namespace

Coef::Coef() : sym_(Expr::constant(0.0)) {}

Coef::Coef(double c) : sym_(Expr::constant(c)) {}

Coef::Coef(Expr e, const Chart& chart) : sym_(std::move(e)) {
  check_coef_vars(*sym_, chart);
  u_dep_ = depends_on(*sym_, "u");
  t_dep_ = depends_on(*sym_, "t");
  std::vector<std::string> coords = chart.coords;
  Expr body = *sym_;
  fn_ = [coords, body](const Point& x, double u, double t) {
    Bindings b;
    for (std::size_t i = 0; i < coords.size() && i < x.size(); ++i) {
      b.set(coords[i], x[i]);
    }
    b.set("u", u);
    b.set("t", t);
    return eval(body, b);
  };
}

Coef Coef::function(Fn f, bool u_dep, bool t_dep) {
  Coef c;
  c.sym_.reset();
  c.fn_ = std::move(f);
  c.u_dep_ = u_dep;
  c.t_dep_ = t_dep;
  return c;
}

const Expr& Coef::expr() const {
  if (!sym_) throw DomainError("coefficient has no symbolic form");
  return *sym_;
}

bool Coef::is_zero() const {
  return sym_ && sym_->is_constant(0.0);
}

double Coef::operator()(const Point& x, double u, double t) const {
  if (fn_) return fn_(x, u, t);
  return eval(*sym_, Bindings{});  // constant built by Coef() / Coef(double)
}

ParabolicOperator::ParabolicOperator(Chart chart,
                                     std::vector<std::vector<Coef>> b2,
                                     std::vector<std::vector<Coef>> c2,
                                     std::vector<Coef> b1, Coef q,
                                     bool numeric_tier)
    : chart_(std::move(chart)),
      b2_(std::move(b2)),
      c2_(std::move(c2)),
      b1_(std::move(b1)),
      q_(std::move(q)),
      numeric_tier_(numeric_tier) {
  chart_.validate();
  std::size_t n = chart_.dim();
  auto check_square = [n](const std::vector<std::vector<Coef>>& m,
                          const char* what) {
    if (m.size() != n) throw DomainError(std::string(what) + " has wrong row count");
    for (const auto& row : m) {
      if (row.size() != n) {
        throw DomainError(std::string(what) + " has wrong column count");
      }
    }
  };
  check_square(b2_, "principal coefficient matrix");
  check_square(c2_, "gradient-quadratic coefficient matrix");
  if (b1_.size() != n) throw DomainError("first-order coefficient has wrong size");

  autonomous_ = !q_.depends_on_t();
  u_dep_ = q_.depends_on_u();
  for (std::size_t i = 0; i < n; ++i) {
    autonomous_ = autonomous_ && !b1_[i].depends_on_t();
    u_dep_ = u_dep_ || b1_[i].depends_on_u();
    for (std::size_t j = 0; j < n; ++j) {
      autonomous_ = autonomous_ && !b2_[i][j].depends_on_t() &&
                    !c2_[i][j].depends_on_t();
      u_dep_ = u_dep_ || b2_[i][j].depends_on_u() || c2_[i][j].depends_on_u();
    }
  }
}

ParabolicOperator ParabolicOperator::from_exprs(
    const Chart& chart, std::vector<std::vector<Expr>> b2,
    std::vector<std::vector<Expr>> c2, std::vector<Expr> b1, Expr q) {
  std::size_t n = chart.dim();
  auto wrap_matrix = [&](std::vector<std::vector<Expr>>& m) {
    std::vector<std::vector<Coef>> out(n);
    if (m.size() != n) throw DomainError("coefficient matrix has wrong row count");
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i].size() != n) {
        throw DomainError("coefficient matrix has wrong column count");
      }
      for (std::size_t j = 0; j < n; ++j) out[i].emplace_back(m[i][j], chart);
    }
    return out;
  };
  std::vector<Coef> b1c;
  if (b1.size() != n) throw DomainError("first-order coefficient has wrong size");
  for (auto& e : b1) b1c.emplace_back(e, chart);
  return ParabolicOperator(chart, wrap_matrix(b2), wrap_matrix(c2),
                           std::move(b1c), Coef(q, chart));
}

double ParabolicOperator::symmetry_witness(unsigned seed,
                                           std::size_t samples) const {
  ChartSampler sampler(chart_, seed);
  std::vector<double> us = u_dep_ ? std::vector<double>{-1.0, 0.1, 2.0}
                                  : std::vector<double>{0.0};
  double w = 0.0;
  std::size_t n = dim();
  for (std::size_t k = 0; k < samples; ++k) {
    Point x = sampler.next();
    for (double u : us) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          w = std::max(w, std::abs(b2_[i][j](x, u) - b2_[j][i](x, u)));
          w = std::max(w, std::abs(c2_[i][j](x, u) - c2_[j][i](x, u)));
        }
      }
    }
  }
  return w;
}

void ParabolicOperator::check_ellipticity(unsigned seed, std::size_t samples,
                                          const std::vector<double>& u_values) const {
  ChartSampler sampler(chart_, seed);
  std::size_t n = dim();
  for (std::size_t k = 0; k < samples; ++k) {
    Point x = sampler.next();
    for (double u : u_values) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              0.5 * (b2_[i][j](x, u) + b2_[j][i](x, u));
        }
      }
      Eigen::LLT<Eigen::MatrixXd> llt(m);
      if (llt.info() != Eigen::Success) {
        throw DomainError("principal part fails positive definiteness at " +
                          point_to_string(x) + " with u=" + std::to_string(u));
      }
    }
  }
}

TestFunction TestFunction::build(const Expr& f, const Chart& chart) {
  TestFunction tf;
  tf.f = f;
  std::size_t n = chart.dim();
  tf.grad.resize(n);
  tf.hess.assign(n, std::vector<Expr>(n));
  for (std::size_t i = 0; i < n; ++i) tf.grad[i] = diff(f, chart.coords[i]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      tf.hess[i][j] = diff(tf.grad[i], chart.coords[j]);
      tf.hess[j][i] = tf.hess[i][j];
    }
  }
  return tf;
}

double TestFunction::value(const Chart& chart, const Point& x) const {
  return eval(f, chart.bind(x));
}

double apply(const ParabolicOperator& L, const TestFunction& f, const Point& x,
             double u_value, double t) {
  const Chart& chart = L.chart();
  Bindings b = chart.bind(x);
  b.set("u", u_value);
  b.set("t", t);
  std::size_t n = L.dim();
  std::vector<double> fi(n);
  for (std::size_t i = 0; i < n; ++i) fi[i] = eval(f.grad[i], b);

  double acc = L.q()(x, u_value, t);
  for (std::size_t i = 0; i < n; ++i) {
    acc += L.b1(i)(x, u_value, t) * fi[i];
    for (std::size_t j = 0; j < n; ++j) {
      const Coef& bij = L.b2(i, j);
      if (!bij.is_zero()) acc += bij(x, u_value, t) * eval(f.hess[i][j], b);
      const Coef& cij = L.c2(i, j);
      if (!cij.is_zero()) acc += cij(x, u_value, t) * fi[i] * fi[j];
    }
  }
  return acc;
}

double apply(const ParabolicOperator& L, const Expr& f, const Point& x,
             double u_value, double t) {
  return apply(L, TestFunction::build(f, L.chart()), x, u_value, t);
}

double apply_self(const ParabolicOperator& L, const TestFunction& f,
                  const Point& x, double t) {
  return apply(L, f, x, f.value(L.chart(), x), t);
}

namespace {

// Symbolic determinant and inverse for n <= 3 via cofactor expansion.
struct SymbolicInverse {
  Expr det;
  std::vector<std::vector<Expr>> inv;
};

SymbolicInverse symbolic_inverse(const MetricField& g) {
  std::size_t n = g.dim();
  auto e = [&](std::size_t i, std::size_t j) { return g.entry(i, j); };
  SymbolicInverse out;
  out.inv.assign(n, std::vector<Expr>(n));
  if (n == 1) {
    out.det = e(0, 0);
    out.inv[0][0] = Expr::constant(1.0) / out.det;
    return out;
  }
  if (n == 2) {
    out.det = e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0);
    out.inv[0][0] = e(1, 1) / out.det;
    out.inv[1][1] = e(0, 0) / out.det;
    out.inv[0][1] = (Expr::constant(0.0) - e(0, 1)) / out.det;
    out.inv[1][0] = out.inv[0][1];
    return out;
  }
  if (n == 3) {
    auto minor2 = [&](std::size_t r0, std::size_t r1, std::size_t c0,
                      std::size_t c1) {
      return e(r0, c0) * e(r1, c1) - e(r0, c1) * e(r1, c0);
    };
    out.det = e(0, 0) * minor2(1, 2, 1, 2) - e(0, 1) * minor2(1, 2, 0, 2) +
              e(0, 2) * minor2(1, 2, 0, 1);
    // inverse = adjugate / det; cofactor C_ij lands at inv[j][i].
    std::vector<std::vector<Expr>> cof(3, std::vector<Expr>(3));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        std::size_t r0 = (i == 0) ? 1 : 0;
        std::size_t r1 = (i == 2) ? 1 : 2;
        std::size_t c0 = (j == 0) ? 1 : 0;
        std::size_t c1 = (j == 2) ? 1 : 2;
        Expr m = minor2(r0, r1, c0, c1);
        cof[i][j] = ((i + j) % 2 == 0) ? m : (Expr::constant(0.0) - m);
      }
    }
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        out.inv[i][j] = cof[j][i] / out.det;
      }
    }
    return out;
  }
  throw DomainError("symbolic inverse supports dimension <= 3");
}

// Shared per-point state for numerically assembled Laplace-Beltrami
// coefficients in dimension >= 4.
struct NumericLBCore {
  MetricField g;
  double h = 1e-5;
  mutable Point cached_x;
  mutable Eigen::MatrixXd inv;
  mutable Eigen::VectorXd b1;

  explicit NumericLBCore(const MetricField& metric) : g(metric) {}

  void refresh(const Point& x) const {
    if (x == cached_x && cached_x.size() == x.size() && !cached_x.empty()) return;
    std::size_t n = g.dim();
    inv = metric_inverse(g, x);
    double sqrtdet = std::sqrt(g.det_value(x));
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      Point xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      Eigen::MatrixXd fp = std::sqrt(g.det_value(xp)) * metric_inverse(g, xp);
      Eigen::MatrixXd fm = std::sqrt(g.det_value(xm)) * metric_inverse(g, xm);
      for (std::size_t j = 0; j < n; ++j) {
        acc[static_cast<Eigen::Index>(j)] +=
            (fp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -
             fm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) /
            (2.0 * h);
      }
    }
    b1 = acc / sqrtdet;
    cached_x = x;
  }
};

}  // namespace

ParabolicOperator laplace_beltrami(const MetricField& g) {
  std::size_t n = g.dim();
  const Chart& chart = g.chart();
  std::vector<std::vector<Expr>> zero(n, std::vector<Expr>(n, Expr::constant(0.0)));
  if (n <= 3) {
    SymbolicInverse si = symbolic_inverse(g);
    Expr sqrtdet = sqrt(si.det);
    std::vector<Expr> b1(n, Expr::constant(0.0));
    for (std::size_t j = 0; j < n; ++j) {
      Expr acc = Expr::constant(0.0);
      for (std::size_t i = 0; i < n; ++i) {
        acc = acc + diff(sqrtdet * si.inv[i][j], chart.coords[i]);
      }
      b1[j] = acc / sqrtdet;
    }
    return ParabolicOperator::from_exprs(chart, si.inv, zero, b1,
                                         Expr::constant(0.0));
  }

  auto core = std::make_shared<NumericLBCore>(g);
  std::vector<std::vector<Coef>> b2(n), c2(n);
  std::vector<Coef> b1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      b2[i].push_back(Coef::function(
          [core, i, j](const Point& x, double, double) {
            core->refresh(x);
            return core->inv(static_cast<Eigen::Index>(i),
                             static_cast<Eigen::Index>(j));
          },
          false, false));
      c2[i].push_back(Coef());
    }
    b1.push_back(Coef::function(
        [core, i](const Point& x, double, double) {
          core->refresh(x);
          return core->b1[static_cast<Eigen::Index>(i)];
        },
        false, false));
  }
  return ParabolicOperator(chart, std::move(b2), std::move(c2), std::move(b1),
                           Coef(), /*numeric_tier=*/true);
}

ParabolicOperator heat_operator(const MetricField& g, const Expr& a,
                                const Expr& q, std::optional<Interval> u_range) {
  for (const auto& v : free_vars(a)) {
    if (v != "u") throw DomainError("diffusivity must depend on 'u' only");
  }
  for (const auto& v : free_vars(q)) {
    if (v != "u") throw DomainError("source term must depend on 'u' only");
  }
  if (u_range) {
    for (int k = 0; k < 64; ++k) {
      double u = u_range->lo + (k + 0.5) * (u_range->hi - u_range->lo) / 64.0;
      double av = eval(a, Bindings{}.set("u", u));
      if (!(av > 0.0)) {
        throw DomainError("diffusivity is not positive at u=" + std::to_string(u));
      }
    }
  }

  ParabolicOperator lb = laplace_beltrami(g);
  std::size_t n = g.dim();
  const Chart& chart = g.chart();

  if (!lb.numeric_tier()) {
    std::vector<std::vector<Expr>> b2(n, std::vector<Expr>(n)),
        c2(n, std::vector<Expr>(n, Expr::constant(0.0)));
    std::vector<Expr> b1(n);
    for (std::size_t i = 0; i < n; ++i) {
      b1[i] = a * lb.b1(i).expr();
      for (std::size_t j = 0; j < n; ++j) b2[i][j] = a * lb.b2(i, j).expr();
    }
    return ParabolicOperator::from_exprs(chart, b2, c2, b1, q);
  }

  auto scale = [a](const Coef& base) {
    return Coef::function(
        [a, base](const Point& x, double u, double t) {
          double av = eval(a, Bindings{}.set("u", u));
          return av * base(x, u, t);
        },
        true, base.depends_on_t());
  };
  std::vector<std::vector<Coef>> b2(n), c2(n);
  std::vector<Coef> b1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      b2[i].push_back(scale(lb.b2(i, j)));
      c2[i].push_back(Coef());
    }
    b1.push_back(scale(lb.b1(i)));
  }
  return ParabolicOperator(chart, std::move(b2), std::move(c2), std::move(b1),
                           Coef(q, chart), /*numeric_tier=*/true);
}

std::vector<Expr> test_function_family(const Chart& chart) {
  std::size_t n = chart.dim();
  std::vector<Expr> fam;
  fam.push_back(Expr::constant(1.0));
  std::vector<Expr> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = Expr::variable(chart.coords[i]);
  for (std::size_t i = 0; i < n; ++i) fam.push_back(y[i]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) fam.push_back(y[i] * y[j]);
  }
  Expr y0 = y[0];
  Expr y1 = y[n > 1 ? 1 : 0];
  Expr ylast = y[n - 1];
  fam.push_back(exp(Expr::constant(0.3) * y0));
  fam.push_back(sin(y1));
  fam.push_back(cos(Expr::constant(0.7) * y0 + Expr::constant(0.3) * ylast));
  // Offset keeps the argument positive on every chart box in use.
  double shift = 1.0;
  for (const auto& r : chart.ranges) {
    shift = std::max(shift, 2.0 * std::max(std::abs(r.lo), std::abs(r.hi)));
  }
  fam.push_back(log(Expr::constant(2.0 * shift) + y0));
  return fam;
}

InvarianceReport invariance_check(const ParabolicOperator& L,
                                  const std::vector<Expr>& transform,
                                  unsigned seed, double tol_scale) {
  const Chart& chart = L.chart();
  std::size_t n = chart.dim();
  if (transform.size() != n) {
    throw DomainError("transform has " + std::to_string(transform.size()) +
                      " components for dimension " + std::to_string(n));
  }
  for (const auto& e : transform) {
    for (const auto& v : free_vars(e)) {
      if (std::find(chart.coords.begin(), chart.coords.end(), v) ==
          chart.coords.end()) {
        throw DomainError("transform uses unknown variable '" + v + "'");
      }
    }
  }

  std::vector<Expr> fam = test_function_family(chart);
  std::map<std::string, Expr> sub;
  for (std::size_t i = 0; i < n; ++i) sub[chart.coords[i]] = transform[i];

  std::vector<TestFunction> direct, pulled;
  for (const auto& f : fam) {
    direct.push_back(TestFunction::build(f, chart));
    pulled.push_back(TestFunction::build(subst(f, sub), chart));
  }

  std::vector<double> us = L.depends_on_u()
                               ? std::vector<double>{-1.0, -0.3, 0.1, 0.7, 2.0}
                               : std::vector<double>{0.0};

  InvarianceReport rep;
  ChartSampler sampler(chart, seed);
  double scale = 0.0;
  for (std::size_t k = 0; k < 200; ++k) {
    Point x = sampler.next();
    Point tx(n);
    bool ok = true;
    try {
      Bindings b = chart.bind(x);
      for (std::size_t i = 0; i < n; ++i) tx[i] = eval(transform[i], b);
    } catch (const EvalError&) {
      ok = false;
    }
    if (ok && (!chart.contains(tx))) ok = false;
    if (!ok) {
      ++rep.points_skipped;
      continue;
    }
    ++rep.points_used;
    for (std::size_t fi = 0; fi < fam.size(); ++fi) {
      for (double u : us) {
        double lhs, rhs;
        try {
          lhs = apply(L, direct[fi], tx, u);
          rhs = apply(L, pulled[fi], x, u);
        } catch (const EvalError&) {
          ++rep.points_skipped;
          continue;
        }
        scale = std::max(scale, std::abs(lhs));
        rep.witness = std::max(rep.witness, std::abs(lhs - rhs));
      }
    }
  }
  if (rep.points_used < 50) {
    throw DomainError("invariance check retained only " +
                      std::to_string(rep.points_used) + " of 200 sample points");
  }
  double base = L.numeric_tier() ? 1e-5 : 1e-6;
  rep.threshold = tol_scale * base * (1.0 + scale);
  rep.pass = rep.witness <= rep.threshold;
  return rep;
}

std::string to_string(DiffusivityClass c) {
  switch (c) {
    case DiffusivityClass::Arbitrary: return "arbitrary";
    case DiffusivityClass::Power: return "power";
    case DiffusivityClass::Exponential: return "exponential";
    case DiffusivityClass::Constant: return "constant";
  }
  return "?";
}

Classification classify_diffusivity(const Expr& a, const Interval& u_range) {
  if (!(u_range.lo < u_range.hi)) throw DomainError("empty u-range");
  for (const auto& v : free_vars(a)) {
    if (v != "u") throw DomainError("diffusivity must depend on 'u' only");
  }
  constexpr int kSamples = 64;
  constexpr double kFitThreshold = 1e-8;
  Expr s_expr = diff(a, "u") / a;

  std::vector<double> u(kSamples), av(kSamples), s(kSamples);
  for (int k = 0; k < kSamples; ++k) {
    u[k] = u_range.lo + (k + 0.5) * (u_range.hi - u_range.lo) / kSamples;
    Bindings b;
    b.set("u", u[k]);
    av[k] = eval(a, b);
    if (!(av[k] > 0.0)) {
      throw DomainError("diffusivity is not positive at u=" + std::to_string(u[k]));
    }
    s[k] = eval(s_expr, b);
  }

  double smax = 0.0;
  for (double v : s) smax = std::max(smax, std::abs(v));
  double rel = std::max(1.0, smax);

  Classification out;
  if (smax / rel < kFitThreshold) {
    out.cls = DiffusivityClass::Constant;
    double sum = 0.0;
    for (double v : av) sum += v;
    out.a0 = sum / kSamples;
    out.residual = smax / rel;
    return out;
  }

  // Exponential fit: s constant.
  double s_mean = 0.0;
  for (double v : s) s_mean += v;
  s_mean /= kSamples;
  double exp_res = 0.0;
  for (double v : s) exp_res = std::max(exp_res, std::abs(v - s_mean));
  exp_res /= rel;

  // Power fit: 1/s affine in u.
  double pow_res = std::numeric_limits<double>::infinity();
  double lambda_p = 0.0, u0_p = 0.0;
  double s_min_abs = std::numeric_limits<double>::infinity();
  for (double v : s) s_min_abs = std::min(s_min_abs, std::abs(v));
  if (s_min_abs > 1e-12 * rel) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int k = 0; k < kSamples; ++k) {
      double z = 1.0 / s[k];
      sx += u[k];
      sy += z;
      sxx += u[k] * u[k];
      sxy += u[k] * z;
    }
    double denom = kSamples * sxx - sx * sx;
    double alpha = (kSamples * sxy - sx * sy) / denom;
    double gamma = (sy - alpha * sx) / kSamples;
    if (std::abs(alpha) > 1e-12) {
      lambda_p = 1.0 / alpha;
      u0_p = -gamma * lambda_p;
      pow_res = 0.0;
      for (int k = 0; k < kSamples; ++k) {
        double d = u[k] - u0_p;
        if (std::abs(d) < 1e-12) {
          pow_res = std::numeric_limits<double>::infinity();
          break;
        }
        pow_res = std::max(pow_res, std::abs(s[k] - lambda_p / d));
      }
      pow_res /= rel;
    }
  }

  bool exp_fits = exp_res < kFitThreshold;
  bool pow_fits = pow_res < kFitThreshold;
  if (exp_fits && pow_fits) {
    throw DomainError("classification ambiguous: both power and exponential "
                      "shapes fit with residuals " + std::to_string(pow_res) +
                      " and " + std::to_string(exp_res));
  }

  auto consistent_mean = [&](auto&& model) {
    double mn = std::numeric_limits<double>::infinity();
    double mx = -mn;
    double sum = 0.0;
    for (int k = 0; k < kSamples; ++k) {
      double c = model(k);
      if (!std::isfinite(c)) throw DomainError("class parameters not representable on the range");
      mn = std::min(mn, c);
      mx = std::max(mx, c);
      sum += c;
    }
    double mean = sum / kSamples;
    if (mx - mn > 1e-6 * std::max(1.0, std::abs(mean))) {
      throw DomainError("class parameter extraction inconsistent across samples");
    }
    return mean;
  };

  if (pow_fits) {
    out.cls = DiffusivityClass::Power;
    out.lambda = lambda_p;
    out.u0 = u0_p;
    out.residual = pow_res;
    out.a0 = consistent_mean([&](int k) {
      return av[k] / std::pow(std::abs(u[k] - u0_p), lambda_p);
    });
    return out;
  }
  if (exp_fits) {
    out.cls = DiffusivityClass::Exponential;
    out.lambda = s_mean;
    out.residual = exp_res;
    out.a0 = consistent_mean(
        [&](int k) { return av[k] * std::exp(-s_mean * u[k]); });
    return out;
  }
  out.cls = DiffusivityClass::Arbitrary;
  out.residual = std::min(exp_res, pow_res);
  return out;
}

ParabolicOperator canonical_operator_D(const CanonicalCase& c,
                                       const MetricField& g) {
  std::size_t n = g.dim();
  const Chart& chart = g.chart();
  if (n > 3) {
    throw DomainError("canonical form requires symbolic coefficients (dimension <= 3)");
  }
  ParabolicOperator lb = laplace_beltrami(g);

  if (c.cls == DiffusivityClass::Arbitrary ||
      c.cls == DiffusivityClass::Constant) {
    return lb;
  }
  if (c.lambda == 0.0) {
    throw DomainError("canonical " + to_string(c.cls) +
                      " case requires a nonzero exponent");
  }
  for (const auto& v : free_vars(c.beta)) {
    if (std::find(chart.coords.begin(), chart.coords.end(), v) ==
        chart.coords.end()) {
      throw DomainError("factor uses unknown variable '" + v + "'");
    }
  }

  // LB(beta) assembled from the symbolic coefficients.
  Expr lb_beta = Expr::constant(0.0);
  std::vector<Expr> beta_i(n);
  for (std::size_t i = 0; i < n; ++i) beta_i[i] = diff(c.beta, chart.coords[i]);
  for (std::size_t i = 0; i < n; ++i) {
    lb_beta = lb_beta + lb.b1(i).expr() * beta_i[i];
    for (std::size_t j = 0; j < n; ++j) {
      lb_beta = lb_beta + lb.b2(i, j).expr() * diff(beta_i[i], chart.coords[j]);
    }
  }

  std::vector<std::vector<Expr>> b2(n, std::vector<Expr>(n)),
      c2(n, std::vector<Expr>(n, Expr::constant(0.0)));
  std::vector<Expr> b1(n);
  Expr lam = Expr::constant(c.lambda);
  Expr q0 = Expr::constant(c.q0);

  if (c.cls == DiffusivityClass::Power) {
    Expr bl = pow(c.beta, lam);
    Expr blm1 = pow(c.beta, Expr::constant(c.lambda - 1.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) b2[i][j] = bl * lb.b2(i, j).expr();
    }
    for (std::size_t j = 0; j < n; ++j) {
      Expr grad_pair = Expr::constant(0.0);
      for (std::size_t i = 0; i < n; ++i) {
        grad_pair = grad_pair + lb.b2(i, j).expr() * beta_i[i];
      }
      b1[j] = bl * lb.b1(j).expr() + Expr::constant(2.0) * blm1 * grad_pair;
    }
    Expr q = blm1 * (lb_beta + q0 * c.beta) * Expr::variable("u");
    return ParabolicOperator::from_exprs(chart, b2, c2, b1, q);
  }

  // Exponential.
  Expr s = exp(lam * c.beta);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) b2[i][j] = s * lb.b2(i, j).expr();
    b1[i] = s * lb.b1(i).expr();
  }
  Expr q = s * (lb_beta + q0);
  return ParabolicOperator::from_exprs(chart, b2, c2, b1, q);
}

void Morphism::validate(unsigned seed) const {
  source.validate();
  target.validate();
  if (x_map.size() != target.dim()) {
    throw DomainError("morphism maps to " + std::to_string(x_map.size()) +
                      " coordinates, target has " + std::to_string(target.dim()));
  }
  for (const auto& e : x_map) {
    for (const auto& v : free_vars(e)) {
      if (std::find(source.coords.begin(), source.coords.end(), v) ==
          source.coords.end()) {
        throw DomainError("coordinate map uses unknown variable '" + v + "'");
      }
    }
  }
  for (const auto& v : free_vars(u_map)) {
    if (v == "u") continue;
    if (std::find(source.coords.begin(), source.coords.end(), v) ==
        source.coords.end()) {
      throw DomainError("unknown map uses unknown variable '" + v + "'");
    }
  }

  Expr du = diff(u_map, "u");
  ChartSampler sampler(source, seed);
  int sign = 0;
  for (int k = 0; k < 50; ++k) {
    Point x = sampler.next();
    Bindings b = source.bind(x);
    for (int m = 0; m <= 12; ++m) {
      double u = -3.0 + 0.5 * m;
      b.set("u", u);
      double d = eval(du, b);
      if (std::abs(d) < 1e-9) {
        throw DomainError("unknown map is not strictly monotone in u at " +
                          point_to_string(x) + ", u=" + std::to_string(u));
      }
      int sg = d > 0 ? 1 : -1;
      if (sign == 0) sign = sg;
      if (sg != sign) {
        throw DomainError("unknown map changes monotonicity direction");
      }
      if (u_map_inverse) {
        double v = eval(u_map, b);
        Bindings bi = source.bind(x);
        bi.set("v", v);
        double back = eval(*u_map_inverse, bi);
        if (std::abs(back - u) > 1e-8 * (1.0 + std::abs(u))) {
          throw DomainError("declared inverse fails round trip at " +
                            point_to_string(x));
        }
      }
    }
  }
}

Point Morphism::map_point(const Point& x) const {
  Bindings b = source.bind(x);
  Point y(x_map.size());
  for (std::size_t i = 0; i < x_map.size(); ++i) y[i] = eval(x_map[i], b);
  return y;
}

double Morphism::push_u(const Point& x, double u) const {
  Bindings b = source.bind(x);
  b.set("u", u);
  return eval(u_map, b);
}

double Morphism::pull_u(const Point& x, double v) const {
  if (u_map_inverse) {
    Bindings b = source.bind(x);
    b.set("v", v);
    return eval(*u_map_inverse, b);
  }
  // Monotone bisection on an expanding bracket.
  auto h = [&](double u) { return push_u(x, u) - v; };
  double lo = -1.0, hi = 1.0;
  double flo = h(lo), fhi = h(hi);
  int guard = 0;
  while (flo * fhi > 0.0) {
    lo *= 2.0;
    hi *= 2.0;
    flo = h(lo);
    fhi = h(hi);
    if (++guard > 60) {
      throw DomainError("no bracket for the inverse unknown map at " +
                        point_to_string(x));
    }
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = h(mid);
    if (fm == 0.0 || (hi - lo) < 1e-15 * (1.0 + std::abs(mid))) return mid;
    if (flo * fm <= 0.0) {
      hi = mid;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return 0.5 * (lo + hi);
}

Morphism canonical_morphism(const CanonicalCase& c, const Chart& source,
                            const Chart& target,
                            const std::vector<Expr>& x_map) {
  Morphism m;
  m.source = source;
  m.target = target;
  m.x_map = x_map;
  Expr u = Expr::variable("u");
  Expr v = Expr::variable("v");
  switch (c.cls) {
    case DiffusivityClass::Power:
      if (c.lambda == 0.0) throw DomainError("power case requires a nonzero exponent");
      m.u_map = u / c.beta;
      m.u_map_inverse = v * c.beta;
      break;
    case DiffusivityClass::Exponential:
      if (c.lambda == 0.0) {
        throw DomainError("exponential case requires a nonzero exponent");
      }
      m.u_map = u - c.beta;
      m.u_map_inverse = v + c.beta;
      break;
    default:
      m.u_map = u;
      m.u_map_inverse = v;
      break;
  }
  return m;
}

double proportionality_witness(const ParabolicOperator& L, unsigned seed,
                               std::size_t samples) {
  ChartSampler sampler(L.chart(), seed);
  std::size_t n = L.dim();
  std::vector<double> us = L.depends_on_u()
                               ? std::vector<double>{-1.0, -0.3, 0.1, 0.7, 2.0}
                               : std::vector<double>{0.0};
  double w = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    Point x = sampler.next();
    for (double u : us) {
      double bb = 0.0, cb = 0.0, cmax = 0.0;
      std::vector<double> bv(n * n), cv(n * n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double b = L.b2(i, j)(x, u);
          double c = L.c2(i, j)(x, u);
          bv[i * n + j] = b;
          cv[i * n + j] = c;
          bb += b * b;
          cb += c * b;
          cmax = std::max(cmax, std::abs(c));
        }
      }
      double rho = bb > 0.0 ? cb / bb : 0.0;
      for (std::size_t idx = 0; idx < n * n; ++idx) {
        w = std::max(w, std::abs(cv[idx] - rho * bv[idx]) / (1.0 + cmax));
      }
    }
  }
  return w;
}

}  // namespace pdemorph
