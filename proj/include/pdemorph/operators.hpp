#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pdemorph/geometry.hpp"

namespace pdemorph {

/// Scalar coefficient of a parabolic operator. Either a symbolic expression
/// in (chart coordinates, "u", "t") or an opaque numeric callable; the latter
/// is used for numerically assembled operators, which downstream checks treat
/// with looser tolerances.
class Coef {
 public:
  using Fn = std::function<double(const Point& x, double u, double t)>;

  Coef();  // identically zero, symbolic
  Coef(Expr e, const Chart& chart);               // NOLINT(runtime/explicit)
  Coef(double c);                                 // NOLINT(runtime/explicit)
  static Coef function(Fn f, bool u_dep, bool t_dep);

  bool symbolic() const { return sym_.has_value(); }
  const Expr& expr() const;  // throws DomainError when not symbolic
  bool depends_on_u() const { return u_dep_; }
  bool depends_on_t() const { return t_dep_; }
  bool is_zero() const;  // structurally zero (symbolic constant 0)

  double operator()(const Point& x, double u, double t = 0.0) const;

 private:
  std::optional<Expr> sym_;
  Fn fn_;
  bool u_dep_ = false;
  bool t_dep_ = false;
};

/// Second-order operator u_t = b2^ij u_ij + c2^ij u_i u_j + b1^i u_i + q,
/// with coefficients depending on (x, u) and, when non-autonomous, t.
class ParabolicOperator {
 public:
  ParabolicOperator(Chart chart, std::vector<std::vector<Coef>> b2,
                    std::vector<std::vector<Coef>> c2, std::vector<Coef> b1,
                    Coef q, bool numeric_tier = false);

  static ParabolicOperator from_exprs(const Chart& chart,
                                      std::vector<std::vector<Expr>> b2,
                                      std::vector<std::vector<Expr>> c2,
                                      std::vector<Expr> b1, Expr q);

  const Chart& chart() const { return chart_; }
  std::size_t dim() const { return chart_.dim(); }

  const Coef& b2(std::size_t i, std::size_t j) const { return b2_[i][j]; }
  const Coef& c2(std::size_t i, std::size_t j) const { return c2_[i][j]; }
  const Coef& b1(std::size_t i) const { return b1_[i]; }
  const Coef& q() const { return q_; }

  bool autonomous() const { return autonomous_; }
  bool depends_on_u() const { return u_dep_; }
  /// True when coefficients came from numeric differentiation or tables.
  bool numeric_tier() const { return numeric_tier_; }

  /// Largest asymmetry |b2^ij - b2^ji| or |c2^ij - c2^ji| over samples.
  double symmetry_witness(unsigned seed = 42, std::size_t samples = 50) const;
  /// Throws DomainError if b2 fails positive definiteness at sampled points.
  void check_ellipticity(unsigned seed = 42, std::size_t samples = 50,
                         const std::vector<double>& u_values = {0.0}) const;

 private:
  Chart chart_;
  std::vector<std::vector<Coef>> b2_, c2_;
  std::vector<Coef> b1_;
  Coef q_;
  bool autonomous_ = true;
  bool u_dep_ = false;
  bool numeric_tier_ = false;
};

/// A scalar function of the chart coordinates with precomputed symbolic
/// first and second derivatives, ready for pointwise operator application.
struct TestFunction {
  Expr f;
  std::vector<Expr> grad;
  std::vector<std::vector<Expr>> hess;

  static TestFunction build(const Expr& f, const Chart& chart);
  double value(const Chart& chart, const Point& x) const;
};

/// (L f)(x) with the u-slot of the coefficients held at u_value.
double apply(const ParabolicOperator& L, const TestFunction& f, const Point& x,
             double u_value, double t = 0.0);
double apply(const ParabolicOperator& L, const Expr& f, const Point& x,
             double u_value, double t = 0.0);
/// Same, with the u-slot set to f(x) itself.
double apply_self(const ParabolicOperator& L, const TestFunction& f,
                  const Point& x, double t = 0.0);

/// Laplace-Beltrami operator of g. Symbolic coefficients for dim <= 3; for
/// higher dimensions the first-order terms come from central differences of
/// the numeric inverse (step 1e-5) and the result is marked numeric-tier.
ParabolicOperator laplace_beltrami(const MetricField& g);

/// u_t = a(u) * (Laplace-Beltrami) + q(u); requires a > 0 on u_range,
/// checked at 64 sample values.
ParabolicOperator heat_operator(const MetricField& g, const Expr& a,
                                const Expr& q,
                                std::optional<Interval> u_range = {});

/// Fixed family of probe functions on a chart: degree <= 2 monomials plus
/// four non-polynomial shapes, all defined on the chart box.
std::vector<Expr> test_function_family(const Chart& chart);

struct InvarianceReport {
  double witness = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::size_t points_used = 0;
  std::size_t points_skipped = 0;
};

/// Samples max |(L f)(T x) - (L (f o T))(x)| over a family of test functions,
/// 200 chart points, and (for u-dependent L) a fixed list of u values. Points
/// where T leaves the chart or a coefficient fails to evaluate are skipped
/// and counted.
InvarianceReport invariance_check(const ParabolicOperator& L,
                                  const std::vector<Expr>& transform,
                                  unsigned seed = 42, double tol_scale = 1.0);

enum class DiffusivityClass { Arbitrary, Power, Exponential, Constant };

std::string to_string(DiffusivityClass c);

struct Classification {
  DiffusivityClass cls = DiffusivityClass::Arbitrary;
  double a0 = 0.0;
  double u0 = 0.0;      // Power only
  double lambda = 0.0;  // Power and Exponential
  double residual = 0.0;
};

/// Classifies a(u) on the open interval u_range by the shape of a'/a,
/// most specific class first. Requires a > 0 on the range. Reports an
/// ambiguity error (DomainError) if two distinct non-constant classes fit
/// below the residual threshold.
Classification classify_diffusivity(const Expr& a, const Interval& u_range);

/// Data selecting one of the canonical reduced forms.
struct CanonicalCase {
  DiffusivityClass cls = DiffusivityClass::Arbitrary;
  Expr beta;           // positive factor on the base chart
  double lambda = 0.0; // Power / Exponential exponent, must be nonzero there
  double q0 = 0.0;
};

/// The reduced-side operator D for the canonical change of unknown:
///   generic through constant: D f = Laplace-Beltrami f
///   power:        D f = beta^l LB(f) + 2 beta^(l-1) g(grad beta, grad f)
///                      + beta^(l-1) (LB(beta) + q0 beta) f
///   exponential:  D f = exp(l beta) (LB(f) + LB(beta) + q0)
/// The f-proportional parts occupy the q slot linearly in u.
ParabolicOperator canonical_operator_D(const CanonicalCase& c,
                                       const MetricField& g);

/// Pointwise map between charts, with the change of unknown u -> v.
/// u_map is an expression in (source coordinates, "u"); when u_map_inverse
/// is absent the inverse is found numerically (u_map must be strictly
/// monotone in u, which validate() samples).
struct Morphism {
  Chart source;
  Chart target;
  std::vector<Expr> x_map;             // target coords as functions of source
  Expr u_map;                          // v = u_map(x, u)
  std::optional<Expr> u_map_inverse;   // u = u_map_inverse(x, "v")

  void validate(unsigned seed = 42) const;
  Point map_point(const Point& x) const;
  double push_u(const Point& x, double u) const;
  /// Solves u_map(x, u) = v for u (closed form when provided).
  double pull_u(const Point& x, double v) const;
};

/// Change of unknown attached to a canonical case: v = u / beta for the
/// power family, v = u - beta for the exponential one, v = u otherwise.
Morphism canonical_morphism(const CanonicalCase& c, const Chart& source,
                            const Chart& target,
                            const std::vector<Expr>& x_map);

/// Max over samples of |c2^ij - rho * b2^ij| for the best pointwise rho;
/// zero (up to tolerance) iff the first-order quadratic part is proportional
/// to the principal part, the shape preserved by coordinate morphisms.
double proportionality_witness(const ParabolicOperator& L, unsigned seed = 42,
                               std::size_t samples = 50);

}  // namespace pdemorph
