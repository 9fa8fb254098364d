#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pdemorph/projectibility.hpp"

namespace pdemorph {

struct OneForm {
  Chart chart;
  std::vector<Expr> comp;
};

enum class FiberTopology { Line, Circle };

/// A one-dimensional isometric group action presented through its quotient:
/// the generator eta, the projection to the orbit space with a global fiber
/// parametrization, and the fiber topology.
struct GroupFibering {
  MetricField metric;
  VectorField eta;
  Fibering fib;
  FiberTopology topology = FiberTopology::Line;

  /// Checks fiber dimension 1, eta nonvanishing and tangent to the fibers,
  /// and the isometry of the flow of eta (transport of the metric by an RK4
  /// flow step, compared by central differences).
  void validate(unsigned seed = 42) const;
};

/// Max deviation of the metric transported along the flow of eta, over
/// sampled points, relative to (1 + metric scale).
double killing_witness(const MetricField& g, const VectorField& eta,
                       unsigned seed = 42, std::size_t samples = 50);

/// chi = g(eta, .) / g(eta, eta), the principal connection form of the action.
OneForm connection_form(const GroupFibering& gf);

struct CurvatureReport {
  std::vector<std::vector<Expr>> dchi;  // (d chi)_ij = d_i chi_j - d_j chi_i
  double basic_witness = 0.0;     // fiber spread of the projected components
  double basic_threshold = 0.0;
  bool basic = false;
  double d2_witness = 0.0;        // finite-difference exterior derivative
  double d2_threshold = 0.0;
  /// Projected component (d chi')_kl at a base point (fiber-averaged).
  std::function<double(const Point& y, std::size_t k, std::size_t l)> projected;
};

CurvatureReport curvature(const GroupFibering& gf, unsigned seed = 42,
                          double tol_scale = 1.0);

/// chi = p* chi_base + (H / fiber period) ds + dh along the global fiber
/// coordinate s; for line fibers the middle term is absent and holonomy is
/// not defined.
struct Decomposition {
  std::function<double(const Point& y, std::size_t k)> chi_base;
  std::function<double(const Point& y, double s)> h;
  std::optional<double> holonomy;
  double residual = 0.0;
  double residual_threshold = 0.0;
};

Decomposition decompose(const GroupFibering& gf, unsigned seed = 42,
                        double tol_scale = 1.0);
/// Same split for an explicitly supplied form (the residual check then acts
/// as a test that the form is actually invariant).
Decomposition decompose(const GroupFibering& gf, const OneForm& chi,
                        unsigned seed = 42, double tol_scale = 1.0);

/// Closed loop in the base, components as expressions in the parameter "s"
/// over [0, 1]; endpoints must agree up to periodic identification.
struct Loop {
  std::vector<Expr> comp;
};

struct GeneratorReport {
  bool closed = false;
  double closedness_witness = 0.0;
  double closedness_threshold = 0.0;
  std::vector<double> periods;
  std::vector<double> period_defects;
  bool liftable = false;
};

struct LiftReport {
  std::vector<GeneratorReport> generators;
  bool liftable = false;
};

/// For each candidate base isometry g, forms omega = g* chi_base - chi_base
/// and decides liftability: omega must be closed (sampled by central
/// differences) and its loop periods must vanish (line fibers) or be integer
/// multiples of the holonomy (circle fibers).
LiftReport lift_check(const GroupFibering& gf, const Decomposition& dec,
                      const std::vector<std::vector<Expr>>& generators,
                      const std::vector<Loop>& loops, unsigned seed = 42,
                      double tol_scale = 1.0);

}  // namespace pdemorph
