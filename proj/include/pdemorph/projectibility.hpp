#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdemorph/operators.hpp"

namespace pdemorph {

/// Smooth map between charts, components given in source coordinates.
struct SmoothMap {
  Chart source;
  Chart target;
  std::vector<Expr> components;

  void validate() const;
  Point value(const Point& x) const;
  /// True iff every component is a bare source coordinate; fills axes with
  /// the source axis index of each target coordinate.
  bool coordinate_projection(std::vector<std::size_t>* axes = nullptr) const;
};

/// Surjection p : X -> Y together with a global parametrization of its
/// fibers: section(y, s) is a source point for every target point y and
/// parameter s, with p(section(y, s)) == y.
struct Fibering {
  SmoothMap p;
  std::vector<std::string> params;
  std::vector<Interval> param_ranges;
  std::vector<Expr> section;  // source coords in (target coords, params)

  std::size_t base_dim() const { return p.target.dim(); }
  std::size_t fiber_dim() const { return params.size(); }
  void validate(unsigned seed = 42, double tol = 1e-8) const;
  Point point(const Point& y, const Point& s) const;
};

struct ProjectionSettings {
  unsigned seed = 42;
  std::size_t base_points = 50;
  std::size_t fiber_samples = 20;
  double tol_scale = 1.0;
  std::size_t grid_nodes = 17;  // recovered-table nodes per base axis
};

struct FiberConstancyReport {
  bool constant = false;
  double witness = 0.0;  // max per-fiber spread over (1 + field scale)
  double threshold = 0.0;
  Point worst_y;
  std::size_t points_used = 0;
  std::size_t points_skipped = 0;
};

/// Measures how far a scalar field on the source is from being constant
/// along the fibers of `fib`.
FiberConstancyReport fiber_constancy(
    const Fibering& fib, const std::function<double(const Point&)>& field,
    const ProjectionSettings& settings = {}, double threshold_base = 1e-7);

/// Coefficient tables of a recovered base operator, sampled on a regular
/// grid over the target box, one slice per u value.
struct ReducedTables {
  Chart chart;
  std::vector<double> u_values;
  std::vector<std::size_t> nodes;        // per-axis node counts
  std::vector<std::vector<double>> axis; // per-axis node positions
  // Indexing: coef[u_index][flat_node]; flat index is row-major.
  std::vector<std::vector<std::vector<double>>> b2, c2;  // [i*m+j] outer
  std::vector<std::vector<std::vector<double>>> b1;      // [i] outer
  std::vector<std::vector<double>> q;                    // [u_index][flat]

  std::size_t node_count() const;
  Point node_point(std::size_t flat) const;
  /// Cubic (Catmull-Rom) interpolation in space, linear in u.
  double interpolate(const std::vector<double>& per_u_flat, const Point& y,
                     double u) const;
  ParabolicOperator as_operator() const;
};

struct ProjectionReport {
  bool projectible = false;
  double witness = 0.0;
  double threshold = 0.0;
  std::string worst_probe;
  Point worst_y;
  double holdout_witness = 0.0;
  double holdout_threshold = 0.0;
  std::optional<ReducedTables> reduced;
};

/// Two-step projectibility test. Step 1: pullbacks of a fixed probe family
/// must give fiber-constant fields. Step 2 (only when step 1 passes):
/// recover the base operator's coefficients from probe applications on a
/// regular grid, then cross-check against held-out probes at grid nodes.
ProjectionReport project_operator(const ParabolicOperator& L,
                                  const Fibering& fib,
                                  const ProjectionSettings& settings = {});

struct ConformalReport {
  double witness = 0.0;  // max |sqrt|det J| - lambda| / (1 + |sqrt|det J||)
  double threshold = 0.0;
  bool pass = false;
  std::size_t points_used = 0;
  std::size_t points_skipped = 0;
};

/// Checks a candidate conformal factor for a 2-D map: at sampled points,
/// sqrt(|det J|) of the map must equal lambda.
ConformalReport conformal_factor_check(const SmoothMap& map2d,
                                       const Expr& lambda, unsigned seed = 42,
                                       double tol_scale = 1.0);

}  // namespace pdemorph
