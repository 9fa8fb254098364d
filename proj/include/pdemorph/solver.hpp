#pragma once

#include <string>
#include <vector>

#include "pdemorph/operators.hpp"

namespace pdemorph {

struct Axis {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t n = 2;
  bool periodic = false;

  /// Node spacing; periodic axes place n nodes on [lo, hi) and wrap.
  double h() const {
    return (hi - lo) / static_cast<double>(periodic ? n : n - 1);
  }
  double node(std::size_t i) const { return lo + h() * static_cast<double>(i); }
};

class Grid {
 public:
  static Grid regular(const Chart& chart, const std::vector<std::size_t>& counts);

  const Chart& chart() const { return chart_; }
  const std::vector<Axis>& axes() const { return axes_; }
  std::size_t dim() const { return axes_.size(); }
  std::size_t node_count() const { return count_; }

  std::size_t flat(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> unflat(std::size_t flat) const;
  Point point(const std::vector<std::size_t>& idx) const;
  Point point(std::size_t flat) const;

 private:
  Chart chart_;
  std::vector<Axis> axes_;
  std::size_t count_ = 0;
};

enum class BoundaryKind { Periodic, DirichletFromInitial, NeumannZero };

/// Snapshots of a scalar field on a grid at increasing times.
class GridField {
 public:
  GridField(Grid grid, std::vector<double> times,
            std::vector<std::vector<double>> frames);

  const Grid& grid() const { return grid_; }
  const std::vector<double>& times() const { return times_; }
  std::size_t frame_count() const { return frames_.size(); }
  const std::vector<double>& frame(std::size_t k) const { return frames_.at(k); }
  double value(std::size_t k, std::size_t flat) const {
    return frames_[k][flat];
  }

  /// Multilinear in space (wrap-aware on periodic axes), linear in time.
  double interpolate(double t, const Point& x) const;

  /// One file per snapshot: <base>_t<k>.csv with axis names, node counts and
  /// the time stamp in header rows, then row-major values, one line per run
  /// of the last axis. Returns the file paths.
  std::vector<std::string> export_csv(const std::string& dir,
                                      const std::string& base) const;

 private:
  Grid grid_;
  std::vector<double> times_;
  std::vector<std::vector<double>> frames_;
};

struct SolveOptions {
  double t0 = 0.0;
  double T = 0.1;
  std::size_t snapshots = 16;
  double cfl = 0.2;       // dt <= cfl * h_min^2 / max Gershgorin row sum of b2
  double dt = 0.0;        // 0: choose from the CFL bound
  std::vector<BoundaryKind> bc;  // per axis; empty: periodic where the axis
                                 // is periodic, else Dirichlet from the
                                 // initial data
};

/// Explicit Euler with central differences (4-point cross stencil for the
/// mixed second derivatives). Throws DomainError when the solution leaves
/// [-1e8, 1e8] or turns non-finite.
GridField solve(const ParabolicOperator& L, const Grid& grid, const Expr& ic,
                const SolveOptions& opt);

struct ResidualReport {
  double max_abs = 0.0;
  double scale = 0.0;  // max |u_t| seen
  std::size_t times_used = 0;
  std::size_t nodes_used = 0;

  double relative() const { return max_abs / (1.0 + scale); }
};

/// max |u_t - L u| over interior nodes at up to three central snapshot
/// times; u_t by central differences across neighboring snapshots. `margin`
/// excludes that many extra node layers near non-periodic boundaries.
ResidualReport interior_residual(const ParabolicOperator& L,
                                 const GridField& u, std::size_t margin = 1,
                                 const std::vector<BoundaryKind>& bc = {});

}  // namespace pdemorph
