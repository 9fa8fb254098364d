#include "pdemorph/solver.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "pdemorph/errors.hpp"

namespace pdemorph {

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

Grid Grid::regular(const Chart& chart, const std::vector<std::size_t>& counts) {
  chart.validate();
  if (counts.size() != chart.dim()) {
    throw DomainError("grid needs one node count per coordinate");
  }
  Grid g;
  g.chart_ = chart;
  g.count_ = 1;
  for (std::size_t a = 0; a < chart.dim(); ++a) {
    if (counts[a] < 3) throw DomainError("grid axes need at least 3 nodes");
    Axis ax;
    ax.name = chart.coords[a];
    ax.lo = chart.ranges[a].lo;
    ax.hi = chart.ranges[a].hi;
    ax.n = counts[a];
    ax.periodic = chart.ranges[a].periodic;
    g.axes_.push_back(ax);
    g.count_ *= counts[a];
  }
  return g;
}

std::size_t Grid::flat(const std::vector<std::size_t>& idx) const {
  std::size_t f = 0;
  for (std::size_t a = 0; a < axes_.size(); ++a) f = f * axes_[a].n + idx[a];
  return f;
}

std::vector<std::size_t> Grid::unflat(std::size_t flat) const {
  std::vector<std::size_t> idx(axes_.size());
  for (std::size_t a = axes_.size(); a-- > 0;) {
    idx[a] = flat % axes_[a].n;
    flat /= axes_[a].n;
  }
  return idx;
}

Point Grid::point(const std::vector<std::size_t>& idx) const {
  Point x(axes_.size());
  for (std::size_t a = 0; a < axes_.size(); ++a) x[a] = axes_[a].node(idx[a]);
  return x;
}

Point Grid::point(std::size_t flat) const { return point(unflat(flat)); }

GridField::GridField(Grid grid, std::vector<double> times,
                     std::vector<std::vector<double>> frames)
    : grid_(std::move(grid)), times_(std::move(times)), frames_(std::move(frames)) {
  if (times_.size() != frames_.size() || times_.empty()) {
    throw DomainError("field needs one frame per time");
  }
  for (std::size_t k = 0; k + 1 < times_.size(); ++k) {
    if (!(times_[k] < times_[k + 1])) {
      throw DomainError("snapshot times must increase");
    }
  }
  for (const auto& f : frames_) {
    if (f.size() != grid_.node_count()) {
      throw DomainError("frame size does not match the grid");
    }
  }
}

double GridField::interpolate(double t, const Point& x) const {
  // Time segment, clamped to the covered range.
  std::size_t kt = 0;
  double ft = 0.0;
  if (times_.size() > 1) {
    if (t <= times_.front()) {
      kt = 0;
      ft = 0.0;
    } else if (t >= times_.back()) {
      kt = times_.size() - 2;
      ft = 1.0;
    } else {
      while (kt + 2 < times_.size() && times_[kt + 1] < t) ++kt;
      ft = (t - times_[kt]) / (times_[kt + 1] - times_[kt]);
    }
  }

  std::size_t d = grid_.dim();
  std::vector<std::size_t> base(d);
  std::vector<double> frac(d);
  for (std::size_t a = 0; a < d; ++a) {
    const Axis& ax = grid_.axes()[a];
    double h = ax.h();
    double xx = x[a];
    if (ax.periodic) {
      double period = ax.hi - ax.lo;
      xx = ax.lo + std::fmod(std::fmod(xx - ax.lo, period) + period, period);
    } else if (xx < ax.lo - 1e-12 * (1.0 + std::abs(ax.lo)) ||
               xx > ax.hi + 1e-12 * (1.0 + std::abs(ax.hi))) {
      throw DomainError("interpolation point leaves the grid box");
    }
    double pos = (xx - ax.lo) / h;
    long i0 = static_cast<long>(std::floor(pos));
    double f = pos - static_cast<double>(i0);
    long last = static_cast<long>(ax.n) - 1;
    if (!ax.periodic) {
      if (i0 < 0) { i0 = 0; f = 0.0; }
      if (i0 >= last) { i0 = last - 1; f = 1.0; }
    } else {
      i0 = ((i0 % static_cast<long>(ax.n)) + static_cast<long>(ax.n)) %
           static_cast<long>(ax.n);
    }
    base[a] = static_cast<std::size_t>(i0);
    frac[a] = f;
  }

  auto corner_value = [&](std::size_t frame_idx, std::size_t mask) {
    std::vector<std::size_t> idx(d);
    for (std::size_t a = 0; a < d; ++a) {
      std::size_t i = base[a] + ((mask >> a) & 1u);
      const Axis& ax = grid_.axes()[a];
      if (i >= ax.n) i = ax.periodic ? 0 : ax.n - 1;
      idx[a] = i;
    }
    return frames_[frame_idx][grid_.flat(idx)];
  };

  auto interp_frame = [&](std::size_t frame_idx) {
    double acc = 0.0;
    for (std::size_t mask = 0; mask < (std::size_t(1) << d); ++mask) {
      double w = 1.0;
      for (std::size_t a = 0; a < d; ++a) {
        w *= ((mask >> a) & 1u) ? frac[a] : (1.0 - frac[a]);
      }
      acc += w * corner_value(frame_idx, mask);
    }
    return acc;
  };

  if (times_.size() == 1) return interp_frame(0);
  return (1.0 - ft) * interp_frame(kt) + ft * interp_frame(kt + 1);
}

std::vector<std::string> GridField::export_csv(const std::string& dir,
                                               const std::string& base) const {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  std::size_t d = grid_.dim();
  std::size_t run = grid_.axes().back().n;
  for (std::size_t k = 0; k < frames_.size(); ++k) {
    std::string path = dir + "/" + base + "_t" + std::to_string(k) + ".csv";
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write " + path);
    out << "axes";
    for (std::size_t a = 0; a < d; ++a) out << "," << grid_.axes()[a].name;
    out << "\ncounts";
    for (std::size_t a = 0; a < d; ++a) out << "," << grid_.axes()[a].n;
    out << "\ntime," << num(times_[k]) << "\n";
    const auto& f = frames_[k];
    for (std::size_t i = 0; i < f.size(); i += run) {
      for (std::size_t j = 0; j < run; ++j) {
        if (j) out << ",";
        out << num(f[i + j]);
      }
      out << "\n";
    }
    paths.push_back(path);
  }
  return paths;
}

namespace {

struct CoefTable {
  const Coef* coef = nullptr;
  bool cached = false;
  std::vector<double> values;

  void build(const Coef& c, const std::vector<Point>& pts) {
    coef = &c;
    cached = !c.depends_on_u() && !c.depends_on_t();
    if (cached) {
      values.resize(pts.size());
      for (std::size_t i = 0; i < pts.size(); ++i) values[i] = c(pts[i], 0.0, 0.0);
    }
  }
  double at(std::size_t node, const Point& x, double u, double t) const {
    return cached ? values[node] : (*coef)(x, u, t);
  }
};

std::vector<BoundaryKind> resolve_bc(const Grid& grid,
                                     const std::vector<BoundaryKind>& bc) {
  std::size_t d = grid.dim();
  std::vector<BoundaryKind> out(d);
  if (!bc.empty() && bc.size() != d) {
    throw DomainError("need one boundary condition per axis");
  }
  for (std::size_t a = 0; a < d; ++a) {
    if (bc.empty()) {
      out[a] = grid.axes()[a].periodic ? BoundaryKind::Periodic
                                       : BoundaryKind::DirichletFromInitial;
    } else {
      out[a] = bc[a];
    }
    if ((out[a] == BoundaryKind::Periodic) != grid.axes()[a].periodic) {
      throw DomainError("periodic boundaries require a periodic axis and "
                        "vice versa");
    }
  }
  return out;
}

struct StencilContext {
  const ParabolicOperator* L;
  const Grid* grid;
  std::vector<BoundaryKind> bc;
  std::vector<Point> pts;
  std::vector<std::size_t> stride;
  std::vector<CoefTable> b2t, c2t, b1t;
  CoefTable qt;
  std::size_t n;

  StencilContext(const ParabolicOperator& op, const Grid& g,
                 const std::vector<BoundaryKind>& bcs)
      : L(&op), grid(&g), bc(resolve_bc(g, bcs)), n(g.dim()) {
    if (n > kMaxDim) throw DomainError("grid dimension exceeds stencil limit");
    pts.resize(g.node_count());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = g.point(i);
    stride.assign(n, 1);
    for (std::size_t a = n; a-- > 1;) {
      stride[a - 1] = stride[a] * g.axes()[a].n;
    }
    b2t.resize(n * n);
    c2t.resize(n * n);
    b1t.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      b1t[i].build(op.b1(i), pts);
      for (std::size_t j = 0; j < n; ++j) {
        b2t[i * n + j].build(op.b2(i, j), pts);
        c2t[i * n + j].build(op.c2(i, j), pts);
      }
    }
    qt.build(op.q(), pts);
  }

  // Signed flat offset to the neighbor along axis a (dir = +1/-1), honoring
  // wrap and zero-flux mirroring. Requires the node not to sit on a
  // Dirichlet boundary of axis a.
  long offset(const std::vector<std::size_t>& idx, std::size_t a,
              int dir) const {
    long i = static_cast<long>(idx[a]) + dir;
    long count = static_cast<long>(grid->axes()[a].n);
    if (grid->axes()[a].periodic) {
      if (i < 0) i += count;
      if (i >= count) i -= count;
    } else if (i < 0 || i >= count) {
      // Zero-flux mirror: the ghost equals the inward neighbor.
      i = static_cast<long>(idx[a]) - dir;
    }
    return (i - static_cast<long>(idx[a])) * static_cast<long>(stride[a]);
  }

  bool on_dirichlet_boundary(const std::vector<std::size_t>& idx) const {
    for (std::size_t a = 0; a < n; ++a) {
      if (bc[a] != BoundaryKind::DirichletFromInitial) continue;
      if (idx[a] == 0 || idx[a] + 1 == grid->axes()[a].n) return true;
    }
    return false;
  }

  static constexpr std::size_t kMaxDim = 8;

  double lu(const std::vector<double>& f, std::size_t flat,
            const std::vector<std::size_t>& idx, double t) const {
    const Point& x = pts[flat];
    double u = f[flat];
    double d1[kMaxDim], hinv[kMaxDim];
    long op[kMaxDim], om[kMaxDim];
    for (std::size_t a = 0; a < n; ++a) {
      hinv[a] = 1.0 / grid->axes()[a].h();
      op[a] = offset(idx, a, +1);
      om[a] = offset(idx, a, -1);
      d1[a] = (f[flat + op[a]] - f[flat + om[a]]) * 0.5 * hinv[a];
    }
    double acc = qt.at(flat, x, u, t);
    for (std::size_t a = 0; a < n; ++a) {
      acc += b1t[a].at(flat, x, u, t) * d1[a];
      double dii = (f[flat + op[a]] - 2.0 * u + f[flat + om[a]]) * hinv[a] * hinv[a];
      acc += b2t[a * n + a].at(flat, x, u, t) * dii;
      acc += c2t[a * n + a].at(flat, x, u, t) * d1[a] * d1[a];
      for (std::size_t b = a + 1; b < n; ++b) {
        double dab = (f[flat + op[a] + op[b]] - f[flat + op[a] + om[b]] -
                      f[flat + om[a] + op[b]] + f[flat + om[a] + om[b]]) *
                     0.25 * hinv[a] * hinv[b];
        double b2s = b2t[a * n + b].at(flat, x, u, t) +
                     b2t[b * n + a].at(flat, x, u, t);
        double c2s = c2t[a * n + b].at(flat, x, u, t) +
                     c2t[b * n + a].at(flat, x, u, t);
        acc += b2s * dab + c2s * d1[a] * d1[b];
      }
    }
    return acc;
  }

  double max_row_sum(const std::vector<double>& f, double t) const {
    double m = 0.0;
    for (std::size_t node = 0; node < pts.size(); ++node) {
      double u = f[node];
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row += std::abs(b2t[i * n + j].at(node, pts[node], u, t));
        }
        m = std::max(m, row);
      }
    }
    return m;
  }
};

}  // namespace

GridField solve(const ParabolicOperator& L, const Grid& grid, const Expr& ic,
                const SolveOptions& opt) {
  if (L.chart().coords != grid.chart().coords) {
    throw DomainError("operator and grid charts disagree");
  }
  if (opt.snapshots < 2) throw DomainError("need at least 2 snapshots");
  if (!(opt.T > opt.t0)) throw DomainError("final time must exceed the start");

  StencilContext ctx(L, grid, opt.bc);
  std::size_t total = grid.node_count();

  std::vector<double> f(total);
  for (std::size_t i = 0; i < total; ++i) {
    f[i] = eval(ic, grid.chart().bind(ctx.pts[i]));
  }

  double span = opt.T - opt.t0;
  std::size_t segments = opt.snapshots - 1;
  double dt_target = opt.dt;
  if (dt_target <= 0.0) {
    double lam = ctx.max_row_sum(f, opt.t0);
    double hmin = std::numeric_limits<double>::infinity();
    for (const auto& ax : grid.axes()) hmin = std::min(hmin, ax.h());
    dt_target = opt.cfl * hmin * hmin / std::max(lam, 1e-30);
  }
  std::size_t steps_per_seg = static_cast<std::size_t>(
      std::ceil(span / (static_cast<double>(segments) * dt_target) - 1e-12));
  steps_per_seg = std::max<std::size_t>(1, steps_per_seg);
  double dt = span / (static_cast<double>(segments) * static_cast<double>(steps_per_seg));

  std::vector<double> times;
  std::vector<std::vector<double>> frames;
  times.push_back(opt.t0);
  frames.push_back(f);

  std::vector<double> fn(total);
  std::vector<std::size_t> idx(grid.dim(), 0);
  double t = opt.t0;
  for (std::size_t seg = 0; seg < segments; ++seg) {
    for (std::size_t st = 0; st < steps_per_seg; ++st) {
      std::fill(idx.begin(), idx.end(), 0);
      for (std::size_t node = 0; node < total; ++node) {
        if (ctx.on_dirichlet_boundary(idx)) {
          fn[node] = f[node];
        } else {
          double v = f[node] + dt * ctx.lu(f, node, idx, t);
          if (!std::isfinite(v) || std::abs(v) > 1e8) {
            throw DomainError("solution blew up at t=" + std::to_string(t));
          }
          fn[node] = v;
        }
        // Odometer increment, last axis fastest.
        for (std::size_t a = grid.dim(); a-- > 0;) {
          if (++idx[a] < grid.axes()[a].n) break;
          idx[a] = 0;
        }
      }
      f.swap(fn);
      t += dt;
    }
    t = opt.t0 + span * static_cast<double>(seg + 1) / static_cast<double>(segments);
    times.push_back(t);
    frames.push_back(f);
  }
  return GridField(grid, std::move(times), std::move(frames));
}

ResidualReport interior_residual(const ParabolicOperator& L, const GridField& u,
                                 std::size_t margin,
                                 const std::vector<BoundaryKind>& bc) {
  const Grid& grid = u.grid();
  if (u.frame_count() < 3) {
    throw DomainError("residual needs at least 3 snapshots");
  }
  StencilContext ctx(L, grid, bc);

  std::size_t K = u.frame_count();
  std::vector<std::size_t> ks = {K / 4, K / 2, (3 * K) / 4};
  for (auto& k : ks) k = std::clamp<std::size_t>(k, 1, K - 2);
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  ResidualReport rep;
  std::size_t total = grid.node_count();
  std::vector<std::size_t> idx(grid.dim(), 0);
  std::size_t keep = std::max<std::size_t>(margin, 1);
  for (std::size_t k : ks) {
    ++rep.times_used;
    double dtc = u.times()[k + 1] - u.times()[k - 1];
    const auto& fm = u.frame(k - 1);
    const auto& fc = u.frame(k);
    const auto& fp = u.frame(k + 1);
    std::fill(idx.begin(), idx.end(), 0);
    for (std::size_t node = 0; node < total; ++node) {
      bool interior = true;
      for (std::size_t a = 0; a < grid.dim() && interior; ++a) {
        if (grid.axes()[a].periodic) continue;
        if (idx[a] < keep || idx[a] + keep >= grid.axes()[a].n) interior = false;
      }
      if (interior) {
        double ut = (fp[node] - fm[node]) / dtc;
        double lu = ctx.lu(fc, node, idx, u.times()[k]);
        rep.max_abs = std::max(rep.max_abs, std::abs(ut - lu));
        rep.scale = std::max(rep.scale, std::abs(ut));
        if (k == ks.front()) ++rep.nodes_used;
      }
      for (std::size_t a = grid.dim(); a-- > 0;) {
        if (++idx[a] < grid.axes()[a].n) break;
        idx[a] = 0;
      }
    }
  }
  return rep;
}

}  // namespace pdemorph
