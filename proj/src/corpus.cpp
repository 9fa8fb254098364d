#include "pdemorph/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <utility>

#include "pdemorph/errors.hpp"
#include "pdemorph/sampling.hpp"

namespace pdemorph::corpus {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw DomainError(where + ": " + msg);
}

std::string entry_where(const std::string& fixture, const ManifestEntry& e) {
  return "fixture " + fixture + " line " + std::to_string(e.line) + " '" +
         e.key + "'";
}

const std::string& arg_at(const ManifestEntry& e, std::size_t i,
                          const std::string& where) {
  if (i >= e.args.size()) {
    fail(where, "missing argument " + std::to_string(i + 1));
  }
  return e.args[i];
}

double num_at(const ManifestEntry& e, std::size_t i,
              const std::string& where) {
  const std::string& s = arg_at(e, i, where);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    fail(where, "expected a number, got '" + s + "'");
  }
  return v;
}

std::size_t size_at(const ManifestEntry& e, std::size_t i,
                    const std::string& where) {
  const std::string& s = arg_at(e, i, where);
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    fail(where, "expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

/// Keeps report lines single-token per field.
std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '=' || c == ',') c = '_';
  }
  return out;
}

std::size_t coord_index(const Chart& c, const std::string& name,
                        const std::string& where) {
  for (std::size_t i = 0; i < c.coords.size(); ++i) {
    if (c.coords[i] == name) return i;
  }
  fail(where, "unknown coordinate '" + name + "' on chart " + c.name);
}

DiffusivityClass class_from_word(const std::string& w,
                                 const std::string& where) {
  if (w == "constant") return DiffusivityClass::Constant;
  if (w == "power") return DiffusivityClass::Power;
  if (w == "exponential") return DiffusivityClass::Exponential;
  if (w == "arbitrary") return DiffusivityClass::Arbitrary;
  fail(where, "unknown diffusivity class '" + w + "'");
}

bool expect_from_word(const std::string& w, const std::string& where) {
  if (w == "pass") return true;
  if (w == "fail") return false;
  fail(where, "expected 'pass' or 'fail', got '" + w + "'");
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_line(const CheckResult& r) {
  std::string s = r.pass ? "[PASS] " : "[FAIL] ";
  s += r.fixture;
  s += ':';
  s += r.kind;
  s += ':';
  s += r.id;
  s += " value=";
  s += format_number(r.value);
  s += " threshold=";
  s += format_number(r.threshold);
  if (!r.detail.empty()) {
    s += ' ';
    s += r.detail;
  }
  return s;
}

Expr FixtureObjects::parse_expr(const std::string& text) const {
  Expr e = parse(text);
  if (constants_.empty()) return e;
  return subst(e, constants_);
}

const Chart& FixtureObjects::need_chart(const std::string& key) const {
  auto it = charts_.find(key);
  if (it == charts_.end()) {
    fail("fixture " + name_, "unknown chart '" + key + "'");
  }
  return it->second;
}

const MetricField& FixtureObjects::need_metric(const std::string& key) const {
  auto it = metrics_.find(key);
  if (it == metrics_.end()) {
    fail("fixture " + name_, "unknown metric '" + key + "'");
  }
  return it->second;
}

bool FixtureObjects::metric_definite(const std::string& key) const {
  auto it = metric_definite_.find(key);
  if (it == metric_definite_.end()) {
    fail("fixture " + name_, "unknown metric '" + key + "'");
  }
  return it->second;
}

const ParabolicOperator& FixtureObjects::need_operator(
    const std::string& key) const {
  auto it = operators_.find(key);
  if (it == operators_.end()) {
    fail("fixture " + name_, "unknown operator '" + key + "'");
  }
  return it->second;
}

const SmoothMap& FixtureObjects::need_map(const std::string& key) const {
  auto it = maps_.find(key);
  if (it == maps_.end()) fail("fixture " + name_, "unknown map '" + key + "'");
  return it->second;
}

const Fibering& FixtureObjects::need_fibering(const std::string& key) const {
  auto it = fiberings_.find(key);
  if (it == fiberings_.end()) {
    fail("fixture " + name_, "unknown fibering '" + key + "'");
  }
  return it->second;
}

const GroupData& FixtureObjects::need_group(const std::string& key) const {
  auto it = groups_.find(key);
  if (it == groups_.end()) {
    fail("fixture " + name_, "unknown group '" + key + "'");
  }
  return it->second;
}

const SolveSpec& FixtureObjects::need_solve(const std::string& key) const {
  auto it = solves_.find(key);
  if (it == solves_.end()) {
    fail("fixture " + name_, "unknown solve '" + key + "'");
  }
  return it->second;
}

FixtureObjects FixtureObjects::build(const Manifest& man) {
  FixtureObjects o;
  o.name_ = man.name;

  for (const auto* sec : man.all("constants")) {
    for (const auto& e : sec->entries) {
      const std::string where = entry_where(o.name_, e);
      std::string cname;
      Expr value;
      if (e.key == "define") {
        cname = arg_at(e, 0, where);
        value = o.parse_expr(arg_at(e, 1, where));
      } else {
        cname = e.key;
        value = Expr::constant(num_at(e, 0, where));
      }
      if (o.constants_.count(cname)) {
        fail(where, "duplicate constant '" + cname + "'");
      }
      o.constants_.emplace(std::move(cname), std::move(value));
    }
  }

  for (const auto* sec : man.all("chart")) {
    const std::string where = "fixture " + o.name_ + " [chart " + sec->name +
                              "] line " + std::to_string(sec->line);
    Chart c;
    c.name = sec->name;
    c.coords = sec->need("coords").args;
    if (c.coords.empty()) fail(where, "empty coords");
    c.ranges.assign(c.dim(), Interval{});
    std::vector<bool> seen(c.dim(), false);
    for (const auto& e : sec->entries) {
      const std::string ew = entry_where(o.name_, e);
      if (e.key == "coords") continue;
      if (e.key == "range" || e.key == "periodic") {
        std::size_t a = coord_index(c, arg_at(e, 0, ew), ew);
        if (seen[a]) fail(ew, "duplicate range for '" + c.coords[a] + "'");
        seen[a] = true;
        c.ranges[a] = Interval{num_at(e, 1, ew), num_at(e, 2, ew),
                               e.key == "periodic"};
      } else if (e.key == "excluded") {
        Point p(c.dim());
        for (std::size_t i = 0; i < c.dim(); ++i) p[i] = num_at(e, i, ew);
        c.excluded.push_back(std::move(p));
      } else if (e.key == "excluded_radius") {
        c.excluded_radius = num_at(e, 0, ew);
      } else {
        fail(ew, "unknown chart entry");
      }
    }
    for (std::size_t a = 0; a < c.dim(); ++a) {
      if (!seen[a]) fail(where, "no range for coordinate '" + c.coords[a] + "'");
    }
    c.validate();
    if (!o.charts_.emplace(sec->name, std::move(c)).second) {
      fail(where, "duplicate chart '" + sec->name + "'");
    }
  }

  for (const auto* sec : man.all("metric")) {
    const std::string where = "fixture " + o.name_ + " [metric " + sec->name +
                              "] line " + std::to_string(sec->line);
    const Chart& chart = o.need_chart(sec->need("chart").args.at(0));
    std::size_t n = chart.dim();
    bool identity = false;
    if (const ManifestEntry* d = sec->find("default")) {
      const std::string& w = arg_at(*d, 0, where);
      if (w == "identity") {
        identity = true;
      } else if (w != "zero") {
        fail(where, "metric default must be 'identity' or 'zero'");
      }
    }
    std::vector<std::vector<Expr>> g(
        n, std::vector<Expr>(n, Expr::constant(0.0)));
    if (identity) {
      for (std::size_t i = 0; i < n; ++i) g[i][i] = Expr::constant(1.0);
    }
    // Explicit entries win over mirroring, so an asymmetric matrix can be
    // declared (and rejected by validate()) by naming both slots.
    std::vector<std::vector<bool>> set(n, std::vector<bool>(n, false));
    bool definite = true;
    for (const auto& e : sec->entries) {
      const std::string ew = entry_where(o.name_, e);
      if (e.key == "chart" || e.key == "default") continue;
      if (e.key == "entry") {
        std::size_t i = size_at(e, 0, ew);
        std::size_t j = size_at(e, 1, ew);
        if (i >= n || j >= n) fail(ew, "metric index out of range");
        if (set[i][j]) fail(ew, "duplicate metric entry");
        g[i][j] = o.parse_expr(arg_at(e, 2, ew));
        set[i][j] = true;
      } else if (e.key == "definite") {
        const std::string& w = arg_at(e, 0, ew);
        if (w == "false") {
          definite = false;
        } else if (w != "true") {
          fail(ew, "definite must be 'true' or 'false'");
        }
      } else {
        fail(ew, "unknown metric entry");
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (set[i][j] && !set[j][i]) g[j][i] = g[i][j];
      }
    }
    if (!o.metrics_.emplace(sec->name, MetricField(chart, std::move(g)))
             .second) {
      fail(where, "duplicate metric '" + sec->name + "'");
    }
    o.metric_definite_.emplace(sec->name, definite);
  }

  for (const auto* sec : man.all("operator")) {
    const std::string where = "fixture " + o.name_ + " [operator " +
                              sec->name + "] line " +
                              std::to_string(sec->line);
    if (o.operators_.count(sec->name)) {
      fail(where, "duplicate operator '" + sec->name + "'");
    }
    const std::string& kind = sec->need("kind").args.at(0);
    if (kind == "laplace_beltrami") {
      const MetricField& g = o.need_metric(sec->need("metric").args.at(0));
      o.operators_.emplace(sec->name, laplace_beltrami(g));
    } else if (kind == "heat") {
      const MetricField& g = o.need_metric(sec->need("metric").args.at(0));
      Expr a = o.parse_expr(sec->need("a").args.at(0));
      Expr q = o.parse_expr(sec->need("q").args.at(0));
      std::optional<Interval> ur;
      if (const ManifestEntry* u = sec->find("urange")) {
        ur = Interval{num_at(*u, 0, where), num_at(*u, 1, where), false};
      }
      o.operators_.emplace(sec->name, heat_operator(g, a, q, ur));
    } else if (kind == "coefficients") {
      const Chart& chart = o.need_chart(sec->need("chart").args.at(0));
      std::size_t n = chart.dim();
      std::vector<std::vector<Expr>> b2(
          n, std::vector<Expr>(n, Expr::constant(0.0)));
      auto c2 = b2;
      std::vector<Expr> b1(n, Expr::constant(0.0));
      Expr q = Expr::constant(0.0);
      for (const auto& e : sec->entries) {
        const std::string ew = entry_where(o.name_, e);
        if (e.key == "kind" || e.key == "chart") continue;
        if (e.key == "b2" || e.key == "c2") {
          std::size_t i = size_at(e, 0, ew);
          std::size_t j = size_at(e, 1, ew);
          if (i >= n || j >= n) fail(ew, "coefficient index out of range");
          Expr v = o.parse_expr(arg_at(e, 2, ew));
          auto& mat = (e.key == "b2") ? b2 : c2;
          mat[i][j] = v;
          mat[j][i] = v;
        } else if (e.key == "b1") {
          std::size_t i = size_at(e, 0, ew);
          if (i >= n) fail(ew, "coefficient index out of range");
          b1[i] = o.parse_expr(arg_at(e, 1, ew));
        } else if (e.key == "q") {
          q = o.parse_expr(arg_at(e, 0, ew));
        } else {
          fail(ew, "unknown operator entry");
        }
      }
      o.operators_.emplace(
          sec->name, ParabolicOperator::from_exprs(chart, std::move(b2),
                                                   std::move(c2),
                                                   std::move(b1), q));
    } else if (kind == "canonical") {
      const MetricField& g = o.need_metric(sec->need("metric").args.at(0));
      CanonicalCase cc;
      cc.cls = class_from_word(sec->need("class").args.at(0), where);
      cc.beta = o.parse_expr(sec->need("beta").args.at(0));
      cc.lambda = num_at(sec->need("lambda"), 0, where);
      cc.q0 = num_at(sec->need("q0"), 0, where);
      o.operators_.emplace(sec->name, canonical_operator_D(cc, g));
    } else {
      fail(where, "unknown operator kind '" + kind + "'");
    }
  }

  for (const auto* sec : man.all("map")) {
    const std::string where = "fixture " + o.name_ + " [map " + sec->name +
                              "] line " + std::to_string(sec->line);
    SmoothMap m;
    m.source = o.need_chart(sec->need("source").args.at(0));
    m.target = o.need_chart(sec->need("target").args.at(0));
    for (const auto& t : sec->need("components").args) {
      m.components.push_back(o.parse_expr(t));
    }
    if (m.components.size() != m.target.dim()) {
      fail(where, "component count does not match target dimension");
    }
    m.validate();
    if (!o.maps_.emplace(sec->name, std::move(m)).second) {
      fail(where, "duplicate map '" + sec->name + "'");
    }
  }

  for (const auto* sec : man.all("fibering")) {
    const std::string where = "fixture " + o.name_ + " [fibering " +
                              sec->name + "] line " +
                              std::to_string(sec->line);
    Fibering f;
    f.p = o.need_map(sec->need("map").args.at(0));
    if (const ManifestEntry* pe = sec->find("params")) f.params = pe->args;
    f.param_ranges.assign(f.params.size(), Interval{});
    std::vector<bool> seen(f.params.size(), false);
    for (const auto& e : sec->entries) {
      const std::string ew = entry_where(o.name_, e);
      if (e.key == "map" || e.key == "params" || e.key == "section") continue;
      if (e.key == "range" || e.key == "periodic") {
        const std::string& pn = arg_at(e, 0, ew);
        auto it = std::find(f.params.begin(), f.params.end(), pn);
        if (it == f.params.end()) fail(ew, "unknown parameter '" + pn + "'");
        std::size_t a = static_cast<std::size_t>(it - f.params.begin());
        if (seen[a]) fail(ew, "duplicate range for '" + pn + "'");
        seen[a] = true;
        f.param_ranges[a] = Interval{num_at(e, 1, ew), num_at(e, 2, ew),
                                     e.key == "periodic"};
      } else {
        fail(ew, "unknown fibering entry");
      }
    }
    for (std::size_t a = 0; a < f.params.size(); ++a) {
      if (!seen[a]) fail(where, "no range for parameter '" + f.params[a] + "'");
    }
    for (const auto& t : sec->need("section").args) {
      f.section.push_back(o.parse_expr(t));
    }
    if (f.section.size() != f.p.source.dim()) {
      fail(where, "section component count does not match source dimension");
    }
    f.validate();
    if (!o.fiberings_.emplace(sec->name, std::move(f)).second) {
      fail(where, "duplicate fibering '" + sec->name + "'");
    }
  }

  for (const auto* sec : man.all("group")) {
    const std::string where = "fixture " + o.name_ + " [group " + sec->name +
                              "] line " + std::to_string(sec->line);
    const MetricField& g = o.need_metric(sec->need("metric").args.at(0));
    VectorField eta;
    eta.chart = g.chart();
    for (const auto& t : sec->need("eta").args) {
      eta.comp.push_back(o.parse_expr(t));
    }
    if (eta.comp.size() != g.dim()) {
      fail(where, "eta component count does not match chart dimension");
    }
    const Fibering& fib = o.need_fibering(sec->need("fibering").args.at(0));
    const std::string& tw = sec->need("topology").args.at(0);
    FiberTopology topo;
    if (tw == "line") {
      topo = FiberTopology::Line;
    } else if (tw == "circle") {
      topo = FiberTopology::Circle;
    } else {
      fail(where, "topology must be 'line' or 'circle'");
    }
    GroupFibering gf{g, std::move(eta), fib, topo};
    gf.validate();
    if (!o.groups_.emplace(sec->name, GroupData{std::move(gf), {}, {}})
             .second) {
      fail(where, "duplicate group '" + sec->name + "'");
    }
  }

  for (const auto* sec : man.all("generator")) {
    const std::string where = "fixture " + o.name_ + " [generator " +
                              sec->name + "] line " +
                              std::to_string(sec->line);
    auto it = o.groups_.find(sec->need("group").args.at(0));
    if (it == o.groups_.end()) fail(where, "unknown group");
    GroupData& gd = it->second;
    GeneratorSpec gs;
    gs.name = sec->name;
    for (const auto& t : sec->need("components").args) {
      gs.comp.push_back(o.parse_expr(t));
    }
    if (gs.comp.size() != gd.gf.fib.p.target.dim()) {
      fail(where, "component count does not match base dimension");
    }
    const std::string& ew = sec->need("expect").args.at(0);
    if (ew == "liftable") {
      gs.expect_liftable = true;
    } else if (ew == "notliftable") {
      gs.expect_liftable = false;
    } else {
      fail(where, "expect must be 'liftable' or 'notliftable'");
    }
    gd.generators.push_back(std::move(gs));
  }

  for (const auto* sec : man.all("loop")) {
    const std::string where = "fixture " + o.name_ + " [loop " + sec->name +
                              "] line " + std::to_string(sec->line);
    auto it = o.groups_.find(sec->need("group").args.at(0));
    if (it == o.groups_.end()) fail(where, "unknown group");
    Loop lp;
    for (const auto& t : sec->need("components").args) {
      Expr c = o.parse_expr(t);
      for (const auto& v : free_vars(c)) {
        if (v != "s") fail(where, "loop components may only use 's'");
      }
      lp.comp.push_back(std::move(c));
    }
    if (lp.comp.size() != it->second.gf.fib.p.target.dim()) {
      fail(where, "component count does not match base dimension");
    }
    it->second.loops.push_back(std::move(lp));
  }

  for (const auto* sec : man.all("solve")) {
    const std::string where = "fixture " + o.name_ + " [solve " + sec->name +
                              "] line " + std::to_string(sec->line);
    SolveSpec ss;
    ss.op = sec->need("operator").args.at(0);
    const ParabolicOperator& L = o.need_operator(ss.op);
    ss.ic = o.parse_expr(sec->need("ic").args.at(0));
    const ManifestEntry& ce = sec->need("counts");
    for (std::size_t i = 0; i < ce.args.size(); ++i) {
      ss.counts.push_back(size_at(ce, i, where));
    }
    if (ss.counts.size() != L.dim()) {
      fail(where, "counts entry does not match operator dimension");
    }
    if (const ManifestEntry* e = sec->find("fibernodes")) {
      ss.fiber_nodes = size_at(*e, 0, where);
    }
    if (const ManifestEntry* e = sec->find("t0")) {
      ss.options.t0 = num_at(*e, 0, where);
    }
    if (const ManifestEntry* e = sec->find("T")) {
      ss.options.T = num_at(*e, 0, where);
    }
    if (const ManifestEntry* e = sec->find("snapshots")) {
      ss.options.snapshots = size_at(*e, 0, where);
    }
    if (const ManifestEntry* e = sec->find("cfl")) {
      ss.options.cfl = num_at(*e, 0, where);
    }
    if (const ManifestEntry* e = sec->find("dt")) {
      ss.options.dt = num_at(*e, 0, where);
    }
    if (const ManifestEntry* e = sec->find("bc")) {
      for (const auto& w : e->args) {
        if (w == "periodic") {
          ss.options.bc.push_back(BoundaryKind::Periodic);
        } else if (w == "dirichlet") {
          ss.options.bc.push_back(BoundaryKind::DirichletFromInitial);
        } else if (w == "neumann") {
          ss.options.bc.push_back(BoundaryKind::NeumannZero);
        } else {
          fail(where, "unknown boundary kind '" + w + "'");
        }
      }
    }
    if (!o.solves_.emplace(sec->name, std::move(ss)).second) {
      fail(where, "duplicate solve '" + sec->name + "'");
    }
  }

  return o;
}

void FixtureObjects::validate(unsigned seed) const {
  for (const auto& [key, g] : metrics_) {
    std::size_t n = g.dim();
    ChartSampler sampler(g.chart(), seed);
    for (int k = 0; k < 20; ++k) {
      Bindings b = g.chart().bind(sampler.next());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          double d = std::abs(eval(g.entry(i, j), b) - eval(g.entry(j, i), b));
          if (d > 1e-10) {
            fail("fixture " + name_,
                 "metric '" + key + "' entry " + std::to_string(i) + " " +
                     std::to_string(j) + " is not symmetric (difference " +
                     format_number(d) + ")");
          }
        }
      }
    }
    if (metric_definite_.at(key)) g.check_positive_definite(seed);
  }
  for (const auto& [key, L] : operators_) {
    double w = L.symmetry_witness(seed);
    if (w > 1e-8) {
      fail("fixture " + name_,
           "operator '" + key + "' has asymmetric coefficients (witness " +
               format_number(w) + ")");
    }
    L.check_ellipticity(seed);
  }
}

// ---------------------------------------------------------------------------
// Check runners.

namespace {

ProjectionSettings projection_settings(const RunSettings& rs) {
  ProjectionSettings st;
  st.seed = rs.seed;
  st.tol_scale = rs.tol_scale;
  return st;
}

void run_project(const FixtureObjects& objs, const ManifestEntry& e,
                 const RunSettings& rs, const std::string& where,
                 CheckResult& r) {
  const ParabolicOperator& L = objs.need_operator(arg_at(e, 1, where));
  const Fibering& fib = objs.need_fibering(arg_at(e, 2, where));
  ProjectionReport rep = project_operator(L, fib, projection_settings(rs));
  r.pass = rep.projectible;
  r.value = rep.witness;
  r.threshold = rep.threshold;
  r.detail = "holdout=" + format_number(rep.holdout_witness) +
             " holdout_threshold=" + format_number(rep.holdout_threshold) +
             " probe=" + sanitize(rep.worst_probe);
}

/// reduce: recovered tables must match the expected operator to `bound`.
/// reducedev: the tables must DIFFER from it by at least `bound` (negative
/// control; projection itself must still succeed).
void run_reduce(const FixtureObjects& objs, const ManifestEntry& e,
                const RunSettings& rs, const std::string& where,
                CheckResult& r, bool want_match) {
  const ParabolicOperator& L = objs.need_operator(arg_at(e, 1, where));
  const Fibering& fib = objs.need_fibering(arg_at(e, 2, where));
  const ParabolicOperator& expected =
      objs.need_operator(arg_at(e, 3, where));
  double bound = num_at(e, 4, where);
  ProjectionReport rep = project_operator(L, fib, projection_settings(rs));
  if (!rep.projectible || !rep.reduced) {
    r.pass = false;
    r.value = rep.witness;
    r.threshold = rep.threshold;
    r.detail = "projectible=0 probe=" + sanitize(rep.worst_probe);
    return;
  }
  const ReducedTables& rt = *rep.reduced;
  std::size_t m = rt.chart.dim();
  if (expected.dim() != m) {
    fail(where, "expected operator dimension does not match the base");
  }
  double dev = 0.0;
  for (std::size_t ui = 0; ui < rt.u_values.size(); ++ui) {
    double u = rt.u_values[ui];
    for (std::size_t flat = 0; flat < rt.node_count(); ++flat) {
      Point y = rt.node_point(flat);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          dev = std::max(dev, std::abs(rt.b2[i * m + j][ui][flat] -
                                       expected.b2(i, j)(y, u)));
          dev = std::max(dev, std::abs(rt.c2[i * m + j][ui][flat] -
                                       expected.c2(i, j)(y, u)));
        }
        dev = std::max(
            dev, std::abs(rt.b1[i][ui][flat] - expected.b1(i)(y, u)));
      }
      dev = std::max(dev, std::abs(rt.q[ui][flat] - expected.q()(y, u)));
    }
  }
  r.value = dev;
  r.threshold = bound;
  r.pass = want_match ? (dev <= bound) : (dev >= bound);
  r.detail = "witness=" + format_number(rep.witness) +
             " witness_threshold=" + format_number(rep.threshold) +
             " holdout=" + format_number(rep.holdout_witness) +
             " nodes=" + std::to_string(rt.node_count());
  if (!rs.out_dir.empty()) {
    write_tables(rt, rs.out_dir, objs.name() + "_" + r.id);
  }
}

void run_fiberconst(const FixtureObjects& objs, const ManifestEntry& e,
                    const RunSettings& rs, const std::string& where,
                    CheckResult& r) {
  const Fibering& fib = objs.need_fibering(arg_at(e, 1, where));
  Expr f = objs.parse_expr(arg_at(e, 2, where));
  bool expect_pass = expect_from_word(arg_at(e, 3, where), where);
  const Chart& x = fib.p.source;
  auto field = [&](const Point& p) { return eval(f, x.bind(p)); };
  FiberConstancyReport rep =
      fiber_constancy(fib, field, projection_settings(rs));
  r.value = rep.witness;
  r.detail = "used=" + std::to_string(rep.points_used) +
             " skipped=" + std::to_string(rep.points_skipped);
  if (expect_pass) {
    r.threshold = rep.threshold;
    r.pass = rep.constant;
  } else {
    double wmin = e.args.size() > 4 ? num_at(e, 4, where) : rep.threshold;
    r.threshold = wmin;
    r.pass = !rep.constant && rep.witness >= wmin;
  }
}

void run_invariance(const FixtureObjects& objs, const ManifestEntry& e,
                    const RunSettings& rs, const std::string& where,
                    CheckResult& r) {
  const ParabolicOperator& L = objs.need_operator(arg_at(e, 1, where));
  bool expect_pass = expect_from_word(arg_at(e, 2, where), where);
  std::size_t n = L.dim();
  std::vector<Expr> transform;
  for (std::size_t i = 0; i < n; ++i) {
    transform.push_back(objs.parse_expr(arg_at(e, 3 + i, where)));
  }
  InvarianceReport rep = invariance_check(L, transform, rs.seed, rs.tol_scale);
  r.value = rep.witness;
  r.detail = "used=" + std::to_string(rep.points_used) +
             " skipped=" + std::to_string(rep.points_skipped);
  if (expect_pass) {
    r.threshold = rep.threshold;
    r.pass = rep.pass;
  } else {
    double wmin =
        e.args.size() > 3 + n ? num_at(e, 3 + n, where) : rep.threshold;
    r.threshold = wmin;
    r.pass = !rep.pass && rep.witness >= wmin;
  }
}

/// Samples |p(T x) - p(x)| in the target chart's wrap-aware metric; the
/// transformed and original points must name the same base point.
void run_welldefined(const FixtureObjects& objs, const ManifestEntry& e,
                     const RunSettings& rs, const std::string& where,
                     CheckResult& r) {
  const SmoothMap& p = objs.need_map(arg_at(e, 1, where));
  double tol = num_at(e, 2, where);
  std::size_t n = p.source.dim();
  std::vector<Expr> transform;
  for (std::size_t i = 0; i < n; ++i) {
    transform.push_back(objs.parse_expr(arg_at(e, 3 + i, where)));
  }
  ChartSampler sampler(p.source, rs.seed);
  double dev = 0.0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t k = 0; k < 200; ++k) {
    Point x = sampler.next();
    Point tx(n);
    bool ok = true;
    try {
      Bindings b = p.source.bind(x);
      for (std::size_t i = 0; i < n; ++i) tx[i] = eval(transform[i], b);
    } catch (const EvalError&) {
      ok = false;
    }
    if (!ok || !p.source.contains(tx)) {
      ++skipped;
      continue;
    }
    dev = std::max(dev, p.target.wrap_distance(p.value(x), p.value(tx)));
    ++used;
  }
  if (used < 50) fail(where, "too few usable sample points");
  r.value = dev;
  r.threshold = tol * rs.tol_scale;
  r.pass = dev <= r.threshold;
  r.detail =
      "used=" + std::to_string(used) + " skipped=" + std::to_string(skipped);
}

void run_conformal(const FixtureObjects& objs, const ManifestEntry& e,
                   const RunSettings& rs, const std::string& where,
                   CheckResult& r) {
  const SmoothMap& map2d = objs.need_map(arg_at(e, 1, where));
  Expr lambda = objs.parse_expr(arg_at(e, 2, where));
  bool expect_pass = expect_from_word(arg_at(e, 3, where), where);
  ConformalReport rep =
      conformal_factor_check(map2d, lambda, rs.seed, rs.tol_scale);
  r.value = rep.witness;
  r.detail = "used=" + std::to_string(rep.points_used) +
             " skipped=" + std::to_string(rep.points_skipped);
  if (expect_pass) {
    r.threshold = rep.threshold;
    r.pass = rep.pass;
  } else {
    double wmin = e.args.size() > 4 ? num_at(e, 4, where) : rep.threshold;
    r.threshold = wmin;
    r.pass = !rep.pass && rep.witness >= wmin;
  }
}

void run_classify(const FixtureObjects& objs, const ManifestEntry& e,
                  const RunSettings& rs, const std::string& where,
                  CheckResult& r) {
  (void)rs;
  Expr a = objs.parse_expr(arg_at(e, 1, where));
  Interval ur{num_at(e, 2, where), num_at(e, 3, where), false};
  DiffusivityClass want = class_from_word(arg_at(e, 4, where), where);
  std::size_t i = 5;
  double dev = 0.0;
  Classification c = classify_diffusivity(a, ur);
  if (want == DiffusivityClass::Constant) {
    dev = std::abs(c.a0 - num_at(e, i++, where));
  } else if (want == DiffusivityClass::Power) {
    dev = std::abs(c.a0 - num_at(e, i++, where));
    dev = std::max(dev, std::abs(c.u0 - num_at(e, i++, where)));
    dev = std::max(dev, std::abs(c.lambda - num_at(e, i++, where)));
  } else if (want == DiffusivityClass::Exponential) {
    dev = std::abs(c.a0 - num_at(e, i++, where));
    dev = std::max(dev, std::abs(c.lambda - num_at(e, i++, where)));
  }
  double tol = num_at(e, i, where);
  r.value = dev;
  r.threshold = tol * rs.tol_scale;
  r.pass = (c.cls == want) && dev <= r.threshold;
  r.detail = "class=" + to_string(c.cls) +
             " residual=" + format_number(c.residual);
}

/// Verifies the canonical change-of-unknown operator against an expansion
/// assembled independently from the Laplace-Beltrami operator:
///   power:        D f == beta^(l-1) (LB(beta f) + q0 beta f)
///   exponential:  D f == exp(l beta) (LB(f + beta) + q0)
/// over twelve pinned probe functions at sampled points.
void run_canonical(const FixtureObjects& objs, const ManifestEntry& e,
                   const RunSettings& rs, const std::string& where,
                   CheckResult& r) {
  const MetricField& g = objs.need_metric(arg_at(e, 1, where));
  Expr beta = objs.parse_expr(arg_at(e, 2, where));
  DiffusivityClass cls = class_from_word(arg_at(e, 3, where), where);
  double lambda = num_at(e, 4, where);
  double q0 = num_at(e, 5, where);
  double tol = num_at(e, 6, where);
  const Chart& chart = g.chart();
  if (chart.dim() != 2) fail(where, "canonical check expects a 2-D chart");
  if (cls != DiffusivityClass::Power && cls != DiffusivityClass::Exponential) {
    fail(where, "canonical check expects class 'power' or 'exponential'");
  }

  CanonicalCase cc;
  cc.cls = cls;
  cc.beta = beta;
  cc.lambda = lambda;
  cc.q0 = q0;
  ParabolicOperator D = canonical_operator_D(cc, g);
  ParabolicOperator lb = laplace_beltrami(g);

  Expr x0 = Expr::variable(chart.coords[0]);
  Expr x1 = Expr::variable(chart.coords[1]);
  std::vector<Expr> probes = {Expr::constant(1.0),
                              x0,
                              x1,
                              x0 * x0,
                              x0 * x1,
                              x1 * x1,
                              x0 * x0 * x0,
                              x0 * x0 * x1,
                              exp(Expr::constant(0.3) * x0),
                              sin(x1),
                              cos(Expr::constant(0.7) * x0 +
                                  Expr::constant(0.3) * x1),
                              log(Expr::constant(2.5) + x0)};

  ChartSampler sampler(chart, rs.seed, 0.05);
  std::vector<Point> pts;
  for (std::size_t k = 0; k < 40; ++k) pts.push_back(sampler.next());

  double dev = 0.0;
  for (const Expr& f : probes) {
    TestFunction tf = TestFunction::build(f, chart);
    TestFunction expansion =
        cls == DiffusivityClass::Power
            ? TestFunction::build(beta * f, chart)
            : TestFunction::build(f + beta, chart);
    for (const Point& x : pts) {
      Bindings b = chart.bind(x);
      double fx = eval(f, b);
      double bx = eval(beta, b);
      double lhs = apply(D, tf, x, fx);
      double rhs;
      if (cls == DiffusivityClass::Power) {
        rhs = std::pow(bx, lambda - 1.0) *
              (apply(lb, expansion, x, 0.0) + q0 * bx * fx);
      } else {
        rhs = std::exp(lambda * bx) * (apply(lb, expansion, x, 0.0) + q0);
      }
      dev = std::max(dev, std::abs(lhs - rhs));
    }
  }
  r.value = dev;
  r.threshold = tol * rs.tol_scale;
  r.pass = dev <= r.threshold;
  r.detail = "probes=" + std::to_string(probes.size()) +
             " points=" + std::to_string(pts.size());
}

void run_liftcheck(const FixtureObjects& objs, const ManifestEntry& e,
                   const RunSettings& rs, const std::string& where,
                   CheckResult& r) {
  const GroupData& gd = objs.need_group(arg_at(e, 1, where));
  if (gd.generators.empty()) fail(where, "group declares no generators");
  if (gd.loops.empty()) {
    fail(where, "lift check requires at least one declared loop");
  }
  Decomposition dec = decompose(gd.gf, rs.seed, rs.tol_scale);
  std::vector<std::vector<Expr>> gens;
  for (const auto& gs : gd.generators) gens.push_back(gs.comp);
  LiftReport rep = lift_check(gd.gf, dec, gens, gd.loops, rs.seed,
                              rs.tol_scale);
  bool ok = true;
  double max_period = 0.0;
  std::string detail;
  if (dec.holonomy) detail = "H=" + format_number(*dec.holonomy);
  for (std::size_t i = 0; i < gd.generators.size(); ++i) {
    const GeneratorReport& gr = rep.generators[i];
    if (gr.liftable != gd.generators[i].expect_liftable) ok = false;
    double period = 0.0, defect = 0.0;
    for (double p : gr.periods) period = std::max(period, std::abs(p));
    for (double d : gr.period_defects) defect = std::max(defect, d);
    max_period = std::max(max_period, period);
    if (!detail.empty()) detail += ' ';
    detail += gd.generators[i].name;
    detail += gr.liftable ? "=liftable" : "=notliftable";
    detail += ' ' + gd.generators[i].name + "_period=" +
              format_number(period);
    detail += ' ' + gd.generators[i].name + "_defect=" +
              format_number(defect);
  }
  r.pass = ok;
  r.value = max_period;
  r.threshold = 0.0;
  r.detail = std::move(detail);
}

void run_decompose(const FixtureObjects& objs, const ManifestEntry& e,
                   const RunSettings& rs, const std::string& where,
                   CheckResult& r) {
  const GroupData& gd = objs.need_group(arg_at(e, 1, where));
  Decomposition dec = decompose(gd.gf, rs.seed, rs.tol_scale);
  r.pass = true;  // decompose throws when the split residual fails
  r.value = dec.residual;
  r.threshold = dec.residual_threshold;
  r.detail = dec.holonomy ? "H=" + format_number(*dec.holonomy) : "H=none";
}

void run_curvature(const FixtureObjects& objs, const ManifestEntry& e,
                   const RunSettings& rs, const std::string& where,
                   CheckResult& r) {
  const GroupData& gd = objs.need_group(arg_at(e, 1, where));
  CurvatureReport rep = curvature(gd.gf, rs.seed, rs.tol_scale);
  r.pass = rep.basic && rep.d2_witness <= rep.d2_threshold;
  r.value = rep.basic_witness;
  r.threshold = rep.basic_threshold;
  r.detail = "d2=" + format_number(rep.d2_witness) +
             " d2_threshold=" + format_number(rep.d2_threshold);
}

/// The connection form must pair with the group generator to exactly 1.
void run_connform(const FixtureObjects& objs, const ManifestEntry& e,
                  const RunSettings& rs, const std::string& where,
                  CheckResult& r) {
  const GroupData& gd = objs.need_group(arg_at(e, 1, where));
  double tol = num_at(e, 2, where);
  OneForm chi = connection_form(gd.gf);
  Expr pairing = Expr::constant(0.0);
  for (std::size_t i = 0; i < chi.comp.size(); ++i) {
    pairing = pairing + chi.comp[i] * gd.gf.eta.comp[i];
  }
  ChartSampler sampler(chi.chart, rs.seed, 0.02);
  double dev = 0.0;
  for (std::size_t k = 0; k < 100; ++k) {
    Point x = sampler.next();
    dev = std::max(dev, std::abs(eval(pairing, chi.chart.bind(x)) - 1.0));
  }
  r.value = dev;
  r.threshold = tol * rs.tol_scale;
  r.pass = dev <= r.threshold;
}

void run_exprval(const FixtureObjects& objs, const ManifestEntry& e,
                 const RunSettings& rs, const std::string& where,
                 CheckResult& r) {
  (void)rs;
  Expr ex = objs.parse_expr(arg_at(e, 1, where));
  double expected = num_at(e, 2, where);
  double tol = num_at(e, 3, where);
  Bindings b;
  for (std::size_t i = 4; i + 1 < e.args.size(); i += 2) {
    b.set(arg_at(e, i, where), num_at(e, i + 1, where));
  }
  double got = eval(ex, b);
  r.value = std::abs(got - expected);
  r.threshold = tol;
  r.pass = r.value <= tol;
  r.detail = "got=" + format_number(got);
}

/// Pointwise identity of the squared length of a vector field.
void run_inner(const FixtureObjects& objs, const ManifestEntry& e,
               const RunSettings& rs, const std::string& where,
               CheckResult& r) {
  const MetricField& g = objs.need_metric(arg_at(e, 1, where));
  std::size_t n = g.dim();
  VectorField v;
  v.chart = g.chart();
  for (std::size_t i = 0; i < n; ++i) {
    v.comp.push_back(objs.parse_expr(arg_at(e, 2 + i, where)));
  }
  Expr expected = objs.parse_expr(arg_at(e, 2 + n, where));
  double tol = num_at(e, 3 + n, where);
  Expr ip = inner(g, v, v);
  ChartSampler sampler(g.chart(), rs.seed);
  double dev = 0.0;
  for (std::size_t k = 0; k < 50; ++k) {
    Point x = sampler.next();
    Bindings b = g.chart().bind(x);
    dev = std::max(dev, std::abs(eval(ip, b) - eval(expected, b)));
  }
  r.value = dev;
  r.threshold = tol;
  r.pass = dev <= tol;
}

/// Flags a metric whose determinant vanishes identically (a degenerate
/// quadratic form cannot define an operator; the fixture records this).
void run_detzero(const FixtureObjects& objs, const ManifestEntry& e,
                 const RunSettings& rs, const std::string& where,
                 CheckResult& r) {
  const MetricField& g = objs.need_metric(arg_at(e, 1, where));
  double tol = num_at(e, 2, where);
  ChartSampler sampler(g.chart(), rs.seed);
  double dev = 0.0;
  for (std::size_t k = 0; k < 30; ++k) {
    dev = std::max(dev, std::abs(g.det_value(sampler.next())));
  }
  r.value = dev;
  r.threshold = tol;
  r.pass = dev <= tol;
}

void run_note(const ManifestEntry& e, const std::string& where,
              CheckResult& r) {
  r.pass = true;
  r.detail = "text=" + sanitize(arg_at(e, 1, where));
}

/// Compares two operators by application to the probe family; with the
/// trailing word `report` the result is informational and never fails.
void run_opmatch(const FixtureObjects& objs, const ManifestEntry& e,
                 const RunSettings& rs, const std::string& where,
                 CheckResult& r) {
  const ParabolicOperator& a = objs.need_operator(arg_at(e, 1, where));
  const ParabolicOperator& b = objs.need_operator(arg_at(e, 2, where));
  double tol = num_at(e, 3, where);
  bool report_only = e.args.size() > 4 && e.args[4] == "report";
  if (a.dim() != b.dim()) fail(where, "operator dimensions differ");
  std::vector<Expr> fam = test_function_family(a.chart());
  std::vector<double> us =
      (a.depends_on_u() || b.depends_on_u())
          ? std::vector<double>{-1.0, -0.3, 0.1, 0.7, 2.0}
          : std::vector<double>{0.0};
  ChartSampler sampler(a.chart(), rs.seed, 0.02);
  std::vector<Point> pts;
  for (std::size_t k = 0; k < 40; ++k) pts.push_back(sampler.next());
  double dev = 0.0;
  for (const Expr& f : fam) {
    TestFunction tf = TestFunction::build(f, a.chart());
    for (const Point& x : pts) {
      for (double u : us) {
        dev = std::max(dev,
                       std::abs(apply(a, tf, x, u) - apply(b, tf, x, u)));
      }
    }
  }
  r.value = dev;
  r.threshold = tol;
  r.pass = report_only || dev <= tol;
  if (report_only) {
    r.detail = "report_only=1 agree=" + std::string(dev <= tol ? "1" : "0");
  }
}

/// Solve the reduced equation, lift the middle snapshots to the total space
/// along the fibering, and measure the interior residual of the full
/// equation. `wrong` perturbs the lift (negative control).
double lifted_residual(const FixtureObjects& objs,
                       const ParabolicOperator& full, const Fibering& fib,
                       const SolveSpec& ss, std::size_t factor,
                       std::size_t snaps0, const Expr* wrong,
                       const std::string& where) {
  const ParabolicOperator& reduced = objs.need_operator(ss.op);
  std::vector<std::size_t> axes;
  if (!fib.p.coordinate_projection(&axes)) {
    fail(where, "verify requires a coordinate-projection fibering");
  }
  const Chart& xc = fib.p.source;
  const Chart& yc = fib.p.target;
  std::vector<long> src_to_tgt(xc.dim(), -1);
  for (std::size_t k = 0; k < axes.size(); ++k) {
    const Interval& rx = xc.ranges[axes[k]];
    const Interval& ry = yc.ranges[k];
    if (std::abs(rx.lo - ry.lo) > 1e-12 || std::abs(rx.hi - ry.hi) > 1e-12 ||
        rx.periodic != ry.periodic) {
      fail(where, "shared axes must have identical ranges");
    }
    src_to_tgt[axes[k]] = static_cast<long>(k);
  }

  std::vector<std::size_t> counts_y(yc.dim());
  for (std::size_t k = 0; k < yc.dim(); ++k) counts_y[k] = ss.counts[k] * factor;
  std::size_t snaps = snaps0 * factor;
  if (snaps < 9) fail(where, "verify needs at least 9 snapshots");

  SolveOptions opt = ss.options;
  opt.snapshots = snaps;
  Grid gy = Grid::regular(yc, counts_y);
  GridField v = solve(reduced, gy, ss.ic, opt);

  std::size_t c = v.frame_count() / 2;
  std::size_t wlo = c - 4;
  std::vector<double> times(v.times().begin() + wlo,
                            v.times().begin() + wlo + 9);

  std::vector<std::size_t> counts_x(xc.dim());
  for (std::size_t a = 0; a < xc.dim(); ++a) {
    counts_x[a] = src_to_tgt[a] >= 0
                      ? counts_y[static_cast<std::size_t>(src_to_tgt[a])]
                      : ss.fiber_nodes;
  }
  Grid gx = Grid::regular(xc, counts_x);

  std::vector<std::vector<double>> frames(
      9, std::vector<double>(gx.node_count()));
  std::vector<std::size_t> iy(yc.dim());
  for (std::size_t fx = 0; fx < gx.node_count(); ++fx) {
    std::vector<std::size_t> ix = gx.unflat(fx);
    for (std::size_t k = 0; k < yc.dim(); ++k) iy[k] = ix[axes[k]];
    std::size_t fy = gy.flat(iy);
    double extra =
        wrong ? eval(*wrong, xc.bind(gx.point(fx))) : 0.0;
    for (std::size_t t = 0; t < 9; ++t) {
      frames[t][fx] = v.frame(wlo + t)[fy] + extra;
    }
  }
  GridField lifted(std::move(gx), std::move(times), std::move(frames));
  return interior_residual(full, lifted).max_abs;
}

void run_verify(const FixtureObjects& objs, const ManifestEntry& e,
                const RunSettings& rs, const std::string& where,
                CheckResult& r) {
  const ParabolicOperator& full = objs.need_operator(arg_at(e, 1, where));
  const Fibering& fib = objs.need_fibering(arg_at(e, 2, where));
  const SolveSpec& ss = objs.need_solve(arg_at(e, 3, where));
  double ordmin = num_at(e, 4, where);
  double ordmax = num_at(e, 5, where);
  double resmax = num_at(e, 6, where);
  std::size_t reps = std::max<std::size_t>(2, rs.refinements);
  std::size_t snaps0 = rs.snapshots ? rs.snapshots : ss.options.snapshots;

  std::vector<double> resid;
  std::string detail;
  for (std::size_t rlevel = 0; rlevel < reps; ++rlevel) {
    double res = lifted_residual(objs, full, fib, ss,
                                 std::size_t{1} << rlevel, snaps0, nullptr,
                                 where);
    resid.push_back(res);
    if (!detail.empty()) detail += ' ';
    detail += "res" + std::to_string(rlevel) + "=" + format_number(res);
  }
  double order = std::log2(resid.front() / resid.back()) /
                 static_cast<double>(reps - 1);
  detail += " order=" + format_number(order) +
            " resmax=" + format_number(resmax * rs.tol_scale);
  r.value = order;
  r.threshold = ordmin;
  r.pass = order >= ordmin && order <= ordmax &&
           resid.back() <= resmax * rs.tol_scale;
  r.detail = std::move(detail);
}

void run_verifywrong(const FixtureObjects& objs, const ManifestEntry& e,
                     const RunSettings& rs, const std::string& where,
                     CheckResult& r) {
  const ParabolicOperator& full = objs.need_operator(arg_at(e, 1, where));
  const Fibering& fib = objs.need_fibering(arg_at(e, 2, where));
  const SolveSpec& ss = objs.need_solve(arg_at(e, 3, where));
  Expr wrong = objs.parse_expr(arg_at(e, 4, where));
  double wmin = num_at(e, 5, where);
  std::size_t snaps0 = rs.snapshots ? rs.snapshots : ss.options.snapshots;
  double res = lifted_residual(objs, full, fib, ss, 1, snaps0, &wrong, where);
  r.value = res;
  r.threshold = wmin;
  r.pass = res >= wmin;
}

void run_one(const FixtureObjects& objs, const ManifestEntry& e,
             const RunSettings& rs, const std::string& where,
             CheckResult& r) {
  if (e.key == "project") {
    run_project(objs, e, rs, where, r);
  } else if (e.key == "reduce") {
    run_reduce(objs, e, rs, where, r, true);
  } else if (e.key == "reducedev") {
    run_reduce(objs, e, rs, where, r, false);
  } else if (e.key == "fiberconst") {
    run_fiberconst(objs, e, rs, where, r);
  } else if (e.key == "invariance") {
    run_invariance(objs, e, rs, where, r);
  } else if (e.key == "welldefined") {
    run_welldefined(objs, e, rs, where, r);
  } else if (e.key == "conformal") {
    run_conformal(objs, e, rs, where, r);
  } else if (e.key == "classify") {
    run_classify(objs, e, rs, where, r);
  } else if (e.key == "canonical") {
    run_canonical(objs, e, rs, where, r);
  } else if (e.key == "liftcheck") {
    run_liftcheck(objs, e, rs, where, r);
  } else if (e.key == "decompose") {
    run_decompose(objs, e, rs, where, r);
  } else if (e.key == "curvature") {
    run_curvature(objs, e, rs, where, r);
  } else if (e.key == "connform") {
    run_connform(objs, e, rs, where, r);
  } else if (e.key == "exprval") {
    run_exprval(objs, e, rs, where, r);
  } else if (e.key == "inner") {
    run_inner(objs, e, rs, where, r);
  } else if (e.key == "detzero") {
    run_detzero(objs, e, rs, where, r);
  } else if (e.key == "note") {
    run_note(e, where, r);
  } else if (e.key == "opmatch") {
    run_opmatch(objs, e, rs, where, r);
  } else if (e.key == "verify") {
    run_verify(objs, e, rs, where, r);
  } else if (e.key == "verifywrong") {
    run_verifywrong(objs, e, rs, where, r);
  } else {
    fail(where, "unknown check kind");
  }
}

}  // namespace

std::vector<CheckResult> run_manifest(const Manifest& man,
                                      const RunSettings& rs) {
  FixtureObjects objs = FixtureObjects::build(man);
  std::vector<CheckResult> out;
  for (const auto* sec : man.all("checks")) {
    for (const auto& e : sec->entries) {
      if (!rs.kinds.empty() &&
          std::find(rs.kinds.begin(), rs.kinds.end(), e.key) ==
              rs.kinds.end()) {
        continue;
      }
      const std::string where = entry_where(objs.name(), e);
      CheckResult r;
      r.fixture = objs.name();
      r.kind = e.key;
      try {
        r.id = arg_at(e, 0, where);
        run_one(objs, e, rs, where, r);
      } catch (const std::exception& ex) {
        r.pass = false;
        r.detail = "error=" + sanitize(ex.what());
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixture library.

namespace {

// Hashes pin the shipped fixture contents; load() rejects edits so recorded
// expectations cannot drift silently.
const std::vector<std::pair<std::string, std::string>> kPinned = {
    {"example1", "e9f6da686a33b269"},
    {"example2", "ff90d5f8a81047c1"},
    {"example3", "37a9967930bf4f50"},
    {"example4", "41e8cba530322990"},
    {"example5", "38d270a366a0c536"},
    {"example6", "7bd4d0afc15dd137"},
    {"canonical_power", "05d7f02d03886b30"},
    {"canonical_exponential", "ba0c1bfd9da6aa4c"},
    {"classify", "29daac09a9155418"},
    {"euclid_identity", "dc30ad6d93afe897"},
    {"trivial_line", "bda4bfca2673aceb"},
    {"rot3", "5ab0f594ec117e16"},
    {"screw3d", "049de0b32d4fe8a6"},
    {"negatives_example1", "b68c9a1f8ece6311"},
    {"negatives_example5", "eee723640f2fb37b"},
};

}  // namespace

const std::vector<std::pair<std::string, std::string>>&
FixtureLibrary::pinned() {
  return kPinned;
}

FixtureLibrary::FixtureLibrary(std::string dir) : dir_(std::move(dir)) {
  for (const auto& [name, hash] : kPinned) {
    (void)hash;
    names_.push_back(name);
  }
}

Manifest FixtureLibrary::load(const std::string& name) const {
  auto it = std::find_if(kPinned.begin(), kPinned.end(),
                         [&](const auto& p) { return p.first == name; });
  if (it == kPinned.end()) {
    throw DomainError("unknown fixture '" + name + "'");
  }
  std::string path = dir_ + "/" + name + ".pm";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open fixture file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  std::string hash = fnv1a64_hex(text);
  if (hash != it->second) {
    throw DomainError("fixture '" + name + "' content hash mismatch: got " +
                      hash + ", pinned " + it->second);
  }
  return Manifest::parse(text, path);
}

std::vector<CheckResult> run_all(const FixtureLibrary& lib,
                                 const RunSettings& rs) {
  std::vector<CheckResult> out;
  for (const auto& name : lib.names()) {
    Manifest man = lib.load(name);
    std::vector<CheckResult> part = run_manifest(man, rs);
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  return out;
}

const std::vector<std::string>& unique_assertion_ids() {
  static const std::vector<std::string> ids = {
      "EX1_REDUCED",   "EX2_REDUCED",     "EX2_FACTORIZATION",
      "EX3_METRIC",    "EX3_REDUCED",     "EX4_REDUCED",
      "EX5_MODULUS",   "EX6_COEF",        "EX6_INVERSION",
      "EX6_TRANSLATION", "ROT3_NOTLIFT",  "TRIVIAL_LIFT",
      "CANON_POWER",   "CANON_EXP",       "CLASS_CONSTANT",
      "CLASS_POWER",   "CLASS_EXPONENTIAL", "CLASS_ARBITRARY",
  };
  return ids;
}

// ---------------------------------------------------------------------------
// Reports and table export.

namespace {

void write_one_table(const ReducedTables& rt,
                     const std::vector<std::vector<double>>& per_u,
                     const std::string& path,
                     std::vector<std::string>* paths) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write " + path);
  out << "u";
  for (const auto& c : rt.chart.coords) out << ',' << c;
  out << ",value\n";
  for (std::size_t ui = 0; ui < rt.u_values.size(); ++ui) {
    for (std::size_t flat = 0; flat < rt.node_count(); ++flat) {
      Point y = rt.node_point(flat);
      out << format_number(rt.u_values[ui]);
      for (double c : y) out << ',' << format_number(c);
      out << ',' << format_number(per_u[ui][flat]) << '\n';
    }
  }
  paths->push_back(path);
}

}  // namespace

std::vector<std::string> write_tables(const ReducedTables& rt,
                                      const std::string& dir,
                                      const std::string& base) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  std::size_t m = rt.chart.dim();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      write_one_table(rt, rt.b2[i * m + j],
                      dir + "/" + base + "_b2_" + std::to_string(i) + "_" +
                          std::to_string(j) + ".csv",
                      &paths);
      write_one_table(rt, rt.c2[i * m + j],
                      dir + "/" + base + "_c2_" + std::to_string(i) + "_" +
                          std::to_string(j) + ".csv",
                      &paths);
    }
    write_one_table(
        rt, rt.b1[i],
        dir + "/" + base + "_b1_" + std::to_string(i) + ".csv", &paths);
  }
  write_one_table(rt, rt.q, dir + "/" + base + "_q.csv", &paths);
  return paths;
}

void write_report_kv(const std::vector<CheckResult>& results,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write " + path);
  for (const CheckResult& r : results) {
    std::string key = r.fixture + "." + r.kind + "." + r.id;
    out << key << ".pass = " << (r.pass ? 1 : 0) << '\n';
    out << key << ".value = " << format_number(r.value) << '\n';
    out << key << ".threshold = " << format_number(r.threshold) << '\n';
    // Detail tokens are already key=value pairs.
    std::size_t pos = 0;
    while (pos < r.detail.size()) {
      std::size_t sp = r.detail.find(' ', pos);
      if (sp == std::string::npos) sp = r.detail.size();
      std::string tok = r.detail.substr(pos, sp - pos);
      std::size_t eq = tok.find('=');
      if (eq != std::string::npos && eq > 0) {
        out << key << '.' << tok.substr(0, eq) << " = " << tok.substr(eq + 1)
            << '\n';
      }
      pos = sp + 1;
    }
  }
}

}  // namespace pdemorph::corpus
