#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pdemorph/connection.hpp"
#include "pdemorph/manifest.hpp"
#include "pdemorph/operators.hpp"
#include "pdemorph/projectibility.hpp"
#include "pdemorph/solver.hpp"

namespace pdemorph::corpus {

struct RunSettings {
  unsigned seed = 42;
  double tol_scale = 1.0;
  std::size_t snapshots = 0;    // 0: keep each solve section's value
  std::size_t refinements = 3;  // grid doublings used by convergence checks
  std::string out_dir;          // empty: no table files written
  std::vector<std::string> kinds;  // empty: run every check kind
};

/// Outcome of one check entry. `value` is the measured quantity (witness,
/// deviation, convergence order) and `threshold` the bound it was held to.
struct CheckResult {
  std::string fixture;
  std::string kind;
  std::string id;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;  // space-separated key=value extras, fixed order
};

/// Shortest round-trip decimal form; identical across runs and platforms
/// that implement IEEE doubles.
std::string format_number(double v);

/// "[PASS] fixture:kind:id value=... threshold=... <detail>"
std::string format_line(const CheckResult& r);

struct GeneratorSpec {
  std::string name;
  std::vector<Expr> comp;
  bool expect_liftable = true;
};

struct GroupData {
  GroupFibering gf;
  std::vector<GeneratorSpec> generators;
  std::vector<Loop> loops;
};

struct SolveSpec {
  std::string op;  // operator key solved on the base grid
  Expr ic;
  std::vector<std::size_t> counts;  // base-grid nodes per target axis
  std::size_t fiber_nodes = 9;      // nodes per fiber axis when lifting
  SolveOptions options;
};

/// Objects declared by one manifest, built and cross-referenced. Expressions
/// have the manifest's [constants] section substituted in.
class FixtureObjects {
 public:
  static FixtureObjects build(const Manifest& man);

  const std::string& name() const { return name_; }

  Expr parse_expr(const std::string& text) const;

  const Chart& need_chart(const std::string& key) const;
  const MetricField& need_metric(const std::string& key) const;
  bool metric_definite(const std::string& key) const;
  const ParabolicOperator& need_operator(const std::string& key) const;
  const SmoothMap& need_map(const std::string& key) const;
  const Fibering& need_fibering(const std::string& key) const;
  const GroupData& need_group(const std::string& key) const;
  const SolveSpec& need_solve(const std::string& key) const;

  const std::map<std::string, Chart>& charts() const { return charts_; }
  const std::map<std::string, MetricField>& metrics() const {
    return metrics_;
  }
  const std::map<std::string, ParabolicOperator>& operators() const {
    return operators_;
  }
  const std::map<std::string, SmoothMap>& maps() const { return maps_; }
  const std::map<std::string, Fibering>& fiberings() const {
    return fiberings_;
  }
  const std::map<std::string, GroupData>& groups() const { return groups_; }
  const std::map<std::string, SolveSpec>& solves() const { return solves_; }

  /// Structural pass over every declared object: chart boxes, metric
  /// positive definiteness (unless `definite = false`), operator coefficient
  /// symmetry, fibering sections, group axioms. Throws DomainError naming
  /// the offending object.
  void validate(unsigned seed = 42) const;

 private:
  std::string name_;
  std::map<std::string, Expr> constants_;
  std::map<std::string, Chart> charts_;
  std::map<std::string, MetricField> metrics_;
  std::map<std::string, bool> metric_definite_;
  std::map<std::string, ParabolicOperator> operators_;
  std::map<std::string, SmoothMap> maps_;
  std::map<std::string, Fibering> fiberings_;
  std::map<std::string, GroupData> groups_;
  std::map<std::string, SolveSpec> solves_;
};

/// Runs every entry of the manifest's [checks] section in declaration
/// order. Check-level failures become report entries; malformed manifests
/// throw.
std::vector<CheckResult> run_manifest(const Manifest& man,
                                      const RunSettings& rs = {});

/// The named fixture set shipped with the project. File contents are pinned
/// by FNV-1a hash; load() rejects edited fixtures.
class FixtureLibrary {
 public:
  explicit FixtureLibrary(std::string dir);

  const std::vector<std::string>& names() const { return names_; }
  Manifest load(const std::string& name) const;

  /// (name, content hash) pairs in run order.
  static const std::vector<std::pair<std::string, std::string>>& pinned();

 private:
  std::string dir_;
  std::vector<std::string> names_;
};

/// Every fixture in library order; deterministic for a fixed seed.
std::vector<CheckResult> run_all(const FixtureLibrary& lib,
                                 const RunSettings& rs = {});

/// Assertion ids that carry a worked example's quoted value. Each must
/// appear exactly once across the corpus so no expected value is asserted
/// in two places.
const std::vector<std::string>& unique_assertion_ids();

/// One CSV per coefficient table: <base>_b2_<i>_<j>.csv, <base>_c2_<i>_<j>.csv,
/// <base>_b1_<i>.csv, <base>_q.csv, each "u,<coords...>,value" rows in
/// node-major order. Returns the paths written.
std::vector<std::string> write_tables(const ReducedTables& rt,
                                      const std::string& dir,
                                      const std::string& base);

/// Machine-readable mirror of a report: "<id>.<field> = <value>" lines.
void write_report_kv(const std::vector<CheckResult>& results,
                     const std::string& path);

}  // namespace pdemorph::corpus
