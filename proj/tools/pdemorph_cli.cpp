// Command-line front end: validates fixture manifests and runs their
// declared checks. Exit codes: 0 all passed, 1 a check or invariant
// failed, 2 usage or parse error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pdemorph/corpus.hpp"
#include "pdemorph/errors.hpp"
#include "pdemorph/manifest.hpp"

namespace {

using pdemorph::Manifest;
namespace corpus = pdemorph::corpus;

struct Options {
  std::string file;
  std::string dir = "fixtures";
  std::string out;
  corpus::RunSettings rs;
};

int report(const std::vector<corpus::CheckResult>& results,
           const std::string& out_dir) {
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::cout << corpus::format_line(r) << '\n';
    if (!r.pass) ++failed;
  }
  std::cout << results.size() << " checks, " << failed << " failed\n";
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    corpus::write_report_kv(results, out_dir + "/report.kv");
  }
  return failed == 0 ? 0 : 1;
}

int run_filtered(const Manifest& man, const Options& opt,
                 std::vector<std::string> kinds) {
  corpus::RunSettings rs = opt.rs;
  rs.kinds = std::move(kinds);
  rs.out_dir = opt.out;
  return report(corpus::run_manifest(man, rs), opt.out);
}

int cmd_check(const Manifest& man, const Options& opt) {
  corpus::FixtureObjects objs = corpus::FixtureObjects::build(man);
  objs.validate(opt.rs.seed);
  std::cout << "ok " << objs.name() << '\n';
  return 0;
}

int cmd_corpus(const Options& opt) {
  corpus::FixtureLibrary lib(opt.dir);
  corpus::RunSettings rs = opt.rs;
  rs.out_dir = opt.out;
  return report(corpus::run_all(lib, rs), opt.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parabolic equation reduction and lifting checks"};
  app.require_subcommand(1);

  Options opt;
  app.add_option("--seed", opt.rs.seed, "Sampling seed");
  app.add_option("--tol-scale", opt.rs.tol_scale,
                 "Multiplier applied to every threshold");
  app.add_option("--snapshots", opt.rs.snapshots,
                 "Override solver snapshot count (0: keep manifest values)");
  app.add_option("--refinements", opt.rs.refinements,
                 "Grid refinements for convergence checks");
  app.add_option("--out", opt.out,
                 "Directory for report.kv and coefficient tables");

  CLI::App* check =
      app.add_subcommand("check", "Validate a manifest's declared objects");
  check->add_option("file", opt.file, "Manifest file")->required();

  CLI::App* reduce = app.add_subcommand(
      "reduce", "Run projection checks; write coefficient tables");
  reduce->add_option("file", opt.file, "Manifest file")->required();

  CLI::App* verify = app.add_subcommand(
      "verify", "Solve reduced equations, lift, measure residual decay");
  verify->add_option("file", opt.file, "Manifest file")->required();

  CLI::App* liftcheck = app.add_subcommand(
      "liftcheck", "Connection decomposition and group lifting checks");
  liftcheck->add_option("file", opt.file, "Manifest file")->required();

  CLI::App* classify =
      app.add_subcommand("classify", "Run diffusivity classification checks");
  classify->add_option("file", opt.file, "Manifest file")->required();

  CLI::App* corpus_cmd =
      app.add_subcommand("corpus", "Run every check of the pinned fixtures");
  corpus_cmd->add_option("--dir", opt.dir, "Fixture directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Manifest man;
  if (!corpus_cmd->parsed()) {
    // Text-level problems (unreadable file, bad syntax, missing header)
    // are usage errors; object invariants are checked after this point.
    try {
      man = Manifest::parse_file(opt.file);
    } catch (const std::exception& e) {
      std::cerr << "parse error: " << e.what() << '\n';
      return 2;
    }
  }

  try {
    if (check->parsed()) return cmd_check(man, opt);
    if (reduce->parsed()) {
      if (opt.out.empty()) opt.out = "pdemorph_out";
      return run_filtered(man, opt, {"project", "reduce", "reducedev"});
    }
    if (verify->parsed()) {
      return run_filtered(man, opt, {"verify", "verifywrong"});
    }
    if (liftcheck->parsed()) {
      return run_filtered(man, opt,
                          {"liftcheck", "decompose", "curvature", "connform"});
    }
    if (classify->parsed()) return run_filtered(man, opt, {"classify"});
    return cmd_corpus(opt);
  } catch (const pdemorph::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
