// mest: command-line front end.
//
//   mest identities                       contrast identity suite
//   mest fit         --config FILE        one fit at the first n of the schedule
//   mest check-a2    --config FILE        separation audit -> audit.json
//   mest consistency --config FILE        replicated experiment -> report.*
//   mest plot        --report FILE        report.json -> convergence.svg
//
// Exit codes: 0 success, 2 audit or identity FAIL, 1 error.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mest/contrast.hpp"
#include "mest/harness/audit.hpp"
#include "mest/harness/config.hpp"
#include "mest/harness/experiment.hpp"
#include "mest/harness/report_io.hpp"

namespace fs = std::filesystem;
using namespace mest;
using namespace mest::harness;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::size_t threads = 0;
};

ExperimentConfig load(const GlobalOptions& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (g.seed) c.master_seed = *g.seed;
  if (g.threads) c.threads = g.threads;
  validate(c);
  return c;
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return g;
}

// Closed forms against quadrature and the bounded-family Θ formulas.
int run_identities() {
  bool ok = true;
  const auto grid = log_grid(1e-2, 1e2, 20);
  auto line = [&](const std::string& name, double err, double tol) {
    const bool pass = err <= tol;
    ok = ok && pass;
    std::cout << fmt::format("{:<44} max_err={:.3e} tol={:.0e} {}\n", name, err, tol,
                             pass ? "PASS" : "FAIL");
  };

  for (const char* key : {"log", "identity", "inv_sq_1p"}) {
    const PhiContrast c = PhiContrast::from_name(key);
    double err = 0.0;
    for (double u : grid) {
      const double closed = psi(c, u);
      err = std::max(err, std::abs(closed - psi_by_quadrature(c, u)) / std::max(1.0, std::abs(closed)));
    }
    line(fmt::format("psi closed form vs quadrature [{}]", key), err, 1e-8);
  }
  {
    const PhiContrast c = PhiContrast::inv_sq_1p();
    double e_theta = 0.0;
    double e_gap = 0.0;
    for (double u : grid) {
      for (double v : grid) {
        const double t = -(u + v * v) / ((1 + v) * (1 + v));
        const double gp = -(v - u) * (v - u) / ((1 + u) * (1 + v) * (1 + v));
        e_theta = std::max(e_theta, std::abs(theta(c, u, v) - t));
        e_gap = std::max(e_gap, std::abs(theta_gap(c, u, v) - gp));
      }
    }
    line("theta closed form [inv_sq_1p]", e_theta, 1e-12);
    line("theta_gap closed form [inv_sq_1p]", e_gap, 1e-12);
  }
  {
    double e_log = 0.0;
    double e_id = 0.0;
    for (double u : grid) {
      e_log = std::max(e_log, std::abs(psi(PhiContrast::log(), u) - u));
      e_id = std::max(e_id, std::abs(psi(PhiContrast::identity(), u) - 0.5 * u * u));
    }
    line("psi(u) = u [log]", e_log, 1e-12);
    line("psi(u) = u^2/2 [identity]", e_id, 1e-12);
  }
  const auto adm = admissibility_grid();
  for (const char* key : {"log", "identity", "inv_sq_1p", "inv_1p_sq"}) {
    const bool concave = check_concavity_condition(PhiContrast::from_name(key), adm).pass;
    std::cout << fmt::format("{:<44} {}\n", fmt::format("concavity condition [{}]", key),
                             concave ? "holds" : "fails (Frank-Wolfe rejects this family)");
  }
  std::cout << (ok ? "identities: PASS\n" : "identities: FAIL\n");
  return ok ? 0 : 2;
}

int run_fit(const GlobalOptions& g, std::optional<std::size_t> n) {
  ExperimentConfig c = load(g);
  c.n_schedule = {n ? *n : c.n_schedule.front()};
  c.replicates = 1;
  const ExperimentReport report = run_consistency(c);
  const ExperimentRecord& r = report.records.front();
  nlohmann::json j = report_json(report)["records"][0];
  j["optimizer"] = report.optimizer;
  j["model"] = c.model_id;
  j["contrast"] = c.contrast_id;
  std::cout << j.dump(2) << "\n";
  return r.failed ? 1 : 0;
}

int run_check_a2(const GlobalOptions& g, const std::optional<std::string>& a_star) {
  ExperimentConfig c = load(g);
  if (a_star) c.a_star = *a_star;
  const nlohmann::json audit = run_separation_audit(c);
  fs::create_directories(g.out_dir);
  write_text(fs::path(g.out_dir) / "audit.json", dump_json(audit));
  std::size_t failed = 0;
  for (const auto& r : audit["records"]) failed += r["pass"].get<bool>() ? 0 : 1;
  std::cout << fmt::format("audit: {} grid points, {} failed, verdict {}\n", audit["records"].size(),
                           failed, audit["verdict"].get<std::string>());
  return audit["verdict"] == "PASS" ? 0 : 2;
}

int run_consistency_cmd(const GlobalOptions& g) {
  const ExperimentConfig c = load(g);
  const ExperimentReport report = run_consistency(c);
  write_report(report, g.out_dir);
  for (const auto& a : report.aggregates) {
    std::cout << fmt::format("n={:<7} median={:<12} q10={:<12} q90={:<12} failed={}\n", a.n,
                             format_number(a.median), format_number(a.q10), format_number(a.q90),
                             a.failed);
  }
  return 0;
}

int run_plot(const GlobalOptions& g, const std::string& report_path) {
  std::ifstream in(report_path);
  if (!in) throw ArgumentError("cannot open report: " + report_path);
  std::stringstream buf;
  buf << in.rdbuf();
  const ExperimentReport report = report_from_json(nlohmann::json::parse(buf.str()));
  fs::create_directories(g.out_dir);
  emit_plot(report, fs::path(g.out_dir) / "convergence.svg");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrast-based M-estimation: fits, separation audits and consistency runs"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", g.config_path, "Config file (key-value or JSON)");
    sub->add_option("--seed", seed, "Master seed, overrides the config");
    sub->add_option("--out-dir", g.out_dir, "Output directory");
    sub->add_option("--threads", g.threads, "Worker threads, overrides the config");
  };

  auto* identities = app.add_subcommand("identities", "Check closed-form contrast identities");
  auto* fit = app.add_subcommand("fit", "Run a single fit and print the result");
  std::size_t fit_n = 0;
  fit->add_option("--n", fit_n, "Sample size (default: first entry of the schedule)");
  auto* check = app.add_subcommand("check-a2", "Run the separation audit");
  std::string a_star;
  check->add_option("--a-star", a_star, "Override the a* map: constant, contraction or identity");
  auto* consistency = app.add_subcommand("consistency", "Run the replicated consistency experiment");
  auto* plot = app.add_subcommand("plot", "Render convergence.svg from a report.json");
  std::string report_path;
  plot->add_option("--report", report_path, "Path to report.json")->required();
  for (auto* sub : {fit, check, consistency, plot}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto* sub : {fit, check, consistency, plot}) {
      if (sub->parsed() && sub->count("--seed")) g.seed = seed;
    }
    if (identities->parsed()) return run_identities();
    if (fit->parsed()) {
      return run_fit(g, fit->count("--n") ? std::optional<std::size_t>(fit_n) : std::nullopt);
    }
    if (check->parsed()) {
      return run_check_a2(g, check->count("--a-star") ? std::optional<std::string>(a_star)
                                                     : std::nullopt);
    }
    if (consistency->parsed()) return run_consistency_cmd(g);
    if (plot->parsed()) return run_plot(g, report_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
