#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mest/error.hpp"
#include "mest/harness/audit.hpp"
#include "mest/harness/config.hpp"
#include "mest/harness/experiment.hpp"
#include "mest/harness/report_io.hpp"

using namespace mest;
using namespace mest::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mest_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t k = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++k;
  return k;
}

// Least-squares slope of log median against log n.
double loglog_slope(const ExperimentReport& r) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(r.aggregates.size());
  for (const auto& a : r.aggregates) {
    const double x = std::log(static_cast<double>(a.n));
    const double y = std::log(a.median);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

ExperimentConfig gaussian_config() {
  ExperimentConfig c;
  c.model_id = "gaussian_location";
  c.n_schedule = {100, 400, 1600};
  c.replicates = 15;
  c.master_seed = 99;
  c.grid_step = 0.005;
  c.wall_time = false;
  return c;
}

}  // namespace

TEST(Config, KeyValueAndJsonAgree) {
  const std::string kv =
      "# comment\n"
      "model.id = gaussian_mixture\n"
      "model.truth = -1:0.3, 1:0.7   # trailing\n"
      "experiment.n_schedule = 100, 1000\n"
      "experiment.seed = 7\n"
      "opt.kind = em\n"
      "opt.tol = auto\n"
      "report.wall_time = false\n";
  const std::string js = R"({"model": {"id": "gaussian_mixture",
      "truth": {"atoms": [-1, 1], "weights": [0.3, 0.7]}},
      "experiment": {"n_schedule": [100, 1000], "seed": 7},
      "opt": {"kind": "em", "tol": "auto"}, "report": {"wall_time": false}})";
  const ExperimentConfig a = parse_key_value(kv);
  const ExperimentConfig b = parse_json(js);
  EXPECT_EQ(config_json(a), config_json(b));
  EXPECT_EQ(a.n_schedule, (std::vector<std::size_t>{100, 1000}));
  EXPECT_EQ(a.optimizer, OptimizerKind::em);
  EXPECT_FALSE(a.tol.has_value());
  EXPECT_EQ(parse_measure(a.true_parameter), MixingMeasure({-1.0, 1.0}, {0.3, 0.7}));
}

TEST(Config, ParseErrors) {
  EXPECT_THROW(parse_key_value("model.idd = x\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("model.id\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("experiment.seed = 1\nexperiment.seed = 2\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("experiment.n_schedule = 100, 100\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("experiment.n_schedule = 1000, 100\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("experiment.replicates = 0\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("experiment.replicates = -3\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("opt.grid_step = abc\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("opt.kind = newton\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("audit.lambda = 1\n"), ArgumentError);
  EXPECT_THROW(parse_key_value("report.wall_time = maybe\n"), ArgumentError);
  EXPECT_THROW(parse_json("[1, 2]"), ArgumentError);
  EXPECT_THROW(parse_json("{\"model\": "), ArgumentError);
  EXPECT_THROW(load_config("/nonexistent/config.conf"), ArgumentError);
  EXPECT_THROW(parse_measure("0.5"), ArgumentError);
  EXPECT_THROW(parse_box_point(""), ArgumentError);
}

TEST(Config, ModelResolution) {
  ExperimentConfig c;
  c.model_id = "gaussian_mixture";
  c.true_parameter = "-1:0.5, 1:0.4";
  EXPECT_THROW(resolve_model(c), ArgumentError);
  c.true_parameter = "0:1";
  EXPECT_NO_THROW(resolve_model(c));
  c.model_id = "gaussian_location";
  c.true_parameter = "4";
  EXPECT_THROW(resolve_model(c), ArgumentError);
  c.true_parameter = "0.25";
  const auto m = std::get<ParametricFamily>(resolve_model(c));
  EXPECT_EQ(m.truth(), BoxPoint{0.25});
  c.optimizer = OptimizerKind::em;
  EXPECT_THROW(resolve_optimizer(c, m, PhiContrast::log()), ArgumentError);
}

TEST(Consistency, RecordCountIsScheduleTimesReplicates) {
  ExperimentConfig c = gaussian_config();
  c.n_schedule = {100};
  c.replicates = 1;
  EXPECT_EQ(run_consistency(c).records.size(), 1u);
  c.n_schedule = {50, 80};
  c.replicates = 3;
  const auto r = run_consistency(c);
  ASSERT_EQ(r.records.size(), 6u);
  EXPECT_EQ(r.records[4].n, 80u);
  EXPECT_EQ(r.records[4].replicate, 1u);
  for (const auto& rec : r.records) EXPECT_GE(rec.distance, 0.0);
}

TEST(Consistency, GaussianMedianWithinSamplingBand) {
  ExperimentConfig c = gaussian_config();
  c.n_schedule = {10000};
  c.replicates = 9;
  c.grid_step = 0.01;
  const auto r = run_consistency(c);
  EXPECT_LE(r.aggregates[0].median, 0.005 + 3.0 / std::sqrt(10000.0));
}

TEST(Consistency, ByteIdenticalAcrossRunsAndThreadCounts) {
  ExperimentConfig c;
  c.model_id = "gaussian_mixture";
  c.n_schedule = {60, 120};
  c.replicates = 3;
  c.support_size = 41;
  c.wall_time = false;
  const auto a = run_consistency(c, 1);
  const auto b = run_consistency(c, 3);
  EXPECT_EQ(report_csv(a), report_csv(b));
  EXPECT_EQ(dump_json(report_json(a)), dump_json(report_json(b)));
  EXPECT_EQ(a.optimizer, "em");
  EXPECT_NE(report_csv(a).find(kCsvHeader), std::string::npos);
}

TEST(Consistency, InadmissibleOptimizerMarksRecordsFailed) {
  ExperimentConfig c;
  c.model_id = "gaussian_mixture";
  c.contrast_id = "inv_1p_sq";
  c.n_schedule = {50};
  c.replicates = 2;
  c.support_size = 11;
  const auto r = run_consistency(c);
  EXPECT_EQ(r.optimizer, "fw");
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.failed);
    EXPECT_FALSE(rec.error.empty());
  }
  EXPECT_EQ(r.aggregates[0].failed, 2u);
  EXPECT_TRUE(std::isnan(r.aggregates[0].median));
}

TEST(Consistency, MixtureMassDeficitVanishes) {
  for (const char* id : {"gaussian_mixture", "exponential_mixture"}) {
    ExperimentConfig c;
    c.model_id = id;
    c.n_schedule = {300};
    c.replicates = 2;
    c.support_size = 61;
    c.tol = 1e-7;
    for (OptimizerKind k : {OptimizerKind::em, OptimizerKind::fw}) {
      c.optimizer = k;
      for (const auto& rec : run_consistency(c).records) {
        ASSERT_FALSE(rec.failed) << rec.error;
        EXPECT_LE(rec.mass_deficit, 1e-6) << id;
        EXPECT_TRUE(rec.converged) << id;
      }
    }
  }
}

TEST(Plot, TwoPointReportHasTwoMarkers) {
  ExperimentReport r;
  r.aggregates = {{100, 0.2, 0.1, 0.3, 5, 0}, {1000, 0.07, 0.05, 0.1, 5, 0}};
  const std::string svg = plot_svg(r);
  EXPECT_EQ(count_of(svg, "<circle"), 2u);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
}

TEST(Plot, NeedsTwoDistinctSizes) {
  ExperimentReport r;
  r.aggregates = {{100, 0.2, 0.1, 0.3, 5, 0}};
  EXPECT_THROW(plot_svg(r), ArgumentError);
}

TEST(Plot, IdenticalReportsGiveIdenticalFiles) {
  const auto report = run_consistency(gaussian_config());
  const fs::path dir = scratch_dir("plot");
  emit_plot(report, dir / "a.svg");
  emit_plot(report, dir / "b.svg");
  EXPECT_EQ(slurp(dir / "a.svg"), slurp(dir / "b.svg"));
  const double slope = loglog_slope(report);
  EXPECT_GE(slope, -0.7);
  EXPECT_LE(slope, -0.3);
  fs::remove_all(dir);
}

TEST(Plot, UnwritablePathIsIoError) {
  ExperimentReport r;
  r.aggregates = {{100, 0.2, 0.1, 0.3, 5, 0}, {1000, 0.07, 0.05, 0.1, 5, 0}};
  EXPECT_THROW(emit_plot(r, "/nonexistent/dir/plot.svg"), IoError);
}

TEST(Report, WriteAndReloadForPlot) {
  ExperimentConfig c = gaussian_config();
  c.n_schedule = {50, 200};
  c.replicates = 3;
  const auto report = run_consistency(c);
  const fs::path dir = scratch_dir("report");
  write_report(report, dir);
  for (const char* f : {"report.csv", "report.json", "convergence.svg"}) EXPECT_TRUE(fs::exists(dir / f));
  const auto reloaded = report_from_json(nlohmann::json::parse(slurp(dir / "report.json")));
  EXPECT_EQ(plot_svg(reloaded), slurp(dir / "convergence.svg"));
  const std::string csv = slurp(dir / "report.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  fs::remove_all(dir);
}

TEST(Audit, IdentityMapVerdictIsFail) {
  ExperimentConfig c;
  c.a_star = "identity";
  c.mc_budget = 2'000;
  c.audit_grid = "1; -1.5";
  const auto j = run_separation_audit(c);
  EXPECT_EQ(j["verdict"], "FAIL");
  EXPECT_EQ(j["records"].size(), 2u);
}

TEST(Audit, GaussianDefaultsPass) {
  ExperimentConfig c;
  c.a_star = "constant";
  c.mc_budget = 20'000;
  const auto j = run_separation_audit(c);
  EXPECT_EQ(j["records"].size(), 16u);
  EXPECT_EQ(j["verdict"], "PASS");
}

TEST(Audit, MixtureRecordsInequalities) {
  ExperimentConfig c;
  c.model_id = "gaussian_mixture";
  c.mc_budget = 2'000;
  c.net_size = 8;
  c.audit_grid = "-2.5:1; 2:0.5, 2.5:0.5";
  const auto j = run_separation_audit(c);
  ASSERT_TRUE(j.contains("inequalities"));
  EXPECT_EQ(j["inequalities"].size(), 2u);
  for (const auto& q : j["inequalities"]) {
    EXPECT_GE(q["log_margin"].get<double>(), kLogMarginFloor);
    EXPECT_GE(q["jensen_slack"].get<double>(), kJensenSlackFloor);
  }
}

TEST(Audit, EmptyGridIsArgumentError) {
  ExperimentConfig c;
  c.audit_grid = " ; ";
  EXPECT_THROW(run_separation_audit(c), ArgumentError);
}
