#pragma once

// Report persistence. Numbers are written in shortest round-trip form, so
// equal reports give equal bytes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mest/error.hpp"
#include "mest/harness/audit.hpp"
#include "mest/harness/config.hpp"
#include "mest/harness/experiment.hpp"

namespace mest::harness {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCsvHeader =
    "n,replicate,distance,mass_deficit,certified_gap,m_n,wall_ms";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

inline std::string report_csv(const ExperimentReport& report) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : report.records) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.n, r.replicate, format_number(r.distance),
                       format_number(r.mass_deficit), format_number(r.certified_gap),
                       format_number(r.m_n), format_number(r.wall_ms));
  }
  return out;
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["model"] = {{"id", c.model_id}, {"truth", c.true_parameter}};
  j["contrast"] = {{"id", c.contrast_id}};
  j["experiment"] = {{"n_schedule", c.n_schedule}, {"replicates", c.replicates}, {"seed", c.master_seed}};
  j["opt"] = {{"kind", to_string(c.optimizer)},
              {"grid_step", c.grid_step},
              {"support_size", c.support_size},
              {"tol", c.tol ? nlohmann::json(*c.tol) : nlohmann::json("auto")},
              {"max_iter", c.max_iter}};
  j["audit"] = {{"lambda", c.lambda},       {"a_star", c.a_star},     {"n_mc", c.mc_budget},
                {"radius", c.radius},       {"net_size", c.net_size}, {"tail_ceiling", c.tail_ceiling},
                {"grid", c.audit_grid}};
  j["report"] = {{"wall_time", c.wall_time}};
  return j;
}

// NaN and infinities have no JSON literal; they are written as null.
inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json report_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["config"] = config_json(report.config);
  j["optimizer"] = report.optimizer;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json rec = {{"n", r.n},
                          {"replicate", r.replicate},
                          {"distance", number_or_null(r.distance)},
                          {"mass_deficit", number_or_null(r.mass_deficit)},
                          {"certified_gap", number_or_null(r.certified_gap)},
                          {"m_n", number_or_null(r.m_n)},
                          {"wall_ms", r.wall_ms},
                          {"iterations", r.iterations},
                          {"converged", r.converged},
                          {"stop_reason", r.stop_reason},
                          {"failed", r.failed}};
    if (r.failed) {
      rec["error"] = r.error;
    } else {
      rec["theta_hat"] = to_json(r.theta_hat);
    }
    recs.push_back(std::move(rec));
  }
  j["records"] = std::move(recs);
  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back({{"n", a.n},
                    {"median_distance", number_or_null(a.median)},
                    {"q10", number_or_null(a.q10)},
                    {"q90", number_or_null(a.q90)},
                    {"succeeded", a.succeeded},
                    {"failed", a.failed}});
  }
  j["aggregates"] = std::move(aggs);
  return j;
}

/// Inverse of report_json for the fields the plot needs.
inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  for (const auto& a : j.at("aggregates")) {
    SizeAggregate agg;
    agg.n = a.at("n").get<std::size_t>();
    agg.median = num(a.at("median_distance"));
    agg.q10 = num(a.at("q10"));
    agg.q90 = num(a.at("q90"));
    agg.succeeded = a.at("succeeded").get<std::size_t>();
    agg.failed = a.at("failed").get<std::size_t>();
    r.aggregates.push_back(agg);
  }
  if (j.contains("optimizer")) r.optimizer = j.at("optimizer").get<std::string>();
  return r;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

/// Log-log plot of median distance against n with the decile band. Values
/// at or below zero are drawn at the floor of the axis.
inline std::string plot_svg(const ExperimentReport& report) {
  std::vector<SizeAggregate> pts;
  for (const auto& a : report.aggregates) {
    if (!std::isnan(a.median)) pts.push_back(a);
  }
  std::set<std::size_t> distinct;
  for (const auto& a : pts) distinct.insert(a.n);
  if (distinct.size() < 2) throw ArgumentError("plot: need at least two distinct sample sizes");

  double ymin = std::numeric_limits<double>::infinity();
  double ymax = 0.0;
  for (const auto& a : pts) {
    for (double v : {a.median, a.q10, a.q90}) {
      if (v > 0.0 && std::isfinite(v)) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (!(ymax > 0.0)) {
    ymin = 1e-6;
    ymax = 1.0;
  }
  const double ly0 = std::floor(std::log10(ymin)) - (ymin == ymax ? 1.0 : 0.0);
  const double ly1 = std::ceil(std::log10(ymax)) + (ymin == ymax ? 1.0 : 0.0);
  const double lx0 = std::log10(static_cast<double>(*distinct.begin()));
  const double lx1 = std::log10(static_cast<double>(*distinct.rbegin()));

  constexpr double W = 640.0;
  constexpr double H = 420.0;
  constexpr double L = 70.0;
  constexpr double R = 20.0;
  constexpr double T = 30.0;
  constexpr double B = 50.0;
  auto px = [&](double n) { return L + (std::log10(n) - lx0) / (lx1 - lx0) * (W - L - R); };
  auto py = [&](double v) {
    const double lv = v > 0.0 ? std::max(std::log10(v), ly0) : ly0;
    return H - B - (lv - ly0) / (ly1 - ly0) * (H - T - B);
  };
  auto f = [](double v) { return fmt::format("{:.2f}", v); };

  std::string s;
  s += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
      W, H, W, H);
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  // Axes and decade ticks.
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", f(L),
                   f(H - B), f(W - R), f(H - B));
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", f(L), f(T),
                   f(L), f(H - B));
  for (double e = ly0; e <= ly1 + 1e-9; e += 1.0) {
    const double y = py(std::pow(10.0, e));
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n", f(L), f(y),
                     f(W - R), f(y));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">1e{}</text>\n", f(L - 6), f(y + 4),
                     static_cast<int>(e));
  }
  for (std::size_t n : distinct) {
    const double x = px(static_cast<double>(n));
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", f(x),
                     f(H - B + 16), n);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">n</text>\n", f((L + W - R) / 2),
                   f(H - 10));
  s += fmt::format(
      "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">median "
      "distance to truth</text>\n",
      f((T + H - B) / 2), f((T + H - B) / 2));
  // Decile band.
  std::string band;
  for (const auto& a : pts) band += f(px(static_cast<double>(a.n))) + "," + f(py(a.q90)) + " ";
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    band += f(px(static_cast<double>(it->n))) + "," + f(py(it->q10)) + " ";
  }
  band.pop_back();
  s += "<polygon points=\"" + band + "\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>\n";
  // Median line and markers.
  std::string line;
  for (const auto& a : pts) line += f(px(static_cast<double>(a.n))) + "," + f(py(a.median)) + " ";
  line.pop_back();
  s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>\n";
  for (const auto& a : pts) {
    s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"#08519c\"/>\n",
                     f(px(static_cast<double>(a.n))), f(py(a.median)));
  }
  s += "</g>\n</svg>\n";
  return s;
}

inline void emit_plot(const ExperimentReport& report, const std::filesystem::path& path) {
  write_text(path, plot_svg(report));
}

/// Writes report.csv, report.json and convergence.svg into `dir`.
inline void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());
  write_text(dir / "report.csv", report_csv(report));
  write_text(dir / "report.json", dump_json(report_json(report)));
  std::set<std::size_t> distinct;
  for (const auto& a : report.aggregates) {
    if (!std::isnan(a.median)) distinct.insert(a.n);
  }
  if (distinct.size() >= 2) emit_plot(report, dir / "convergence.svg");
}

}  // namespace mest::harness
