#pragma once

// Replicated consistency experiments: for each (n, r) draw n observations
// from P_{θ*} on the stream derive_seed(master_seed, {n, r}), fit, and record
// the distance to θ* and the certified gap.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "mest/contrast.hpp"
#include "mest/error.hpp"
#include "mest/estimation.hpp"
#include "mest/harness/config.hpp"
#include "mest/models.hpp"
#include "mest/parallel.hpp"
#include "mest/rng.hpp"
#include <type_traits>

namespace mest::harness {

using Parameter = std::variant<BoxPoint, MixingMeasure>;

struct ExperimentRecord {
  std::size_t n = 0;
  std::size_t replicate = 0;
  Parameter theta_hat;
  double distance = std::numeric_limits<double>::quiet_NaN();
  /// |1 - mass(θ̂)|; distances use the normalized measure.
  double mass_deficit = std::numeric_limits<double>::quiet_NaN();
  double certified_gap = std::numeric_limits<double>::quiet_NaN();
  double m_n = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::string stop_reason;
  bool failed = false;
  std::string error;
};

/// Median and decile band of the distance over the successful records at n.
struct SizeAggregate {
  std::size_t n = 0;
  double median = std::numeric_limits<double>::quiet_NaN();
  double q10 = std::numeric_limits<double>::quiet_NaN();
  double q90 = std::numeric_limits<double>::quiet_NaN();
  std::size_t succeeded = 0;
  std::size_t failed = 0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::string optimizer;
  std::vector<ExperimentRecord> records;
  std::vector<SizeAggregate> aggregates;
};

/// Registry model with θ* overridden by the config literal when present.
/// θ* must be a probability measure for mixtures.
inline AnyModel resolve_model(const ExperimentConfig& c) {
  AnyModel model = model_by_id(c.model_id);
  return std::visit(
      [&](auto& m) -> AnyModel {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, ParametricFamily>) {
          if (c.true_parameter.empty()) return m;
          const BoxPoint t = parse_box_point(c.true_parameter);
          if (t.size() != m.box().dim() || !m.box().contains(t)) {
            throw ArgumentError("config: model.truth is not a point of the parameter box");
          }
          return m.with_truth(t);
        } else {
          if (c.true_parameter.empty()) return m;
          const MixingMeasure t = parse_measure(c.true_parameter);
          m.validate(t);
          if (!t.is_probability()) throw ArgumentError("config: model.truth must have mass 1");
          return m.with_truth(t);
        }
      },
      model);
}

inline OptimizerKind resolve_optimizer(const ExperimentConfig& c, const AnyModel& model,
                                       const PhiContrast& contrast) {
  const bool parametric = std::holds_alternative<ParametricFamily>(model);
  OptimizerKind k = c.optimizer;
  if (k == OptimizerKind::automatic) {
    if (parametric) return OptimizerKind::grid;
    return contrast.is_log() ? OptimizerKind::em : OptimizerKind::fw;
  }
  if (parametric != (k == OptimizerKind::grid)) {
    throw ArgumentError(std::string("config: optimizer '") + to_string(k) +
                        "' does not apply to model '" + c.model_id + "'");
  }
  return k;
}

/// Linear-interpolation quantile of an unsorted sample; NaN when empty.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

inline void fit_parametric(const ExperimentConfig& c, const ParametricFamily& model,
                           const PhiContrast& contrast, std::vector<double> sample,
                           ExperimentRecord& rec) {
  const EmpiricalContrast<ParametricFamily> ec(contrast, model, std::move(sample));
  const auto res = resolution_for_step(model.box(), c.grid_step);
  const auto fit = fit_grid(ec, res);
  rec.theta_hat = fit.theta_hat;
  rec.distance = model.distance(fit.theta_hat, model.truth());
  rec.mass_deficit = 0.0;
  rec.certified_gap = fit.gap_bound;
  rec.m_n = fit.m_n_value;
  rec.iterations = fit.iterations;
  rec.converged = fit.converged;
  rec.stop_reason = to_string(fit.stop_reason);
}

inline void fit_mixture(const ExperimentConfig& c, const MixtureModel& model,
                        const PhiContrast& contrast, OptimizerKind kind,
                        std::vector<double> sample, ExperimentRecord& rec) {
  const std::size_t n = sample.size();
  const EmpiricalContrast<MixtureModel> ec(contrast, model, std::move(sample));
  const auto grid = model.support_grid(c.support_size);
  const double tol = c.tol ? *c.tol : 1.0 / static_cast<double>(n);
  FitResult<MixingMeasure> fit;
  if (kind == OptimizerKind::em) {
    EmOptions o;
    o.tol = tol;
    if (c.max_iter) o.max_iter = c.max_iter;
    fit = fit_mixture_em(ec, grid, o);
  } else {
    FwOptions o;
    o.tol = tol;
    if (c.max_iter) o.max_iter = c.max_iter;
    fit = fit_mixture_fw(ec, grid, o);
  }
  const MixingMeasure support = fit.theta_hat.pruned();
  rec.theta_hat = support;
  rec.mass_deficit = std::abs(1.0 - support.mass());
  rec.distance = support.is_null() ? std::numeric_limits<double>::infinity()
                                   : model.distance(support, model.truth());
  rec.certified_gap = fit.gap_bound;
  rec.m_n = fit.m_n_value;
  rec.iterations = fit.iterations;
  rec.converged = fit.converged;
  rec.stop_reason = to_string(fit.stop_reason);
}

}  // namespace detail

/// Runs every (n, r) pair on a pool of config.threads workers (or the
/// override). Records are stored in (n, r) order. Fits rejected for
/// admissibility or numeric failure are recorded as failed.
inline ExperimentReport run_consistency(const ExperimentConfig& config,
                                        std::size_t threads_override = 0) {
  validate(config);
  const AnyModel model = resolve_model(config);
  const PhiContrast contrast = PhiContrast::from_name(config.contrast_id);
  const OptimizerKind kind = resolve_optimizer(config, model, contrast);

  ExperimentReport report;
  report.config = config;
  report.optimizer = to_string(kind);
  const std::size_t reps = config.replicates;
  report.records.resize(config.n_schedule.size() * reps);
  const std::size_t threads = threads_override ? threads_override : config.threads;

  parallel_for(report.records.size(), threads, [&](std::size_t idx) {
    ExperimentRecord& rec = report.records[idx];
    rec.n = config.n_schedule[idx / reps];
    rec.replicate = idx % reps;
    const auto start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(config.master_seed, {rec.n, rec.replicate}));
    try {
      std::visit(
          [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            auto sample = m.sample(m.truth(), rec.n, rng);
            if constexpr (std::is_same_v<M, ParametricFamily>) {
              detail::fit_parametric(config, m, contrast, std::move(sample), rec);
            } else {
              detail::fit_mixture(config, m, contrast, kind, std::move(sample), rec);
            }
          },
          model);
    } catch (const AdmissibilityError& e) {
      rec.failed = true;
      rec.error = e.what();
    } catch (const NumericError& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    const auto stop = std::chrono::steady_clock::now();
    rec.wall_ms = config.wall_time
                      ? std::chrono::duration<double, std::milli>(stop - start).count()
                      : 0.0;
  });

  for (std::size_t k = 0; k < config.n_schedule.size(); ++k) {
    SizeAggregate agg;
    agg.n = config.n_schedule[k];
    std::vector<double> d;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto& rec = report.records[k * reps + r];
      if (rec.failed) {
        ++agg.failed;
      } else {
        d.push_back(rec.distance);
      }
    }
    agg.succeeded = d.size();
    agg.median = quantile(d, 0.5);
    agg.q10 = quantile(d, 0.1);
    agg.q90 = quantile(d, 0.9);
    report.aggregates.push_back(agg);
  }
  return report;
}

}  // namespace mest::harness
