#pragma once

// Numerical checks of the separation hypothesis: a continuous map a* with
// P*(m_θ - m_{a*(θ)}) < 0 for θ ≠ θ* and an integrable positive part of
// sup_V (m - m_{a*}) near each θ. Also the pointwise log(1-λ) bound and the
// Jensen step used for mixtures under the contraction a*(θ) = λθ* + (1-λ)θ.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mest/contrast.hpp"
#include "mest/error.hpp"
#include "mest/mixing_measure.hpp"
#include "mest/models.hpp"
#include "mest/parallel.hpp"
#include "mest/quadrature.hpp"
#include "mest/rng.hpp"

namespace mest {

/// Two-sided normal quantile for a 99% interval.
inline constexpr double kZ99 = 2.576;
/// Parameters closer than this (and with equal mass) count as the same.
inline constexpr double kSameParameter = 1e-9;

struct GapEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_mc = 0;
  double ci_upper_99 = 0.0;
};

enum class AStarKind { constant, contraction, identity };

/// a*(θ) = θ* (constant), λθ* + (1-λ)θ (contraction) or θ (identity; never
/// separates and is expected to be rejected).
struct AStarSpec {
  AStarKind kind = AStarKind::contraction;
  double lambda = 0.5;
};

inline const char* to_string(AStarKind k) noexcept {
  switch (k) {
    case AStarKind::constant: return "constant";
    case AStarKind::contraction: return "contraction";
    case AStarKind::identity: return "identity";
  }
  return "unknown";
}

inline AStarKind a_star_kind_from_name(const std::string& s) {
  if (s == "constant") return AStarKind::constant;
  if (s == "contraction") return AStarKind::contraction;
  if (s == "identity") return AStarKind::identity;
  throw ArgumentError("unknown a* map: " + s);
}

inline BoxPoint apply_a_star(const AStarSpec& spec, const BoxPoint& theta,
                             const BoxPoint& theta_star) {
  switch (spec.kind) {
    case AStarKind::constant: return theta_star;
    case AStarKind::identity: return theta;
    case AStarKind::contraction: return contraction(std::span<const double>(theta), theta_star, spec.lambda);
  }
  return theta;
}

inline MixingMeasure apply_a_star(const AStarSpec& spec, const MixingMeasure& theta,
                                  const MixingMeasure& theta_star) {
  switch (spec.kind) {
    case AStarKind::constant: return theta_star;
    case AStarKind::identity: return theta;
    case AStarKind::contraction: return contraction(theta, theta_star, spec.lambda);
  }
  return theta;
}

namespace detail {

template <DensityModel Model>
bool same_parameter(const Model& model, const typename Model::parameter_type& a,
                    const typename Model::parameter_type& b) {
  if (std::abs(model.total_mass(a) - model.total_mass(b)) > kSameParameter) return false;
  return model.distance(a, b) <= kSameParameter;
}

// x ↦ m_θ(x) with the Ψ-integral and mass of θ cached.
template <DensityModel Model>
class PointContrast {
 public:
  PointContrast(const PhiContrast& contrast, const Model& model,
                typename Model::parameter_type theta, const QuadratureRule& rule)
      : contrast_(&contrast),
        model_(&model),
        theta_(std::move(theta)),
        psi_int_(psi_integral(contrast, model, theta_, rule)),
        mass_(model.total_mass(theta_)) {}

  double operator()(double x) const {
    return m_value(*contrast_, model_->density(theta_, x), psi_int_, mass_);
  }

 private:
  const PhiContrast* contrast_;
  const Model* model_;
  typename Model::parameter_type theta_;
  double psi_int_;
  double mass_;
};

// Lower empirical quantile.
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(
      std::ceil(p * static_cast<double>(values.size()))) - 1;
  const auto idx = std::min(k, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
  return values[idx];
}

}  // namespace detail

/// Monte Carlo estimate of P*(m_θ - m_{a*(θ)}) from n_mc draws of P*. The
/// Ψ-integral and mass terms of both contrasts are included. A draw where
/// m_θ = -∞ makes the mean -∞ (std_error 0); a draw where m_{a*(θ)} = -∞
/// raises VerificationError. `allow_truth` lifts the θ ≠ θ* requirement.
template <DensityModel Model>
GapEstimate estimate_gap(const PhiContrast& contrast, const Model& model,
                         const typename Model::parameter_type& theta,
                         const typename Model::parameter_type& a_star_theta,
                         const typename Model::parameter_type& theta_star, std::size_t n_mc,
                         Rng& rng, bool allow_truth = false) {
  if (n_mc < 2) throw ArgumentError("estimate_gap: n_mc must be at least 2");
  model.validate(theta);
  model.validate(a_star_theta);
  if (!allow_truth && detail::same_parameter(model, theta, theta_star)) {
    throw ArgumentError("estimate_gap: theta coincides with theta*");
  }
  const QuadratureRule rule = default_rule(model.x_domain());
  const detail::PointContrast<Model> m_theta(contrast, model, theta, rule);
  const detail::PointContrast<Model> m_astar(contrast, model, a_star_theta, rule);
  const auto xs = model.sample(theta_star, n_mc, rng);

  GapEstimate out;
  out.n_mc = n_mc;
  double mean = 0.0;
  double m2 = 0.0;
  bool diverged = false;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const double b = m_astar(xs[i]);
    if (is_sentinel(b)) {
      throw VerificationError("estimate_gap: a*(theta) has vanishing density on a draw of P*");
    }
    const double a = m_theta(xs[i]);
    if (is_sentinel(a)) {
      diverged = true;
      continue;
    }
    // Welford update.
    const double diff = a - b;
    const double delta = diff - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (diff - mean);
  }
  if (diverged) {
    out.mean = kNegInf;
    out.std_error = 0.0;
    out.ci_upper_99 = kNegInf;
    return out;
  }
  const double variance = m2 / static_cast<double>(n_mc - 1);
  out.mean = mean;
  out.std_error = std::sqrt(std::max(0.0, variance) / static_cast<double>(n_mc));
  out.ci_upper_99 = mean + kZ99 * out.std_error;
  return out;
}

/// min over the sample of m_{a*(θ)}(x) - m_θ(x) - log(1-λ) under the log
/// contrast and the contraction a*. Nonnegative up to round-off; +inf on an
/// empty sample.
inline double check_log_lower_bound(const MixtureModel& model, const MixingMeasure& theta,
                                    const MixingMeasure& theta_star, double lambda,
                                    std::span<const double> sample) {
  check_lambda(lambda);
  const PhiContrast log_contrast = PhiContrast::log();
  const QuadratureRule rule = default_rule(model.x_domain());
  const MixingMeasure contracted = contraction(theta, theta_star, lambda);
  const detail::PointContrast<MixtureModel> m_theta(log_contrast, model, theta, rule);
  const detail::PointContrast<MixtureModel> m_astar(log_contrast, model, contracted, rule);
  const double floor = std::log(1.0 - lambda);
  double worst = std::numeric_limits<double>::infinity();
  for (double x : sample) {
    const double a = m_theta(x);
    const double b = m_astar(x);
    // m_θ(x) = -∞ puts the difference at +∞.
    if (is_sentinel(a)) continue;
    worst = std::min(worst, b - a - floor);
  }
  return worst;
}

enum class JensenBranch { equal, sub_probability, full_mass };

inline const char* to_string(JensenBranch b) noexcept {
  switch (b) {
    case JensenBranch::equal: return "equal";
    case JensenBranch::sub_probability: return "sub_probability";
    case JensenBranch::full_mass: return "full_mass";
  }
  return "unknown";
}

/// Both sides of the Jensen step with Φ̃(u) = u log(λu + 1 - λ) and
/// Ψ̃(u) = uΦ̃(1/u) = log(λ/u + 1 - λ):
///   lhs = ∫ Φ̃(f*/f_θ) f_θ dQ,  rhs = Ψ̃(P_θ(𝒳)).
/// Masses are the quadrature masses of f_θ and f*, so the discrete
/// inequality holds exactly. `strict` reports the strict inequality the
/// branch needs: rhs > 0 when P_θ(𝒳) < 1, lhs > 0 when P_θ(𝒳) = 1, θ ≠ θ*.
struct JensenReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  double mass = 0.0;
  JensenBranch branch = JensenBranch::equal;
  bool strict = true;
};

inline JensenReport check_jensen_bound(const MixtureModel& model, const MixingMeasure& theta,
                                       const MixingMeasure& theta_star, double lambda,
                                       const QuadratureRule& rule) {
  check_lambda(lambda);
  if (!(theta.mass() > 0.0)) throw ArgumentError("check_jensen_bound: theta has zero mass");
  const auto nodes = rule.nodes();
  const auto q = rule.weights();
  double lhs = 0.0;
  double mass = 0.0;
  double star_mass = 0.0;
  for (std::size_t l = 0; l < nodes.size(); ++l) {
    const double ft = model.density(theta, nodes[l]);
    const double fs = model.density(theta_star, nodes[l]);
    mass += q[l] * ft;
    star_mass += q[l] * fs;
    if (fs == 0.0) continue;
    if (ft == 0.0) {
      lhs = std::numeric_limits<double>::infinity();
      continue;
    }
    // Φ̃(f*/f_θ)·f_θ = f* log(λf*/f_θ + 1 - λ).
    lhs += q[l] * fs * std::log(lambda * fs / ft + (1.0 - lambda));
  }
  JensenReport out;
  out.lhs = lhs;
  out.mass = mass;
  out.rhs = star_mass * std::log(lambda * star_mass / mass + (1.0 - lambda));
  out.slack = out.lhs - out.rhs;
  if (theta.mass() < 1.0 - kMassTolerance) {
    out.branch = JensenBranch::sub_probability;
    out.strict = out.rhs > 0.0;
  } else if (theta == theta_star) {
    out.branch = JensenBranch::equal;
    out.strict = true;
  } else {
    out.branch = JensenBranch::full_mass;
    out.strict = out.lhs > 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neighborhood nets

/// `count` points of the Euclidean ball of radius r around θ, clipped to the
/// box (clipping is a projection, so points stay in the ball). θ comes first.
/// One-dimensional boxes get an equispaced net; higher dimensions draw from
/// `rng`.
inline std::vector<BoxPoint> neighborhood_net(const ParametricFamily& model,
                                              const BoxPoint& theta, double radius,
                                              std::size_t count, Rng& rng) {
  if (count == 0) throw ArgumentError("neighborhood_net: count must be positive");
  if (!(radius >= 0.0)) throw ArgumentError("neighborhood_net: negative radius");
  const Box& box = model.box();
  auto clip = [&box](BoxPoint p) {
    for (std::size_t d = 0; d < p.size(); ++d) p[d] = std::clamp(p[d], box.lower[d], box.upper[d]);
    return p;
  };
  std::vector<BoxPoint> net{theta};
  const std::size_t rest = count - 1;
  for (std::size_t k = 0; k < rest; ++k) {
    BoxPoint p = theta;
    if (box.dim() == 1) {
      const double u = rest == 1 ? 0.0 : 2.0 * static_cast<double>(k) / static_cast<double>(rest - 1) - 1.0;
      p[0] += radius * u;
    } else {
      double norm = 0.0;
      std::vector<double> dir(box.dim());
      for (double& v : dir) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(box.dim()));
      for (std::size_t d = 0; d < dir.size(); ++d) p[d] += r * dir[d] / norm;
    }
    net.push_back(clip(std::move(p)));
  }
  return net;
}

/// `count` measures within W₁ distance r of θ (on normalized measures), θ
/// first: rigid shifts of the whole measure, shifts of single atoms, and
/// transfers of mass between atoms. Atoms are clipped to 𝒵, which only
/// shortens the moves.
inline std::vector<MixingMeasure> neighborhood_net(const MixtureModel& model,
                                                   const MixingMeasure& theta, double radius,
                                                   std::size_t count) {
  if (count == 0) throw ArgumentError("neighborhood_net: count must be positive");
  if (!(radius >= 0.0)) throw ArgumentError("neighborhood_net: negative radius");
  const Interval zd = model.z_domain();
  const double mass = theta.mass();
  const auto z = theta.atoms();
  const auto w = theta.weights();
  auto build = [&](const std::vector<std::pair<double, double>>& pairs) {
    std::vector<std::pair<double, double>> clipped;
    clipped.reserve(pairs.size());
    for (const auto& [a, b] : pairs) clipped.emplace_back(zd.clamp(a), b);
    return MixingMeasure::from_pairs(std::move(clipped));
  };
  auto shifted = [&](double delta, std::size_t only) {
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t j = 0; j < z.size(); ++j) {
      pairs.emplace_back(only == z.size() || only == j ? z[j] + delta : z[j], w[j]);
    }
    return build(pairs);
  };

  std::vector<MixingMeasure> net{theta};
  auto push = [&](MixingMeasure m) {
    if (net.size() < count) net.push_back(std::move(m));
  };
  constexpr int kLevels = 8;
  for (int k = 1; k <= kLevels; ++k) {
    const double delta = radius * k / kLevels;
    push(shifted(delta, z.size()));
    push(shifted(-delta, z.size()));
  }
  for (std::size_t j = 0; j < z.size(); ++j) {
    // Moving atom j by r costs w_j·r/mass ≤ r.
    push(shifted(radius, j));
    push(shifted(-radius, j));
  }
  for (std::size_t j = 0; j < z.size(); ++j) {
    for (std::size_t k = 0; k < z.size(); ++k) {
      if (j == k) continue;
      const double moved = std::min(w[j], radius * mass / std::abs(z[k] - z[j]));
      std::vector<std::pair<double, double>> pairs;
      for (std::size_t i = 0; i < z.size(); ++i) {
        double wi = w[i];
        if (i == j) wi -= moved;
        if (i == k) wi += moved;
        pairs.emplace_back(z[i], std::max(0.0, wi));
      }
      push(build(pairs));
    }
  }
  // Fill with rigid shifts at fractions of r from a low-discrepancy sequence.
  for (std::size_t k = 1; net.size() < count; ++k) {
    const double u = std::fmod(static_cast<double>(k) * 0.6180339887498949, 1.0);
    push(shifted((k % 2 == 0 ? 1.0 : -1.0) * radius * u, z.size()));
  }
  return net;
}

// ---------------------------------------------------------------------------
// Grid audit

struct A2Options {
  double radius = 0.1;
  std::size_t net_size = 32;
  std::size_t n_mc = 100'000;
  /// Ceiling on the 0.999-quantile / mean ratio of the neighborhood sup.
  double tail_ceiling = 50.0;
  std::size_t threads = 1;
};

template <class Parameter>
struct A2Record {
  Parameter theta{};
  Parameter a_star{};
  GapEstimate gap;
  bool negative = false;
  /// Monte Carlo mean and 0.999 quantile of (sup over the net of m - m_{a*})⁺.
  double sup_mean = 0.0;
  double sup_q999 = 0.0;
  double tail_ratio = 0.0;
  bool finite = false;
  bool integrable = false;
  bool pass = false;
};

template <class Parameter>
struct A2Report {
  AStarSpec a_star;
  A2Options options;
  std::vector<A2Record<Parameter>> records;
  bool pass = false;
};

namespace detail {

inline std::vector<BoxPoint> audit_net(const ParametricFamily& model, const BoxPoint& theta,
                                       double radius, std::size_t count, Rng& rng) {
  return neighborhood_net(model, theta, radius, count, rng);
}

inline std::vector<MixingMeasure> audit_net(const MixtureModel& model, const MixingMeasure& theta,
                                            double radius, std::size_t count, Rng&) {
  return neighborhood_net(model, theta, radius, count);
}

}  // namespace detail

/// For each grid θ: (i) gap negativity, ci_upper_99 < 0; (ii) integrability
/// proxy on the neighborhood sup, finite mean and tail ratio at most the
/// ceiling. Grid points run in parallel, each on a stream derived from one
/// draw of `rng` and its index, so results do not depend on the thread count.
template <DensityModel Model>
A2Report<typename Model::parameter_type> check_A2_over_grid(
    const PhiContrast& contrast, const Model& model,
    const typename Model::parameter_type& theta_star, const AStarSpec& a_star,
    std::span<const typename Model::parameter_type> theta_grid, const A2Options& opts,
    Rng& rng) {
  using P = typename Model::parameter_type;
  if (theta_grid.empty()) throw ArgumentError("check_A2_over_grid: empty theta grid");
  if (opts.n_mc < 2) throw ArgumentError("check_A2_over_grid: n_mc must be at least 2");
  if (a_star.kind == AStarKind::contraction) check_lambda(a_star.lambda);
  for (const auto& t : theta_grid) {
    model.validate(t);
    if (model.distance(t, theta_star) <= opts.radius &&
        std::abs(model.total_mass(t) - model.total_mass(theta_star)) <= kSameParameter) {
      throw ArgumentError("check_A2_over_grid: grid point within the radius of theta*");
    }
  }
  const std::uint64_t base = rng.next_u64();
  const QuadratureRule rule = default_rule(model.x_domain());

  A2Report<P> report;
  report.a_star = a_star;
  report.options = opts;
  report.records.resize(theta_grid.size());
  parallel_for(theta_grid.size(), opts.threads, [&](std::size_t g) {
    Rng local(derive_seed(base, {g}));
    A2Record<P>& rec = report.records[g];
    rec.theta = theta_grid[g];
    rec.a_star = apply_a_star(a_star, rec.theta, theta_star);
    // The identity map is allowed through so that its zero gap is recorded.
    rec.gap = estimate_gap(contrast, model, rec.theta, rec.a_star, theta_star, opts.n_mc, local,
                           false);
    rec.negative = rec.gap.ci_upper_99 < 0.0;

    const auto net = detail::audit_net(model, rec.theta, opts.radius, opts.net_size, local);
    std::vector<detail::PointContrast<Model>> m_net;
    std::vector<detail::PointContrast<Model>> m_net_star;
    m_net.reserve(net.size());
    m_net_star.reserve(net.size());
    for (const auto& p : net) {
      m_net.emplace_back(contrast, model, p, rule);
      m_net_star.emplace_back(contrast, model, apply_a_star(a_star, p, theta_star), rule);
    }
    const auto xs = model.sample(theta_star, opts.n_mc, local);
    std::vector<double> sup(xs.size());
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double best = 0.0;
      for (std::size_t k = 0; k < net.size(); ++k) {
        const double a = m_net[k](xs[i]);
        if (is_sentinel(a)) continue;
        const double b = m_net_star[k](xs[i]);
        const double diff = is_sentinel(b) ? std::numeric_limits<double>::infinity() : a - b;
        best = std::max(best, diff);
      }
      sup[i] = best;
      total += best;
    }
    rec.sup_mean = total / static_cast<double>(xs.size());
    rec.finite = std::isfinite(rec.sup_mean);
    rec.sup_q999 = detail::quantile(sup, 0.999);
    rec.tail_ratio = rec.sup_mean > 0.0 ? rec.sup_q999 / rec.sup_mean : 0.0;
    rec.integrable = rec.finite && rec.tail_ratio <= opts.tail_ceiling;
    rec.pass = rec.negative && rec.integrable;
  });
  report.pass = std::all_of(report.records.begin(), report.records.end(),
                            [](const A2Record<P>& r) { return r.pass; });
  return report;
}

}  // namespace mest
