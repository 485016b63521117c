#pragma once

// Model families: parametric densities on a compact box and kernel mixtures
// over a compact latent interval, with samplers and the population contrast.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mest/contrast.hpp"
#include "mest/error.hpp"
#include "mest/mixing_measure.hpp"
#include "mest/quadrature.hpp"
#include "mest/rng.hpp"

namespace mest {

/// Point of a parameter box.
using BoxPoint = std::vector<double>;

struct Box {
  BoxPoint lower;
  BoxPoint upper;

  std::size_t dim() const noexcept { return lower.size(); }

  bool contains(std::span<const double> p) const noexcept {
    if (p.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(p[i] >= lower[i] && p[i] <= upper[i])) return false;
    }
    return true;
  }

  bool strictly_contains(std::span<const double> p) const noexcept {
    if (p.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(p[i] > lower[i] && p[i] < upper[i])) return false;
    }
    return true;
  }
};

/// Anything the estimation and separation code can drive: a family of
/// densities f_θ w.r.t. Lebesgue measure on a compact x-domain.
template <class M>
concept DensityModel = requires(const M& m, const typename M::parameter_type& p,
                                double x, std::size_t n, Rng& rng) {
  { m.density(p, x) } -> std::convertible_to<double>;
  { m.total_mass(p) } -> std::convertible_to<double>;
  { m.x_domain() } -> std::convertible_to<Interval>;
  { m.sample(p, n, rng) } -> std::convertible_to<std::vector<double>>;
  { m.distance(p, p) } -> std::convertible_to<double>;
  { m.truth() } -> std::convertible_to<typename M::parameter_type>;
  m.validate(p);
};

// ---------------------------------------------------------------------------
// Parametric families

class ParametricFamily {
 public:
  using parameter_type = BoxPoint;
  using DensityFn = std::function<double(std::span<const double>, double)>;
  using DrawFn = std::function<double(std::span<const double>, Rng&)>;

  ParametricFamily(std::string id, Box box, DensityFn density, DrawFn draw,
                   Interval x_domain, BoxPoint true_theta)
      : id_(std::move(id)),
        box_(std::move(box)),
        density_(std::move(density)),
        draw_(std::move(draw)),
        x_domain_(x_domain),
        truth_(std::move(true_theta)) {
    if (box_.lower.size() != box_.upper.size() || box_.dim() == 0) {
      throw ArgumentError("ParametricFamily: malformed box");
    }
    for (std::size_t i = 0; i < box_.dim(); ++i) {
      if (!(box_.lower[i] < box_.upper[i])) {
        throw ArgumentError("ParametricFamily: empty box side");
      }
    }
    if (!box_.strictly_contains(truth_)) {
      throw ArgumentError("ParametricFamily: true parameter must lie inside the box");
    }
  }

  const std::string& id() const noexcept { return id_; }
  const Box& box() const noexcept { return box_; }
  Interval x_domain() const noexcept { return x_domain_; }
  const BoxPoint& truth() const noexcept { return truth_; }

  ParametricFamily with_truth(BoxPoint t) const {
    return ParametricFamily(id_, box_, density_, draw_, x_domain_, std::move(t));
  }

  void validate(const BoxPoint& p) const {
    if (!box_.contains(p)) throw ArgumentError("parameter outside the model box");
  }

  double density(const BoxPoint& p, double x) const { return density_(p, x); }
  double total_mass(const BoxPoint&) const noexcept { return 1.0; }

  std::vector<double> sample(const BoxPoint& p, std::size_t n, Rng& rng) const {
    std::vector<double> xs(n);
    for (auto& x : xs) x = draw_(p, rng);
    return xs;
  }

  double distance(const BoxPoint& a, const BoxPoint& b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }

 private:
  std::string id_;
  Box box_;
  DensityFn density_;
  DrawFn draw_;
  Interval x_domain_;
  BoxPoint truth_;
};

// ---------------------------------------------------------------------------
// Mixture kernels

namespace detail {

inline double std_normal_pdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

inline double std_normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

// N(mean, 1) restricted to [lo, hi], by rejection.
inline double truncated_normal(double mean, Interval dom, Rng& rng) {
  for (;;) {
    const double x = mean + rng.normal();
    if (dom.contains(x)) return x;
  }
}

// N(mean, 1) density renormalized on [lo, hi].
inline double truncated_normal_pdf(double x, double mean, Interval dom) {
  if (!dom.contains(x)) return 0.0;
  const double norm = std_normal_cdf(dom.hi - mean) - std_normal_cdf(dom.lo - mean);
  return std_normal_pdf(x - mean) / norm;
}

}  // namespace detail

/// Conditional density k(x, z) > 0 of X given Z = z, w.r.t. Lebesgue measure
/// on x_domain.
struct MixtureKernel {
  std::string id;
  std::function<double(double, double)> evaluate;
  std::function<double(double, Rng&)> sample_given_z;
  Interval x_domain;
};

/// Unit-variance Gaussian kernel on x ∈ [z_lo - pad, z_hi + pad], renormalized
/// so that ∫k(x, z)dx = 1 exactly.
inline MixtureKernel gaussian_kernel(Interval z_domain, double pad = 8.0) {
  const Interval xd{z_domain.lo - pad, z_domain.hi + pad};
  return MixtureKernel{
      "gaussian",
      [xd](double x, double z) { return detail::truncated_normal_pdf(x, z, xd); },
      [xd](double z, Rng& rng) { return detail::truncated_normal(z, xd, rng); },
      xd};
}

/// Exponential kernel k(x, z) = z e^{-zx} truncated to (0, x_max] and
/// renormalized.
inline MixtureKernel exponential_kernel(double x_max) {
  const Interval xd{0.0, x_max};
  return MixtureKernel{
      "exponential",
      [x_max](double x, double z) {
        if (x < 0.0 || x > x_max) return 0.0;
        return z * std::exp(-z * x) / (-std::expm1(-z * x_max));
      },
      [x_max](double z, Rng& rng) {
        const double u = rng.uniform();
        // Inverse CDF of the truncated law.
        return -std::log1p(u * std::expm1(-z * x_max)) / z;
      },
      xd};
}

/// f_θ(x) = Σ_j w_j k(x, z_j).
inline double mixture_density(const MixtureKernel& kernel, const MixingMeasure& theta,
                              double x) {
  double f = 0.0;
  const auto a = theta.atoms();
  const auto w = theta.weights();
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (w[j] != 0.0) f += w[j] * kernel.evaluate(x, a[j]);
  }
  return f;
}

/// n draws from f_{θ*}: atom j with probability w_j, then x ~ k(·, z_j).
inline std::vector<double> sample_mixture(const MixtureKernel& kernel,
                                          const MixingMeasure& theta_star,
                                          std::size_t n, Rng& rng) {
  if (!theta_star.is_probability()) {
    throw ArgumentError("sample_mixture: mixing measure must have mass 1");
  }
  if (n == 0) throw ArgumentError("sample_mixture: n must be positive");
  const auto a = theta_star.atoms();
  const auto w = theta_star.weights();
  std::vector<double> cumulative(w.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) cumulative[j] = (acc += w[j]);
  std::vector<double> xs(n);
  for (auto& x : xs) {
    const double u = rng.uniform() * acc;
    std::size_t j = 0;
    while (j + 1 < cumulative.size() && u >= cumulative[j]) ++j;
    x = kernel.sample_given_z(a[j], rng);
  }
  return xs;
}

class MixtureModel {
 public:
  using parameter_type = MixingMeasure;

  MixtureModel(std::string id, MixtureKernel kernel, Interval z_domain,
               MixingMeasure truth)
      : id_(std::move(id)),
        kernel_(std::move(kernel)),
        z_domain_(z_domain),
        truth_(std::move(truth)) {
    validate(truth_);
    if (!truth_.is_probability()) {
      throw ArgumentError("MixtureModel: true mixing measure must have mass 1");
    }
  }

  const std::string& id() const noexcept { return id_; }
  const MixtureKernel& kernel() const noexcept { return kernel_; }
  Interval z_domain() const noexcept { return z_domain_; }
  Interval x_domain() const noexcept { return kernel_.x_domain; }
  const MixingMeasure& truth() const noexcept { return truth_; }

  MixtureModel with_truth(MixingMeasure t) const {
    return MixtureModel(id_, kernel_, z_domain_, std::move(t));
  }

  void validate(const MixingMeasure& p) const {
    for (double z : p.atoms()) {
      if (!z_domain_.contains(z)) throw ArgumentError("mixing atom outside the latent domain");
    }
  }

  double density(const MixingMeasure& p, double x) const {
    return mixture_density(kernel_, p, x);
  }
  double total_mass(const MixingMeasure& p) const noexcept { return p.mass(); }

  std::vector<double> sample(const MixingMeasure& p, std::size_t n, Rng& rng) const {
    return sample_mixture(kernel_, p, n, rng);
  }

  /// W₁ between the normalized measures; mass deficits are reported apart.
  double distance(const MixingMeasure& a, const MixingMeasure& b) const {
    return wasserstein1(a.normalized(), b.normalized());
  }

  /// Equispaced support grid of G atoms on the latent domain.
  std::vector<double> support_grid(std::size_t count) const {
    if (count == 0) throw ArgumentError("support_grid: count must be positive");
    if (count == 1) return {0.5 * (z_domain_.lo + z_domain_.hi)};
    std::vector<double> g(count);
    for (std::size_t j = 0; j < count; ++j) {
      g[j] = z_domain_.lo + z_domain_.length() * static_cast<double>(j) / (count - 1);
    }
    g.back() = z_domain_.hi;
    return g;
  }

 private:
  std::string id_;
  MixtureKernel kernel_;
  Interval z_domain_;
  MixingMeasure truth_;
};

// ---------------------------------------------------------------------------
// Registry

/// N(θ, 1) with θ ∈ [-3, 3], x truncated to [-11, 11].
inline ParametricFamily gaussian_location(double true_theta = 0.0) {
  const Interval xd{-11.0, 11.0};
  return ParametricFamily(
      "gaussian_location", Box{{-3.0}, {3.0}},
      [xd](std::span<const double> p, double x) {
        return detail::truncated_normal_pdf(x, p[0], xd);
      },
      [xd](std::span<const double> p, Rng& rng) {
        return detail::truncated_normal(p[0], xd, rng);
      },
      xd, BoxPoint{true_theta});
}

/// Gaussian-kernel mixture on 𝒵 = [-3, 3]; default θ* = 0.3δ₋₁ + 0.7δ₁.
inline MixtureModel gaussian_mixture(
    MixingMeasure truth = MixingMeasure({-1.0, 1.0}, {0.3, 0.7})) {
  const Interval zd{-3.0, 3.0};
  return MixtureModel("gaussian_mixture", gaussian_kernel(zd), zd, std::move(truth));
}

/// Exponential-kernel mixture k(x, z) = z e^{-zx} on (0, 50], 𝒵 = [0.2, 5];
/// default θ* = 0.4δ_{0.5} + 0.6δ_{2.5}.
inline MixtureModel exponential_mixture(
    MixingMeasure truth = MixingMeasure({0.5, 2.5}, {0.4, 0.6})) {
  return MixtureModel("exponential_mixture", exponential_kernel(50.0),
                      Interval{0.2, 5.0}, std::move(truth));
}

using AnyModel = std::variant<ParametricFamily, MixtureModel>;

inline AnyModel model_by_id(const std::string& id) {
  if (id == "gaussian_location") return gaussian_location();
  if (id == "gaussian_mixture") return gaussian_mixture();
  if (id == "exponential_mixture") return exponential_mixture();
  throw ArgumentError("unknown model id: " + id);
}

/// Max deviation of ∫k(x, z)dQ(x) from 1 over `count` equispaced latent
/// points.
inline double kernel_normalization_error(const MixtureModel& model,
                                         const QuadratureRule& rule,
                                         std::size_t count = 32) {
  double worst = 0.0;
  for (double z : model.support_grid(count)) {
    const double integral =
        rule.integrate([&](double x) { return model.kernel().evaluate(x, z); });
    worst = std::max(worst, std::abs(integral - 1.0));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Contrast integrals

/// Σ_i q_i Ψ(f_θ(x_i)) over the reference rule.
template <DensityModel Model>
double psi_integral(const PhiContrast& contrast, const Model& model,
                    const typename Model::parameter_type& theta,
                    const QuadratureRule& rule) {
  return rule.integrate(
      [&](double x) { return psi_extended(contrast, model.density(theta, x)); });
}

/// M*(θ) = ∫ m_θ f_{θ*} dQ by quadrature. kNegInf when m_θ = -∞ on a node
/// carrying P* mass.
template <DensityModel Model>
double population_contrast(const PhiContrast& contrast, const Model& model,
                           const typename Model::parameter_type& theta,
                           const typename Model::parameter_type& theta_star,
                           const QuadratureRule& rule) {
  const double psi_int = psi_integral(contrast, model, theta, rule);
  const double mass = model.total_mass(theta);
  const auto nodes = rule.nodes();
  const auto weights = rule.weights();
  double total = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double fs = model.density(theta_star, nodes[i]);
    if (fs == 0.0) continue;
    const double m = m_value(contrast, model.density(theta, nodes[i]), psi_int, mass);
    if (is_sentinel(m)) return kNegInf;
    total += weights[i] * fs * m;
  }
  return total;
}

}  // namespace mest
