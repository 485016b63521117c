#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mest/error.hpp"

namespace mest {

inline constexpr double kMassTolerance = 1e-12;
inline constexpr double kAtomMergeDistance = 1e-9;

/// Finitely supported sub-probability measure on a compact latent interval.
/// Atoms strictly increasing, weights nonnegative, total mass ≤ 1.
class MixingMeasure {
 public:
  MixingMeasure() = default;

  MixingMeasure(std::vector<double> atoms, std::vector<double> weights)
      : atoms_(std::move(atoms)), weights_(std::move(weights)) {
    if (atoms_.size() != weights_.size()) {
      throw ArgumentError("MixingMeasure: atoms and weights differ in length");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      if (!std::isfinite(atoms_[j])) throw ArgumentError("MixingMeasure: non-finite atom");
      if (j > 0 && !(atoms_[j] > atoms_[j - 1])) {
        throw ArgumentError("MixingMeasure: atoms must be strictly increasing");
      }
      if (!(weights_[j] >= 0.0) || !std::isfinite(weights_[j])) {
        throw ArgumentError("MixingMeasure: weights must be finite and nonnegative");
      }
      total += weights_[j];
    }
    if (total > 1.0 + kMassTolerance) {
      throw ArgumentError("MixingMeasure: total mass exceeds 1");
    }
  }

  static MixingMeasure dirac(double z, double weight = 1.0) {
    return MixingMeasure({z}, {weight});
  }

  static MixingMeasure null() { return MixingMeasure(); }

  /// Builds a measure from unsorted (atom, weight) pairs, merging atoms closer
  /// than kAtomMergeDistance.
  static MixingMeasure from_pairs(std::vector<std::pair<double, double>> pairs) {
    std::sort(pairs.begin(), pairs.end());
    std::vector<double> atoms;
    std::vector<double> weights;
    for (const auto& [z, w] : pairs) {
      if (!atoms.empty() && z - atoms.back() < kAtomMergeDistance) {
        weights.back() += w;
      } else {
        atoms.push_back(z);
        weights.push_back(w);
      }
    }
    return MixingMeasure(std::move(atoms), std::move(weights));
  }

  std::span<const double> atoms() const noexcept { return atoms_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::size_t size() const noexcept { return atoms_.size(); }

  double mass() const noexcept {
    return std::accumulate(weights_.begin(), weights_.end(), 0.0);
  }
  bool is_probability() const noexcept {
    return std::abs(mass() - 1.0) <= kMassTolerance;
  }
  bool is_null() const noexcept { return mass() == 0.0; }

  /// α·θ for α in [0, 1/mass].
  MixingMeasure scaled(double alpha) const {
    std::vector<double> w(weights_);
    for (double& v : w) v *= alpha;
    return MixingMeasure(atoms_, std::move(w));
  }

  /// θ / mass(θ).
  MixingMeasure normalized() const {
    const double m = mass();
    if (!(m > 0.0)) throw ArgumentError("MixingMeasure: cannot normalize the null measure");
    std::vector<double> w(weights_);
    for (double& v : w) v /= m;
    return MixingMeasure(atoms_, std::move(w));
  }

  /// Same measure without zero-weight atoms.
  MixingMeasure pruned(double threshold = 0.0) const {
    std::vector<double> a;
    std::vector<double> w;
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      if (weights_[j] > threshold) {
        a.push_back(atoms_[j]);
        w.push_back(weights_[j]);
      }
    }
    return MixingMeasure(std::move(a), std::move(w));
  }

  friend bool operator==(const MixingMeasure&, const MixingMeasure&) = default;

 private:
  std::vector<double> atoms_;
  std::vector<double> weights_;
};

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw ArgumentError("contraction: lambda must lie in (0, 1)");
  }
}

/// a*(θ) = λθ* + (1-λ)θ on mixing measures; supports are merged and atoms
/// closer than kAtomMergeDistance are identified. Each weight is formed as
/// w* + (1-λ)(w - w*), so a*(θ*) reproduces θ* bit for bit.
inline MixingMeasure contraction(const MixingMeasure& theta,
                                 const MixingMeasure& theta_star, double lambda) {
  check_lambda(lambda);
  const auto za = theta_star.atoms();
  const auto wa = theta_star.weights();
  const auto zb = theta.atoms();
  const auto wb = theta.weights();
  std::vector<double> atoms;
  std::vector<double> weights;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < za.size() || j < zb.size()) {
    double z;
    double ws = 0.0;
    double wt = 0.0;
    if (j >= zb.size() || (i < za.size() && za[i] < zb[j] - kAtomMergeDistance)) {
      z = za[i];
      ws = wa[i++];
    } else if (i >= za.size() || zb[j] < za[i] - kAtomMergeDistance) {
      z = zb[j];
      wt = wb[j++];
    } else {
      z = za[i];
      ws = wa[i++];
      wt = wb[j++];
    }
    atoms.push_back(z);
    weights.push_back(ws + (1.0 - lambda) * (wt - ws));
  }
  return MixingMeasure(std::move(atoms), std::move(weights));
}

/// a*(θ) = λθ* + (1-λ)θ on points of a box, formed as θ* + (1-λ)(θ - θ*).
inline std::vector<double> contraction(std::span<const double> theta,
                                       std::span<const double> theta_star,
                                       double lambda) {
  check_lambda(lambda);
  if (theta.size() != theta_star.size()) {
    throw ArgumentError("contraction: dimension mismatch");
  }
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out[i] = theta_star[i] + (1.0 - lambda) * (theta[i] - theta_star[i]);
  }
  return out;
}

/// W₁ between probability measures on the line: ∫|F_μ - F_ν| dt over the
/// merged breakpoints.
inline double wasserstein1(const MixingMeasure& mu, const MixingMeasure& nu) {
  if (!mu.is_probability() || !nu.is_probability()) {
    throw ArgumentError("wasserstein1: both measures must be probabilities");
  }
  const auto a = mu.atoms();
  const auto b = nu.atoms();
  const auto wa = mu.weights();
  const auto wb = nu.weights();
  std::size_t i = 0;
  std::size_t j = 0;
  double fa = 0.0;
  double fb = 0.0;
  double total = 0.0;
  double prev = 0.0;
  bool started = false;
  while (i < a.size() || j < b.size()) {
    const double t = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    if (started) total += std::abs(fa - fb) * (t - prev);
    while (i < a.size() && a[i] == t) fa += wa[i++];
    while (j < b.size() && b[j] == t) fb += wb[j++];
    prev = t;
    started = true;
  }
  return total;
}

}  // namespace mest
