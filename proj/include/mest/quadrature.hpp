#pragma once

// Fixed and adaptive quadrature on compact intervals.
//
// QuadratureRule realizes the reference measure Q on a truncated sample space:
// composite Gauss-Legendre panels, weights summing to the interval length.
// adaptive_integrate is a globally adaptive Gauss-Kronrod (7/15) integrator
// used wherever a Φ family has no closed-form Ψ.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <queue>
#include <span>
#include <vector>

#include "mest/error.hpp"

namespace mest {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double length() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
  double clamp(double x) const noexcept { return std::clamp(x, lo, hi); }
};

class QuadratureRule {
 public:
  QuadratureRule() = default;

  QuadratureRule(std::vector<double> nodes, std::vector<double> weights,
                 Interval domain, int degree)
      : nodes_(std::move(nodes)),
        weights_(std::move(weights)),
        domain_(domain),
        degree_(degree) {
    if (!(domain_.lo < domain_.hi)) {
      throw ArgumentError("QuadratureRule: empty domain");
    }
    if (nodes_.size() != weights_.size() || nodes_.empty()) {
      throw ArgumentError("QuadratureRule: nodes and weights must align");
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!(weights_[i] > 0.0)) {
        throw ArgumentError("QuadratureRule: weights must be positive");
      }
      if (i > 0 && !(nodes_[i] > nodes_[i - 1])) {
        throw ArgumentError("QuadratureRule: nodes must be increasing");
      }
    }
  }

  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> weights() const noexcept { return weights_; }
  Interval domain() const noexcept { return domain_; }
  /// Highest polynomial degree integrated exactly.
  int degree() const noexcept { return degree_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  template <class F>
  double integrate(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      sum += weights_[i] * f(nodes_[i]);
    }
    return sum;
  }

  /// Σ w_i v_i for values already tabulated at the nodes.
  double integrate_values(std::span<const double> values) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) sum += weights_[i] * values[i];
    return sum;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
  Interval domain_;
  int degree_ = 0;
};

namespace detail {

// Nodes and weights of the order-point Gauss-Legendre rule on [-1, 1], found by
// Newton iteration on P_order from Chebyshev initial guesses.
inline void legendre_reference(int order, std::vector<double>& x,
                               std::vector<double>& w) {
  x.assign(order, 0.0);
  w.assign(order, 0.0);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int k = 1; k <= order; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = order * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // Recompute the derivative at the converged root.
    double p0 = 1.0;
    double p1 = 0.0;
    for (int k = 1; k <= order; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
    }
    dp = order * (z * p0 - p1) / (z * z - 1.0);
    const double weight = 2.0 / ((1.0 - z * z) * dp * dp);
    x[i] = -z;
    x[order - 1 - i] = z;
    w[i] = weight;
    w[order - 1 - i] = weight;
  }
  if (order % 2 == 1) x[order / 2] = 0.0;
}

}  // namespace detail

inline QuadratureRule gauss_legendre(int order, Interval domain) {
  if (order < 1) throw ArgumentError("gauss_legendre: order must be >= 1");
  std::vector<double> x;
  std::vector<double> w;
  detail::legendre_reference(order, x, w);
  const double half = 0.5 * domain.length();
  const double mid = 0.5 * (domain.lo + domain.hi);
  for (int i = 0; i < order; ++i) {
    x[i] = mid + half * x[i];
    w[i] *= half;
  }
  return QuadratureRule(std::move(x), std::move(w), domain, 2 * order - 1);
}

inline QuadratureRule composite_gauss_legendre(Interval domain, int panels,
                                               int order) {
  if (panels < 1) throw ArgumentError("composite_gauss_legendre: panels >= 1");
  if (order < 1) throw ArgumentError("composite_gauss_legendre: order >= 1");
  std::vector<double> rx;
  std::vector<double> rw;
  detail::legendre_reference(order, rx, rw);
  std::vector<double> x;
  std::vector<double> w;
  x.reserve(static_cast<std::size_t>(panels) * order);
  w.reserve(x.capacity());
  const double width = domain.length() / panels;
  for (int p = 0; p < panels; ++p) {
    const double a = domain.lo + p * width;
    const double mid = a + 0.5 * width;
    for (int i = 0; i < order; ++i) {
      x.push_back(mid + 0.5 * width * rx[i]);
      w.push_back(0.5 * width * rw[i]);
    }
  }
  return QuadratureRule(std::move(x), std::move(w), domain, 2 * order - 1);
}

/// Default reference rule: 16-point Gauss-Legendre panels of width at most
/// 1/4, i.e. 64 nodes per unit length.
inline QuadratureRule default_rule(Interval domain) {
  const int panels =
      std::max(1, static_cast<int>(std::ceil(4.0 * domain.length() - 1e-9)));
  return composite_gauss_legendre(domain, panels, 16);
}

struct AdaptiveOptions {
  double abs_tol = 1e-10;
  std::size_t max_subdivisions = std::size_t{1} << 15;
};

struct IntegrationResult {
  double value = 0.0;
  double error = 0.0;
  std::size_t subdivisions = 0;
};

namespace detail {

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a;
  double b;
  double value;
  double error;
  bool operator<(const Segment& other) const { return error < other.error; }
};

template <class F>
Segment gk15(F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kXgk[j];
    const double f1 = f(center - dx);
    const double f2 = f(center + dx);
    kronrod += kWgk[j] * (f1 + f2);
    if (j % 2 == 1) gauss += kWg[j / 2] * (f1 + f2);
  }
  return {a, b, kronrod * half, std::abs((kronrod - gauss) * half)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod integration of f over [a, b]. The integrand
/// is only sampled at interior points, so integrable endpoint singularities
/// with a continuous extension are fine. Throws NumericError carrying the
/// achieved error estimate when the subdivision cap is reached.
template <class F>
IntegrationResult adaptive_integrate(F&& f, double a, double b,
                                     const AdaptiveOptions& opts = {}) {
  if (a == b) return {};
  std::priority_queue<detail::Segment> heap;
  heap.push(detail::gk15(f, a, b));
  double value = heap.top().value;
  double error = heap.top().error;
  std::size_t subdivisions = 1;
  // Roundoff floor: the estimate |K15 - G7| cannot drop below a few ulps of
  // the integral itself.
  auto target = [&] {
    return std::max(opts.abs_tol,
                    50.0 * std::numeric_limits<double>::epsilon() * std::abs(value));
  };
  while (error > target()) {
    if (subdivisions >= opts.max_subdivisions) {
      throw NumericError("adaptive_integrate: subdivision cap reached", error);
    }
    const detail::Segment worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    const detail::Segment left = detail::gk15(f, worst.a, mid);
    const detail::Segment right = detail::gk15(f, mid, worst.b);
    value += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++subdivisions;
    if (!std::isfinite(value)) {
      throw NumericError("adaptive_integrate: non-finite integral", error);
    }
  }
  // Re-sum to shed the drift of the incremental updates.
  double total = 0.0;
  double total_err = 0.0;
  while (!heap.empty()) {
    total += heap.top().value;
    total_err += heap.top().error;
    heap.pop();
  }
  return {total, total_err, subdivisions};
}

}  // namespace mest
