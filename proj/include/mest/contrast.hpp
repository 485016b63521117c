#pragma once

// Φ-transform contrasts.
//
// A contrast family is generated by a scalar Φ on (0, ∞):
//
//   Ψ(u)   = ∫_0^u v Φ'(v) dv
//   Θ(u,v) = u Φ(v) - Ψ(v)
//   m_θ(x) = Φ(f_θ(x)) - ∫ Ψ(f_θ) dQ + P_θ(X)
//
// Φ = log gives the log-likelihood, Φ = identity the quadratic contrast, and
// the two bounded families -(1+u)^-2 and -(1+u^2)^-1 give bounded contrasts.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mest/error.hpp"
#include "mest/quadrature.hpp"

namespace mest {

/// Value of a contrast at a parameter whose density vanishes under an
/// unbounded Φ. IEEE -inf: any sum containing it is -inf and compares below
/// every finite value, which is the ordering argmax code relies on.
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline bool is_sentinel(double v) noexcept { return v == kNegInf; }

/// Tolerances of the contrast machinery. Module-level defaults.
struct ContrastTolerances {
  double psi_abs_tol = 1e-10;
  std::size_t psi_max_subdivisions = std::size_t{1} << 15;
  double first_diff_step = 1e-6;   // h = step * max(|v|, 1)
  double second_diff_step = 1e-5;  // h = step * max(|v|, 1)
  double concavity_tol = 1e-7;
};

inline constexpr ContrastTolerances kContrastTolerances{};

using ScalarFn = std::function<double(double)>;

class PhiContrast {
 public:
  PhiContrast(std::string name, ScalarFn phi, ScalarFn phi_prime,
              std::optional<ScalarFn> psi_closed_form, bool bounded,
              std::optional<ScalarFn> phi_second = std::nullopt)
      : name_(std::move(name)),
        phi_(std::move(phi)),
        phi_prime_(std::move(phi_prime)),
        psi_closed_(std::move(psi_closed_form)),
        phi_second_(std::move(phi_second)),
        bounded_(bounded) {}

  /// Φ = log; Ψ(u) = u.
  static PhiContrast log() {
    return PhiContrast(
        "log", [](double u) { return std::log(u); },
        [](double u) { return 1.0 / u; }, ScalarFn([](double u) { return u; }),
        false, ScalarFn([](double u) { return -1.0 / (u * u); }));
  }

  /// Φ = identity; Ψ(u) = u²/2.
  static PhiContrast identity() {
    return PhiContrast(
        "identity", [](double u) { return u; }, [](double) { return 1.0; },
        ScalarFn([](double u) { return 0.5 * u * u; }), false,
        ScalarFn([](double) { return 0.0; }));
  }

  /// Φ(u) = -(1+u)^-2; Ψ(u) = u²/(1+u)².
  static PhiContrast inv_sq_1p() {
    return PhiContrast(
        "inv_sq_1p",
        [](double u) {
          const double s = 1.0 + u;
          return -1.0 / (s * s);
        },
        [](double u) {
          const double s = 1.0 + u;
          return 2.0 / (s * s * s);
        },
        ScalarFn([](double u) {
          const double r = u / (1.0 + u);
          return r * r;
        }),
        true, ScalarFn([](double u) {
          const double s = (1.0 + u) * (1.0 + u);
          return -6.0 / (s * s);
        }));
  }

  /// Φ(u) = -(1+u²)^-1. Ψ by quadrature.
  static PhiContrast inv_1p_sq() {
    return PhiContrast(
        "inv_1p_sq", [](double u) { return -1.0 / (1.0 + u * u); },
        [](double u) {
          const double s = 1.0 + u * u;
          return 2.0 * u / (s * s);
        },
        std::nullopt, true, ScalarFn([](double u) {
          const double s = 1.0 + u * u;
          return (2.0 - 6.0 * u * u) / (s * s * s);
        }));
  }

  static PhiContrast custom(ScalarFn phi, ScalarFn phi_prime,
                            std::optional<ScalarFn> psi = std::nullopt,
                            bool bounded = false) {
    return PhiContrast("custom", std::move(phi), std::move(phi_prime),
                       std::move(psi), bounded);
  }

  /// α Φ₁ + β Φ₂. Closed-form Ψ survives when both operands carry one.
  static PhiContrast linear_combination(double alpha, const PhiContrast& a,
                                        double beta, const PhiContrast& b) {
    std::optional<ScalarFn> psi;
    if (a.psi_closed_ && b.psi_closed_) {
      psi = [alpha, beta, pa = *a.psi_closed_, pb = *b.psi_closed_](double u) {
        return alpha * pa(u) + beta * pb(u);
      };
    }
    return PhiContrast(
        "custom",
        [alpha, beta, fa = a.phi_, fb = b.phi_](double u) {
          return alpha * fa(u) + beta * fb(u);
        },
        [alpha, beta, fa = a.phi_prime_, fb = b.phi_prime_](double u) {
          return alpha * fa(u) + beta * fb(u);
        },
        std::move(psi), a.bounded_ && b.bounded_,
        ScalarFn([alpha, beta, a, b](double u) {
          return alpha * a.phi_second(u) + beta * b.phi_second(u);
        }));
  }

  /// Built-in family by key; throws ArgumentError on unknown keys.
  static PhiContrast from_name(const std::string& key) {
    if (key == "log") return log();
    if (key == "identity") return identity();
    if (key == "inv_sq_1p") return inv_sq_1p();
    if (key == "inv_1p_sq") return inv_1p_sq();
    throw ArgumentError("unknown contrast family: " + key);
  }

  const std::string& name() const noexcept { return name_; }
  bool bounded() const noexcept { return bounded_; }
  bool has_closed_form_psi() const noexcept { return psi_closed_.has_value(); }
  bool is_log() const noexcept { return name_ == "log"; }

  double phi(double u) const { return phi_(u); }
  double phi_prime(double u) const { return phi_prime_(u); }

  /// Φ''. Closed form when known, else a central difference of Φ'.
  double phi_second(double u) const {
    if (phi_second_) return (*phi_second_)(u);
    const double h = 1e-5 * std::max(std::abs(u), 1.0);
    return (phi_prime_(u + h) - phi_prime_(u - h)) / (2.0 * h);
  }

  /// Closed-form Ψ, or an empty optional.
  const std::optional<ScalarFn>& psi_closed_form() const noexcept {
    return psi_closed_;
  }

 private:
  std::string name_;
  ScalarFn phi_;
  ScalarFn phi_prime_;
  std::optional<ScalarFn> psi_closed_;
  std::optional<ScalarFn> phi_second_;
  bool bounded_;
};

/// Ψ(u) = ∫_0^u vΦ'(v) dv by adaptive quadrature, ignoring any closed form.
inline double psi_by_quadrature(const PhiContrast& c, double u,
                                const ContrastTolerances& tol = kContrastTolerances) {
  if (!(u > 0.0)) throw DomainError("psi: argument must be positive");
  auto integrand = [&c](double v) { return v * c.phi_prime(v); };
  AdaptiveOptions opts{tol.psi_abs_tol, tol.psi_max_subdivisions};
  return adaptive_integrate(integrand, 0.0, u, opts).value;
}

inline double psi(const PhiContrast& c, double u,
                  const ContrastTolerances& tol = kContrastTolerances) {
  if (!(u > 0.0)) throw DomainError("psi: argument must be positive");
  if (const auto& closed = c.psi_closed_form()) return (*closed)(u);
  return psi_by_quadrature(c, u, tol);
}

/// Ψ extended to 0 by continuity (Ψ(0⁺) = 0 for every admissible Φ).
inline double psi_extended(const PhiContrast& c, double u,
                           const ContrastTolerances& tol = kContrastTolerances) {
  if (u < 0.0) throw DomainError("psi: negative argument");
  if (u == 0.0) return 0.0;
  return psi(c, u, tol);
}

/// Ψ'(v) = vΦ'(v).
inline double psi_prime(const PhiContrast& c, double v) {
  if (v == 0.0) return 0.0;
  return v * c.phi_prime(v);
}

/// Ψ''(v) = Φ'(v) + vΦ''(v).
inline double psi_second(const PhiContrast& c, double v) {
  if (v == 0.0) return 0.0;
  return c.phi_prime(v) + v * c.phi_second(v);
}

/// Θ(u, v) = uΦ(v) - Ψ(v).
inline double theta(const PhiContrast& c, double u, double v) {
  if (!(u > 0.0) || !(v > 0.0)) {
    throw DomainError("theta: arguments must be positive");
  }
  return u * c.phi(v) - psi(c, v);
}

/// Θ(u, v) - Θ(u, u); nonpositive for nondecreasing Φ.
inline double theta_gap(const PhiContrast& c, double u, double v) {
  return theta(c, u, v) - theta(c, u, u);
}

struct ConcavityPoint {
  double v = 0.0;
  double phi_prime = 0.0;
  double phi_second = 0.0;
  double condition = 0.0;  // Φ'(v) + vΦ''(v)
  bool concave = false;
  bool nondecreasing = false;
  bool transform_concave = false;

  bool ok() const noexcept { return concave && nondecreasing && transform_concave; }
};

struct ConcavityReport {
  std::vector<ConcavityPoint> points;
  bool pass = false;
};

/// Pointwise checks of Φ'' ≤ 0, Φ' ≥ 0 and Φ' + vΦ'' ≥ 0, with Φ'' from a
/// central difference of Φ'.
inline ConcavityReport check_concavity_condition(
    const PhiContrast& c, std::span<const double> grid,
    const ContrastTolerances& tol = kContrastTolerances) {
  if (grid.empty()) throw ArgumentError("check_concavity_condition: empty grid");
  ConcavityReport report;
  report.pass = true;
  report.points.reserve(grid.size());
  for (double v : grid) {
    if (!(v > 0.0)) throw ArgumentError("check_concavity_condition: grid must be positive");
    const double h = tol.second_diff_step * std::max(std::abs(v), 1.0);
    ConcavityPoint p;
    p.v = v;
    p.phi_prime = c.phi_prime(v);
    p.phi_second = (c.phi_prime(v + h) - c.phi_prime(v - h)) / (2.0 * h);
    p.condition = p.phi_prime + v * p.phi_second;
    p.concave = p.phi_second <= tol.concavity_tol;
    p.nondecreasing = p.phi_prime >= -tol.concavity_tol;
    p.transform_concave = p.condition >= -tol.concavity_tol;
    report.pass = report.pass && p.ok();
    report.points.push_back(p);
  }
  return report;
}

/// Grid used when an optimizer screens a Φ family: 32 log-spaced points in
/// [0.2, 50]. Below 0.2 the O(h²/v³) truncation error of the log family's
/// second difference exceeds the 1e-7 tolerance.
inline std::vector<double> admissibility_grid() {
  std::vector<double> g(32);
  const double lo = std::log(0.2);
  const double hi = std::log(50.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / (g.size() - 1));
  }
  return g;
}

/// Φ(f(x)) - ∫Ψ(f_θ)dQ + P_θ(X). Returns kNegInf when Φ(0⁺) = -∞ and f(x) = 0.
inline double m_value(const PhiContrast& c, double density_at_x,
                      double psi_integral, double total_mass) {
  if (density_at_x < 0.0) throw DomainError("m_value: negative density");
  const double phi = c.phi(density_at_x);
  if (is_sentinel(phi)) return kNegInf;
  return phi - psi_integral + total_mass;
}

}  // namespace mest
