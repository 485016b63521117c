#pragma once

// Empirical contrasts M_n(θ) = (1/n) Σ m_θ(X_i) and their maximizers.
//
// Parametric families are fitted by exhaustive grid search over the box.
// Mixing measures on a fixed support grid are fitted either by EM (log
// family only) or by a Frank-Wolfe vertex-direction method for any Φ that
// makes the empirical contrast concave in the weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mest/contrast.hpp"
#include "mest/error.hpp"
#include "mest/mixing_measure.hpp"
#include "mest/models.hpp"
#include "mest/quadrature.hpp"

namespace mest {

template <DensityModel Model>
class EmpiricalContrast {
 public:
  using parameter_type = typename Model::parameter_type;

  EmpiricalContrast(PhiContrast contrast, Model model, std::vector<double> sample)
      : EmpiricalContrast(std::move(contrast), model, std::move(sample),
                          default_rule(model.x_domain())) {}

  EmpiricalContrast(PhiContrast contrast, Model model, std::vector<double> sample,
                    QuadratureRule rule)
      : contrast_(std::move(contrast)),
        model_(std::move(model)),
        sample_(std::move(sample)),
        rule_(std::move(rule)) {
    if (sample_.empty()) throw ArgumentError("EmpiricalContrast: empty sample");
    const Interval dom = model_.x_domain();
    for (double x : sample_) {
      if (!dom.contains(x)) throw ArgumentError("EmpiricalContrast: observation outside x-domain");
    }
  }

  const PhiContrast& contrast() const noexcept { return contrast_; }
  const Model& model() const noexcept { return model_; }
  std::span<const double> sample() const noexcept { return sample_; }
  const QuadratureRule& rule() const noexcept { return rule_; }
  std::size_t size() const noexcept { return sample_.size(); }

  /// M_n(θ); kNegInf as soon as one term is the sentinel.
  double evaluate(const parameter_type& theta) const {
    model_.validate(theta);
    const double psi_int = psi_integral(contrast_, model_, theta, rule_);
    const double mass = model_.total_mass(theta);
    double sum = 0.0;
    for (double x : sample_) {
      const double m = m_value(contrast_, model_.density(theta, x), psi_int, mass);
      if (is_sentinel(m)) return kNegInf;
      sum += m;
    }
    return sum / static_cast<double>(sample_.size());
  }

 private:
  PhiContrast contrast_;
  Model model_;
  std::vector<double> sample_;
  QuadratureRule rule_;
};

enum class StopReason { gradient_criterion, max_iter, objective_stall, exhaustive };

inline const char* to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::gradient_criterion: return "gradient_criterion";
    case StopReason::max_iter: return "max_iter";
    case StopReason::objective_stall: return "objective_stall";
    case StopReason::exhaustive: return "exhaustive";
  }
  return "unknown";
}

template <class Parameter>
struct FitResult {
  Parameter theta_hat{};
  double m_n_value = kNegInf;
  /// Upper bound on sup M_n - M_n(θ̂), ≥ 0.
  double gap_bound = 0.0;
  /// Objective after each iteration; nondecreasing.
  std::vector<double> trace;
  std::size_t iterations = 0;
  bool converged = false;
  StopReason stop_reason = StopReason::max_iter;
  /// Mixture fits: support grid and the directional derivative D(z_j) of the
  /// objective toward δ_{z_j} at the returned weights.
  std::vector<double> support;
  std::vector<double> directional;
  std::vector<double> weights;
};

// ---------------------------------------------------------------------------
// Grid search

struct GridOptions {
  /// Lipschitz constant of M_n for the gap bound. Unset: twice the largest
  /// finite-difference slope seen on the grid.
  std::optional<double> lipschitz;
  double safety_factor = 2.0;
  std::size_t max_points = 10'000'000;
};

/// Tensor grid with `resolution[d]` equispaced points per side, corners
/// included.
inline std::vector<std::vector<double>> grid_axes(const Box& box,
                                                  std::span<const std::size_t> resolution) {
  if (resolution.size() != box.dim()) throw ArgumentError("grid: resolution dimension mismatch");
  std::vector<std::vector<double>> axes(box.dim());
  for (std::size_t d = 0; d < box.dim(); ++d) {
    if (resolution[d] < 2) throw ArgumentError("grid: resolution must be at least 2 per side");
    axes[d].resize(resolution[d]);
    for (std::size_t k = 0; k < resolution[d]; ++k) {
      axes[d][k] = box.lower[d] + (box.upper[d] - box.lower[d]) * static_cast<double>(k) /
                                      static_cast<double>(resolution[d] - 1);
    }
    axes[d].back() = box.upper[d];
  }
  return axes;
}

/// Points per side giving spacing at most `step` on every side.
inline std::vector<std::size_t> resolution_for_step(const Box& box, double step) {
  if (!(step > 0.0)) throw ArgumentError("grid step must be positive");
  std::vector<std::size_t> r(box.dim());
  for (std::size_t d = 0; d < box.dim(); ++d) {
    r[d] = static_cast<std::size_t>(std::ceil((box.upper[d] - box.lower[d]) / step - 1e-9)) + 1;
  }
  return r;
}

inline FitResult<BoxPoint> fit_grid(const EmpiricalContrast<ParametricFamily>& ec,
                                    std::span<const std::size_t> resolution,
                                    const GridOptions& opts = {}) {
  const Box& box = ec.model().box();
  const auto axes = grid_axes(box, resolution);
  std::size_t total = 1;
  for (std::size_t r : resolution) {
    if (r > opts.max_points || total > opts.max_points / r) {
      throw ArgumentError("fit_grid: grid exceeds the point budget");
    }
    total *= r;
  }
  const std::size_t dim = box.dim();
  std::vector<double> values(total);
  std::vector<std::size_t> idx(dim, 0);
  BoxPoint point(dim);

  FitResult<BoxPoint> out;
  std::size_t best = 0;
  double best_value = kNegInf;
  for (std::size_t flat = 0; flat < total; ++flat) {
    // Lexicographic order, first coordinate most significant.
    std::size_t rem = flat;
    for (std::size_t d = dim; d-- > 0;) {
      idx[d] = rem % resolution[d];
      rem /= resolution[d];
      point[d] = axes[d][idx[d]];
    }
    values[flat] = ec.evaluate(point);
    // Strict comparison keeps the lexicographically first maximizer.
    if (flat == 0 || values[flat] > best_value) {
      best = flat;
      best_value = values[flat];
      out.trace.push_back(best_value);
    }
  }

  // Gap bound L·h/2 with h the cell diameter.
  double lipschitz = 0.0;
  double diameter2 = 0.0;
  std::size_t stride = 1;
  for (std::size_t d = dim; d-- > 0;) {
    const double step = axes[d][1] - axes[d][0];
    diameter2 += step * step;
    if (!opts.lipschitz) {
      for (std::size_t flat = 0; flat < total; ++flat) {
        if ((flat / stride) % resolution[d] + 1 >= resolution[d]) continue;
        const double a = values[flat];
        const double b = values[flat + stride];
        if (is_sentinel(a) || is_sentinel(b)) continue;
        lipschitz = std::max(lipschitz, std::abs(b - a) / step);
      }
    }
    stride *= resolution[d];
  }
  lipschitz = opts.lipschitz ? *opts.lipschitz : opts.safety_factor * lipschitz;

  std::size_t rem = best;
  out.theta_hat.resize(dim);
  for (std::size_t d = dim; d-- > 0;) {
    out.theta_hat[d] = axes[d][rem % resolution[d]];
    rem /= resolution[d];
  }
  out.m_n_value = best_value;
  out.gap_bound = lipschitz * std::sqrt(diameter2) / 2.0;
  out.iterations = total;
  out.converged = true;
  out.stop_reason = StopReason::exhaustive;
  return out;
}

// ---------------------------------------------------------------------------
// Mixing-measure optimizers

struct MixtureOptions {
  double tol = 1e-6;
  std::size_t max_iter = 10'000;
  /// Weights above this count as active support for the equalization check.
  double active_weight = 1e-8;
  /// Active atoms must satisfy |D(z_j)| ≤ active_factor · tol.
  double active_factor = 10.0;
};

inline constexpr double kEmFlushWeight = 1e-30;
/// EM checks the full Lindsay vector at least this often.
inline constexpr std::size_t kEmVertexPeriod = 20;

struct EmOptions : MixtureOptions {
  /// Fine grids put nearly collinear kernel columns on the support, where
  /// first-order steps need 10⁴ iterations to equalize D at tol 1e-6.
  EmOptions() { max_iter = 50'000; }
  /// SQUAREM extrapolation between EM maps, with fallback to the plain double
  /// EM step whenever the extrapolated point does not improve on it.
  bool accelerate = true;
};

struct FwOptions : MixtureOptions {
  FwOptions() { max_iter = 2'000; }
  /// Cap on Newton correction steps on the active set after each vertex step.
  std::size_t max_inner = 200;
};

namespace detail {

// Kernel matrix at the sample and quadrature nodes for a fixed support grid,
// plus the objective and its directional derivatives in the weights.
class MixtureSystem {
 public:
  MixtureSystem(const EmpiricalContrast<MixtureModel>& ec, std::span<const double> grid)
      : contrast_(ec.contrast()),
        grid_(grid.begin(), grid.end()),
        n_(ec.size()),
        g_(grid.size()),
        log_(ec.contrast().is_log()) {
    if (grid_.empty()) throw ArgumentError("mixture fit: empty support grid");
    for (std::size_t j = 0; j < g_; ++j) {
      if (!ec.model().z_domain().contains(grid_[j])) {
        throw ArgumentError("mixture fit: support grid leaves the latent domain");
      }
      if (j > 0 && !(grid_[j] > grid_[j - 1])) {
        throw ArgumentError("mixture fit: support grid must be strictly increasing");
      }
    }
    const auto& kernel = ec.model().kernel();
    const auto xs = ec.sample();
    k_.resize(g_ * n_);
    for (std::size_t j = 0; j < g_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) k_[j * n_ + i] = kernel.evaluate(xs[i], grid_[j]);
    }
    const auto& rule = ec.rule();
    q_.assign(rule.weights().begin(), rule.weights().end());
    nq_ = q_.size();
    kq_.resize(g_ * nq_);
    col_mass_.assign(g_, 0.0);
    for (std::size_t j = 0; j < g_; ++j) {
      for (std::size_t l = 0; l < nq_; ++l) {
        const double v = kernel.evaluate(rule.nodes()[l], grid_[j]);
        kq_[j * nq_ + l] = v;
        col_mass_[j] += q_[l] * v;
      }
    }
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t g() const noexcept { return g_; }
  std::size_t nq() const noexcept { return nq_; }
  bool is_log() const noexcept { return log_; }
  std::span<const double> grid() const noexcept { return grid_; }
  std::span<const double> column(std::size_t j) const { return {&k_[j * n_], n_}; }
  std::span<const double> qcolumn(std::size_t j) const { return {&kq_[j * nq_], nq_}; }

  void densities(std::span<const double> w, std::vector<double>& f,
                 std::vector<double>& fq) const {
    f.assign(n_, 0.0);
    fq.assign(nq_, 0.0);
    for (std::size_t j = 0; j < g_; ++j) {
      if (w[j] == 0.0) continue;
      const double wj = w[j];
      const double* col = &k_[j * n_];
      for (std::size_t i = 0; i < n_; ++i) f[i] += wj * col[i];
      const double* qcol = &kq_[j * nq_];
      for (std::size_t l = 0; l < nq_; ++l) fq[l] += wj * qcol[l];
    }
  }

  /// f = Kw at the sample only; enough for the log family.
  void sample_densities(std::span<const double> w, std::vector<double>& f) const {
    f.assign(n_, 0.0);
    for (std::size_t j = 0; j < g_; ++j) {
      if (w[j] == 0.0) continue;
      const double wj = w[j];
      const double* col = &k_[j * n_];
      for (std::size_t i = 0; i < n_; ++i) f[i] += wj * col[i];
    }
  }

  /// Log-family objective from sample densities. Ψ(u) = u, so the Ψ term is
  /// Σ_j w_j ∫k_j dQ and the quadrature-node densities are not needed.
  double log_objective(std::span<const double> f, std::span<const double> w, double mass) const {
    double data = 0.0;
    for (double v : f) data += std::log(v);
    data /= static_cast<double>(n_);
    double psi_term = 0.0;
    for (std::size_t j = 0; j < g_; ++j) psi_term += w[j] * col_mass_[j];
    return data - psi_term + mass;
  }

  /// (1/n)Σ Φ(f_i) - Σ q_l Ψ(fq_l) + mass.
  double objective(std::span<const double> f, std::span<const double> fq, double mass) const {
    double data = 0.0;
    for (double v : f) data += contrast_.phi(v);
    data /= static_cast<double>(n_);
    if (is_sentinel(data)) return kNegInf;
    double psi_term = 0.0;
    for (std::size_t l = 0; l < nq_; ++l) psi_term += q_[l] * psi_extended(contrast_, fq[l]);
    return data - psi_term + mass;
  }

  /// Directional derivative toward each δ_{z_j}. For the log family this is
  /// Lindsay's D(z_j) = (1/n)Σ k(x_i, z_j)/f(x_i) - 1; otherwise
  /// (1/n)ΣΦ'(f_i)(k_ij - f_i) - ∫Ψ'(f)(k_j - f)dQ + (1 - mass).
  /// Also returns through `toward_null` the derivative toward the null measure.
  /// With `mask`, entries where mask[j] == 0 are skipped and left at zero.
  std::vector<double> directional(std::span<const double> f, std::span<const double> fq,
                                  double mass, double* toward_null = nullptr,
                                  std::span<const double> mask = {}) const {
    std::vector<double> a(n_);
    double a_dot_f = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      a[i] = contrast_.phi_prime(f[i]) / static_cast<double>(n_);
      a_dot_f += a[i] * f[i];
    }
    std::vector<double> d(g_);
    if (log_) {
      for (std::size_t j = 0; j < g_; ++j) {
        if (mask.empty() || mask[j] != 0.0) d[j] = dot(column(j), a) - 1.0;
      }
      if (toward_null) *toward_null = -std::numeric_limits<double>::infinity();
      return d;
    }
    std::vector<double> b(nq_);
    double b_dot_f = 0.0;
    for (std::size_t l = 0; l < nq_; ++l) {
      b[l] = q_[l] * psi_prime(contrast_, fq[l]);
      b_dot_f += b[l] * fq[l];
    }
    for (std::size_t j = 0; j < g_; ++j) {
      if (!mask.empty() && mask[j] == 0.0) continue;
      d[j] = (dot(column(j), a) - a_dot_f) - (dot(qcolumn(j), b) - b_dot_f) + (1.0 - mass);
    }
    if (toward_null) *toward_null = -a_dot_f + b_dot_f - mass;
    return d;
  }

  static double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
  }

  const PhiContrast& contrast() const noexcept { return contrast_; }
  std::span<const double> qweights() const noexcept { return q_; }

 private:
  PhiContrast contrast_;
  std::vector<double> grid_;
  std::size_t n_;
  std::size_t g_;
  std::size_t nq_ = 0;
  bool log_;
  std::vector<double> k_;
  std::vector<double> kq_;
  std::vector<double> q_;
  std::vector<double> col_mass_;
};

inline void normalize(std::vector<double>& w) {
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
}

inline bool lindsay_satisfied(std::span<const double> d, std::span<const double> w,
                              const MixtureOptions& opts) {
  double worst_active = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (d[j] > opts.tol) return false;
    if (w[j] > opts.active_weight) worst_active = std::max(worst_active, std::abs(d[j]));
  }
  return worst_active <= opts.active_factor * opts.tol;
}

inline FitResult<MixingMeasure> finish_mixture(const EmpiricalContrast<MixtureModel>& ec,
                                               const MixtureSystem& sys,
                                               std::vector<double> w, std::vector<double> d,
                                               double toward_null, FitResult<MixingMeasure> out) {
  double mass = 0.0;
  for (double v : w) mass += v;
  // Round-off can push the sum a hair above 1.
  if (mass > 1.0) {
    for (double& v : w) v /= mass;
  }
  out.theta_hat = MixingMeasure(std::vector<double>(sys.grid().begin(), sys.grid().end()), w);
  out.m_n_value = ec.evaluate(out.theta_hat);
  // Concavity: M_n(θ) - M_n(w) ≤ max over vertices of the directional
  // derivative toward that vertex.
  double gap = toward_null;
  for (double v : d) gap = std::max(gap, v);
  out.gap_bound = std::max(0.0, gap);
  out.support.assign(sys.grid().begin(), sys.grid().end());
  out.directional = std::move(d);
  out.weights = std::move(w);
  return out;
}

}  // namespace detail

/// NPMLE of the mixing weights on a fixed grid by EM. Log family only.
inline FitResult<MixingMeasure> fit_mixture_em(const EmpiricalContrast<MixtureModel>& ec,
                                               std::span<const double> support_grid,
                                               const EmOptions& opts = {}) {
  if (!ec.contrast().is_log()) {
    throw AdmissibilityError("fit_mixture_em: EM requires the log contrast");
  }
  const detail::MixtureSystem sys(ec, support_grid);
  const std::size_t g = sys.g();

  // Objective, D and the EM image at one weight vector.
  struct Eval {
    std::vector<double> w;
    std::vector<double> d;
    std::vector<double> image;
    double objective = kNegInf;
  };
  std::vector<double> f;
  auto eval = [&](std::vector<double> in) {
    Eval e;
    sys.sample_densities(in, f);
    for (double v : f) {
      if (!(v > 0.0)) throw NumericError("fit_mixture_em: mixture density vanished", 0.0);
    }
    e.objective = sys.log_objective(f, in, 1.0);
    // The EM map needs D on the support only; the full vector is computed
    // when the support passes the equalization check.
    e.d = sys.directional(f, {}, 1.0, nullptr, in);
    e.image.resize(g);
    for (std::size_t j = 0; j < g; ++j) e.image[j] = in[j] * (e.d[j] + 1.0);
    detail::normalize(e.image);
    // An atom this light regains weight only through a vertex step, so
    // flushing it keeps the arithmetic sparse and out of the subnormal range.
    for (double& v : e.image) {
      if (v < kEmFlushWeight) v = 0.0;
    }
    e.w = std::move(in);
    return e;
  };

  FitResult<MixingMeasure> out;
  Eval cur = eval(std::vector<double>(g, 1.0 / static_cast<double>(g)));
  out.trace.push_back(cur.objective);
  double step_max = 1.0;
  auto full_directional = [&](const std::vector<double>& in) {
    sys.sample_densities(in, f);
    return sys.directional(f, {}, 1.0);
  };
  // Two moves the multiplicative map makes slowly or not at all. Atoms
  // outside the support never regain weight, so the first move steps toward
  // the off-support atom with the largest D. Light atoms with D < 0 decay
  // only by a factor 1 + D per map, so the second moves the whole weight of
  // the worst active atom onto the best atom. The log-likelihood is concave
  // along both segments; the step length is the root of its slope.
  auto line_step = [&](std::size_t to, std::size_t from) {
    sys.sample_densities(cur.w, f);
    const auto k_to = sys.column(to);
    std::vector<double> dir(f.size());
    if (from == g) {
      for (std::size_t i = 0; i < f.size(); ++i) dir[i] = k_to[i] - f[i];
    } else {
      const auto k_from = sys.column(from);
      for (std::size_t i = 0; i < f.size(); ++i) dir[i] = cur.w[from] * (k_to[i] - k_from[i]);
    }
    auto slope = [&](double t) {
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) s += dir[i] / (f[i] + t * dir[i]);
      return s;
    };
    double t = 1.0;
    if (slope(1.0) < 0.0) {
      double lo = 0.0;
      double hi = 1.0;
      for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (slope(mid) > 0.0 ? lo : hi) = mid;
      }
      t = lo;
    }
    std::vector<double> w = cur.w;
    if (from == g) {
      for (double& v : w) v *= 1.0 - t;
      w[to] += t;
    } else {
      w[to] += t * cur.w[from];
      w[from] = t == 1.0 ? 0.0 : (1.0 - t) * cur.w[from];
    }
    Eval e = eval(std::move(w));
    if (!(e.objective > cur.objective)) return false;
    cur = std::move(e);
    return true;
  };
  auto support_step = [&](const std::vector<double>& d) {
    std::size_t outside = g;
    std::size_t best = g;
    std::size_t worst = g;
    for (std::size_t j = 0; j < g; ++j) {
      if (cur.w[j] < opts.active_weight && d[j] > opts.tol && (outside == g || d[j] > d[outside])) outside = j;
      if (best == g || d[j] > d[best]) best = j;
      if (cur.w[j] > 0.0 && (worst == g || d[j] < d[worst])) worst = j;
    }
    if (outside != g && line_step(outside, g)) return true;
    return worst != best && d[best] > d[worst] && line_step(best, worst);
  };
  // Iterations count Lindsay evaluations, so a problem solved at the start
  // reports one.
  for (std::size_t it = 1;; ++it) {
    out.iterations = it;
    if (detail::lindsay_satisfied(cur.d, cur.w, opts) || it % kEmVertexPeriod == 0) {
      const auto d = full_directional(cur.w);
      if (detail::lindsay_satisfied(d, cur.w, opts)) {
        cur.d = d;
        out.converged = true;
        out.stop_reason = StopReason::gradient_criterion;
        break;
      }
      if (it < opts.max_iter && support_step(d)) {
        out.trace.push_back(cur.objective);
        step_max = 1.0;
        continue;
      }
    }
    if (it >= opts.max_iter) {
      out.stop_reason = StopReason::max_iter;
      cur.d = full_directional(cur.w);
      break;
    }
    Eval e1 = eval(cur.image);
    if (!opts.accelerate) {
      cur = std::move(e1);
      out.trace.push_back(cur.objective);
      continue;
    }
    const std::vector<double>& w = cur.w;
    const std::vector<double>& w1 = e1.w;
    const std::vector<double>& w2 = e1.image;
    double rr = 0.0;
    double vv = 0.0;
    std::vector<double> r(g);
    std::vector<double> v(g);
    for (std::size_t j = 0; j < g; ++j) {
      r[j] = w1[j] - w[j];
      v[j] = w2[j] - w1[j] - r[j];
      rr += r[j] * r[j];
      vv += v[j] * v[j];
    }
    // SQUAREM: extrapolate, take one EM map from there, and accept once the
    // result improves on the first EM image. At α = -1 the extrapolated
    // point is the second EM image, so the fallback is plain EM. The step
    // cap grows fourfold after each accepted capped step.
    double alpha = vv > 0.0 ? std::min(-1.0, -std::sqrt(rr / vv)) : -1.0;
    const bool capped = alpha < -step_max;
    alpha = std::max(alpha, -step_max);
    bool backtracked = false;
    Eval next;
    for (;;) {
      std::vector<double> cand(g);
      for (std::size_t j = 0; j < g; ++j) {
        cand[j] = w[j] - 2.0 * alpha * r[j] + alpha * alpha * v[j];
        // An extrapolated weight may shrink by at most this factor, so atoms
        // leave the support fast yet can still return.
        cand[j] = std::max(cand[j], 1e-3 * w2[j]);
      }
      detail::normalize(cand);
      Eval ec1 = eval(std::move(cand));
      next = eval(ec1.image);
      if (next.objective >= e1.objective || alpha >= -1.0) break;
      backtracked = true;
      alpha = std::min(-1.0, 0.5 * (alpha - 1.0));
    }
    if (backtracked) {
      step_max = std::max(1.0, -alpha);
    } else if (capped) {
      step_max *= 4.0;
    }
    if (!(next.objective >= cur.objective)) {
      // Round-off guard: keep the first EM image.
      next = std::move(e1);
    }
    cur = std::move(next);
    out.trace.push_back(cur.objective);
  }
  return detail::finish_mixture(ec, sys, std::move(cur.w), std::move(cur.d), kNegInf,
                                std::move(out));
}

namespace detail {

// Maximizer of a concave φ on [0, hi] by golden-section search.
template <class F>
double golden_section_max(F&& phi, double hi, double x_tol = 1e-12) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = 0.0;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = phi(c);
  double fd = phi(d);
  while (b - a > x_tol * std::max(1.0, hi)) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = phi(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = phi(d);
    }
  }
  // Endpoints are candidates too.
  double best = 0.5 * (a + b);
  double fbest = phi(best);
  for (double t : {0.0, hi}) {
    const double ft = phi(t);
    if (ft > fbest) {
      fbest = ft;
      best = t;
    }
  }
  return best;
}

// Root of a decreasing derivative on [0, hi] by the Illinois variant of
// regula falsi; returns an endpoint when the sign does not change.
template <class F>
double decreasing_root(F&& dphi, double hi, double tol = 1e-14, int max_eval = 200) {
  double a = 0.0;
  double b = hi;
  double fa = dphi(a);
  if (!(fa > 0.0)) return 0.0;
  double fb = dphi(b);
  if (fb >= 0.0) return hi;
  int side = 0;
  double c = a;
  for (int k = 0; k < max_eval; ++k) {
    c = (a * fb - b * fa) / (fb - fa);
    if (!(c > a && c < b)) c = 0.5 * (a + b);
    const double fc = dphi(c);
    if (fc == 0.0) return c;
    if (fc > 0.0) {
      a = c;
      fa = fc;
      if (side == 1) fb *= 0.5;
      side = 1;
    } else {
      b = c;
      fb = fc;
      if (side == -1) fa *= 0.5;
      side = -1;
    }
    if (b - a <= tol * std::max(1.0, hi)) break;
  }
  return c;
}

// Solves [H 1; 1ᵀ 0][Δ; μ] = [-g; 0] for the ascent direction of a concave
// quadratic model on {Σ Δ = 0}. H is shifted by a small ridge so that
// collinear kernel columns do not make the system singular.
inline std::optional<std::vector<double>> kkt_newton_step(std::vector<double> hess,
                                                          std::span<const double> grad,
                                                          std::size_t m) {
  double scale = 0.0;
  for (std::size_t r = 0; r < m; ++r) scale = std::max(scale, std::abs(hess[r * m + r]));
  if (!(scale > 0.0)) return std::nullopt;
  const std::size_t k = m + 1;
  std::vector<double> sys(k * (k + 1), 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < m; ++c) sys[r * (k + 1) + c] = hess[r * m + c];
    sys[r * (k + 1) + r] -= 1e-10 * scale;
    sys[r * (k + 1) + m] = 1.0;
    sys[m * (k + 1) + r] = 1.0;
    sys[r * (k + 1) + k] = -grad[r];
  }
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r) {
      if (std::abs(sys[r * (k + 1) + col]) > std::abs(sys[piv * (k + 1) + col])) piv = r;
    }
    if (sys[piv * (k + 1) + col] == 0.0) return std::nullopt;
    if (piv != col) {
      for (std::size_t c = 0; c <= k; ++c) std::swap(sys[piv * (k + 1) + c], sys[col * (k + 1) + c]);
    }
    for (std::size_t r = col + 1; r < k; ++r) {
      const double factor = sys[r * (k + 1) + col] / sys[col * (k + 1) + col];
      if (factor == 0.0) continue;
      for (std::size_t c = col; c <= k; ++c) sys[r * (k + 1) + c] -= factor * sys[col * (k + 1) + c];
    }
  }
  std::vector<double> x(k);
  for (std::size_t r = k; r-- > 0;) {
    double v = sys[r * (k + 1) + k];
    for (std::size_t c = r + 1; c < k; ++c) v -= sys[r * (k + 1) + c] * x[c];
    x[r] = v / sys[r * (k + 1) + r];
  }
  x.resize(m);
  for (double v : x) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  return x;
}

}  // namespace detail

/// Vertex-direction (Frank-Wolfe) ascent of M_n over sub-probability weights
/// on a fixed grid. Each outer step moves toward the vertex with the largest
/// directional derivative, with a golden-section line search on [0, 1];
/// mass-preserving Newton steps on the active atoms then re-balance the
/// active support.
inline FitResult<MixingMeasure> fit_mixture_fw(const EmpiricalContrast<MixtureModel>& ec,
                                               std::span<const double> support_grid,
                                               const FwOptions& opts = {}) {
  const PhiContrast& contrast = ec.contrast();
  if (!contrast.is_log()) {
    const auto grid = admissibility_grid();
    if (!check_concavity_condition(contrast, grid).pass) {
      throw AdmissibilityError("fit_mixture_fw: contrast '" + contrast.name() +
                               "' does not give a concave objective");
    }
  }
  const detail::MixtureSystem sys(ec, support_grid);
  const std::size_t n = sys.n();
  const std::size_t g = sys.g();
  const std::size_t nq = sys.nq();
  const bool log = sys.is_log();
  const auto q = sys.qweights();

  // Start at the vertex with the best objective.
  std::vector<double> w(g, 0.0);
  std::vector<double> f;
  std::vector<double> fq;
  {
    std::size_t best = 0;
    double best_val = kNegInf;
    for (std::size_t j = 0; j < g; ++j) {
      const auto col = sys.column(j);
      const auto qcol = sys.qcolumn(j);
      const double val = sys.objective(col, qcol, 1.0);
      if (j == 0 || val > best_val) {
        best = j;
        best_val = val;
      }
    }
    w[best] = 1.0;
  }
  sys.densities(w, f, fq);
  double mass = 1.0;

  auto objective_along = [&](std::span<const double> dir, std::span<const double> qdir,
                             double dmass, double t) {
    double data = 0.0;
    for (std::size_t i = 0; i < n; ++i) data += contrast.phi(f[i] + t * dir[i]);
    data /= static_cast<double>(n);
    if (is_sentinel(data) || std::isnan(data)) return kNegInf;
    if (log) {
      // ∫Ψ(f)dQ = ∫f dQ and mass enter linearly; both cancel up to quadrature
      // error, so only the data term moves.
      return data;
    }
    double psi_term = 0.0;
    for (std::size_t l = 0; l < nq; ++l) {
      psi_term += q[l] * psi_extended(contrast, std::max(0.0, fq[l] + t * qdir[l]));
    }
    return data - psi_term + mass + t * dmass;
  };
  auto slope_along = [&](std::span<const double> dir, std::span<const double> qdir,
                         double dmass, double t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += contrast.phi_prime(f[i] + t * dir[i]) * dir[i];
    s /= static_cast<double>(n);
    if (log) return s;
    for (std::size_t l = 0; l < nq; ++l) {
      s -= q[l] * psi_prime(contrast, std::max(0.0, fq[l] + t * qdir[l])) * qdir[l];
    }
    return s + dmass;
  };
  auto current_objective = [&] { return sys.objective(f, fq, mass); };

  FitResult<MixingMeasure> out;
  out.trace.push_back(current_objective());
  std::vector<double> dir(n);
  std::vector<double> qdir(nq);
  double toward_null = kNegInf;
  std::vector<double> d = sys.directional(f, fq, mass, &toward_null);

  for (std::size_t it = 0;; ++it) {
    std::size_t jbest = 0;
    for (std::size_t j = 1; j < g; ++j) {
      if (d[j] > d[jbest]) jbest = j;
    }
    const bool to_null = toward_null > d[jbest];
    if (detail::lindsay_satisfied(d, w, opts) && toward_null <= opts.tol) {
      out.converged = true;
      out.stop_reason = StopReason::gradient_criterion;
      break;
    }
    if (it >= opts.max_iter) {
      out.stop_reason = StopReason::max_iter;
      break;
    }

    // Toward step: w <- (1-t)w + t·v with v = δ_{z+} (or the null measure).
    const double before = current_objective();
    bool moved = false;
    if (std::max(d[jbest], toward_null) > opts.tol) {
      const auto col = sys.column(jbest);
      const auto qcol = sys.qcolumn(jbest);
      for (std::size_t i = 0; i < n; ++i) dir[i] = (to_null ? 0.0 : col[i]) - f[i];
      for (std::size_t l = 0; l < nq; ++l) qdir[l] = (to_null ? 0.0 : qcol[l]) - fq[l];
      const double dmass = (to_null ? 0.0 : 1.0) - mass;
      const double t = detail::golden_section_max(
          [&](double s) { return objective_along(dir, qdir, dmass, s); }, 1.0);
      if (t > 0.0 && objective_along(dir, qdir, dmass, t) > objective_along(dir, qdir, dmass, 0.0)) {
        for (double& v : w) v *= (1.0 - t);
        if (!to_null) w[jbest] += t;
        for (std::size_t i = 0; i < n; ++i) f[i] += t * dir[i];
        for (std::size_t l = 0; l < nq; ++l) fq[l] += t * qdir[l];
        mass += t * dmass;
        moved = true;
      }
    }

    // Newton correction on the active set with the mass held fixed. Steps are
    // truncated at the boundary of the simplex face; atoms that reach zero
    // leave the active set.
    for (std::size_t inner = 0; inner < opts.max_inner; ++inner) {
      std::vector<std::size_t> act;
      for (std::size_t j = 0; j < g; ++j) {
        if (w[j] > 0.0) act.push_back(j);
      }
      const std::size_t m = act.size();
      if (m < 2) break;
      std::vector<double> a(n);
      std::vector<double> a2(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = contrast.phi_prime(f[i]) / static_cast<double>(n);
        a2[i] = contrast.phi_second(f[i]) / static_cast<double>(n);
      }
      std::vector<double> b;
      std::vector<double> b2;
      if (!log) {
        b.resize(nq);
        b2.resize(nq);
        for (std::size_t l = 0; l < nq; ++l) {
          b[l] = q[l] * psi_prime(contrast, fq[l]);
          b2[l] = q[l] * psi_second(contrast, fq[l]);
        }
      }
      std::vector<double> grad(m);
      double gmax = -std::numeric_limits<double>::infinity();
      double gmin = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < m; ++r) {
        grad[r] = detail::MixtureSystem::dot(sys.column(act[r]), a);
        if (!log) grad[r] -= detail::MixtureSystem::dot(sys.qcolumn(act[r]), b);
        gmax = std::max(gmax, grad[r]);
        gmin = std::min(gmin, grad[r]);
      }
      if (gmax - gmin <= 0.1 * opts.tol) break;
      std::vector<double> hess(m * m, 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        const auto cr = sys.column(act[r]);
        for (std::size_t c = 0; c <= r; ++c) {
          const auto cc = sys.column(act[c]);
          double h = 0.0;
          for (std::size_t i = 0; i < n; ++i) h += a2[i] * cr[i] * cc[i];
          if (!log) {
            const auto qr = sys.qcolumn(act[r]);
            const auto qc = sys.qcolumn(act[c]);
            for (std::size_t l = 0; l < nq; ++l) h -= b2[l] * qr[l] * qc[l];
          }
          hess[r * m + c] = h;
          hess[c * m + r] = h;
        }
      }
      const auto step = detail::kkt_newton_step(hess, grad, m);
      if (!step) break;
      const std::vector<double>& delta = *step;
      double ascent = 0.0;
      for (std::size_t r = 0; r < m; ++r) ascent += grad[r] * delta[r];
      if (!(ascent > 0.0)) break;
      double cap = 1.0;
      std::size_t blocking = m;
      for (std::size_t r = 0; r < m; ++r) {
        if (delta[r] < 0.0 && w[act[r]] < -cap * delta[r]) {
          cap = -w[act[r]] / delta[r];
          blocking = r;
        }
      }
      std::fill(dir.begin(), dir.end(), 0.0);
      std::fill(qdir.begin(), qdir.end(), 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        const auto col = sys.column(act[r]);
        const auto qcol = sys.qcolumn(act[r]);
        for (std::size_t i = 0; i < n; ++i) dir[i] += delta[r] * col[i];
        for (std::size_t l = 0; l < nq; ++l) qdir[l] += delta[r] * qcol[l];
      }
      const double t = detail::decreasing_root(
          [&](double s) { return slope_along(dir, qdir, 0.0, s); }, cap, 1e-12, 60);
      if (!(t > 0.0)) break;
      for (std::size_t r = 0; r < m; ++r) w[act[r]] = std::max(0.0, w[act[r]] + t * delta[r]);
      if (blocking < m && t >= cap) w[act[blocking]] = 0.0;
      for (std::size_t i = 0; i < n; ++i) f[i] += t * dir[i];
      for (std::size_t l = 0; l < nq; ++l) fq[l] += t * qdir[l];
      moved = true;
    }

    // Refresh densities from the weights to shed accumulated drift.
    sys.densities(w, f, fq);
    mass = std::accumulate(w.begin(), w.end(), 0.0);
    const double after = current_objective();
    out.iterations = it + 1;
    out.trace.push_back(after);
    d = sys.directional(f, fq, mass, &toward_null);
    if (!moved || !(after > before)) {
      if (detail::lindsay_satisfied(d, w, opts) && toward_null <= opts.tol) {
        out.converged = true;
        out.stop_reason = StopReason::gradient_criterion;
      } else {
        out.stop_reason = StopReason::objective_stall;
      }
      break;
    }
  }
  return detail::finish_mixture(ec, sys, std::move(w), std::move(d), toward_null,
                                std::move(out));
}

// ---------------------------------------------------------------------------
// Gap certification

struct GapCertificate {
  /// max(0, max over probes of M_n(θ) - M_n(θ̂)); a lower bound on the gap.
  double lower = 0.0;
  /// For log-family mixture fits: max(0, max_z D(z)) over the support grid,
  /// an upper bound on the gap over measures supported there.
  std::optional<double> upper;
};

template <DensityModel Model>
GapCertificate certify_gap(const EmpiricalContrast<Model>& ec,
                           const FitResult<typename Model::parameter_type>& fit,
                           std::span<const typename Model::parameter_type> probes) {
  GapCertificate cert;
  const double at_fit = ec.evaluate(fit.theta_hat);
  for (const auto& p : probes) {
    const double v = ec.evaluate(p);
    if (is_sentinel(v)) continue;
    cert.lower = std::max(cert.lower, v - at_fit);
  }
  if constexpr (std::is_same_v<Model, MixtureModel>) {
    if (ec.contrast().is_log() && !fit.support.empty()) {
      const auto& kernel = ec.model().kernel();
      std::vector<double> f(ec.size());
      for (std::size_t i = 0; i < ec.size(); ++i) {
        f[i] = ec.model().density(fit.theta_hat, ec.sample()[i]);
      }
      double worst = 0.0;
      for (double z : fit.support) {
        double s = 0.0;
        for (std::size_t i = 0; i < ec.size(); ++i) s += kernel.evaluate(ec.sample()[i], z) / f[i];
        worst = std::max(worst, s / static_cast<double>(ec.size()) - 1.0);
      }
      cert.upper = worst;
    }
  }
  return cert;
}

}  // namespace mest
