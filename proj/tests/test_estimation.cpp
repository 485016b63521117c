#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "mest/contrast.hpp"
#include "mest/error.hpp"
#include "mest/estimation.hpp"
#include "mest/models.hpp"

using namespace mest;

namespace {

ParametricFamily flat_family(std::size_t dim) {
  Box box{std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)};
  box.upper.back() = 2.0;
  return ParametricFamily(
      "flat", box, [](std::span<const double>, double) { return 1.0; },
      [](std::span<const double>, Rng& rng) { return rng.uniform(); }, Interval{0.0, 1.0},
      BoxPoint(dim, 0.5));
}

std::vector<double> draw(const MixtureModel& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return m.sample(m.truth(), n, rng);
}

// (1/n)Σ log Σ_j w_j k(x_i, z_j), straight from the kernel.
double log_likelihood(const MixtureModel& m, std::span<const double> xs,
                      std::span<const double> z, std::span<const double> w) {
  double s = 0.0;
  for (double x : xs) {
    double f = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) f += w[j] * m.kernel().evaluate(x, z[j]);
    s += std::log(f);
  }
  return s / static_cast<double>(xs.size());
}

// Best log-likelihood over the 3-simplex grid of step 1/steps.
double exhaustive_three_atom(const MixtureModel& m, std::span<const double> xs,
                             std::span<const double> z, int steps = 100) {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a <= steps; ++a) {
    for (int b = 0; a + b <= steps; ++b) {
      const double w[3] = {static_cast<double>(a) / steps, static_cast<double>(b) / steps,
                           static_cast<double>(steps - a - b) / steps};
      best = std::max(best, log_likelihood(m, xs, z, w));
    }
  }
  return best;
}

void expect_monotone(const std::vector<double>& trace) {
  for (std::size_t k = 1; k < trace.size(); ++k) {
    EXPECT_GE(trace[k] - trace[k - 1], -1e-12) << "step " << k;
  }
}

void expect_lindsay(const FitResult<MixingMeasure>& fit, double tol) {
  ASSERT_TRUE(fit.converged);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < fit.directional.size(); ++j) {
    worst = std::max(worst, fit.directional[j]);
    if (fit.weights[j] > 1e-8) EXPECT_LE(std::abs(fit.directional[j]), 10.0 * tol);
  }
  EXPECT_LE(worst, tol);
}

}  // namespace

TEST(Evaluate, NullMeasureIsSentinel) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 20, 1));
  EXPECT_TRUE(is_sentinel(ec.evaluate(MixingMeasure::null())));
  EXPECT_FALSE(is_sentinel(ec.evaluate(m.truth())));
}

TEST(Evaluate, SingleObservationAtUnitDensity) {
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), flat_family(1), {0.3});
  EXPECT_NEAR(ec.evaluate(BoxPoint{0.0}), 0.0, 1e-14);
}

TEST(Evaluate, RejectsInvalidInputs) {
  const MixtureModel m = gaussian_mixture();
  EXPECT_THROW(EmpiricalContrast<MixtureModel>(PhiContrast::log(), m, {}), ArgumentError);
  EXPECT_THROW(EmpiricalContrast<MixtureModel>(PhiContrast::log(), m, {40.0}), ArgumentError);
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, {0.0});
  EXPECT_THROW(ec.evaluate(MixingMeasure::dirac(7.0)), ArgumentError);
}

TEST(Evaluate, SubProbabilityShiftsByLogAlpha) {
  for (const MixtureModel& m : {gaussian_mixture(), exponential_mixture()}) {
    const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 200, 2));
    const MixingMeasure& base = m.truth();
    for (double alpha : {0.3, 0.9}) {
      EXPECT_NEAR(ec.evaluate(base.scaled(alpha)), std::log(alpha) + ec.evaluate(base), 1e-10) << m.id();
    }
  }
}

TEST(FitGrid, GaussianNearSampleMean) {
  const ParametricFamily m = gaussian_location(0.3);
  Rng rng(4);
  auto xs = m.sample(m.truth(), 5000, rng);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, xs);
  const auto res = resolution_for_step(m.box(), 0.01);
  EXPECT_EQ(res[0], 601u);
  const auto fit = fit_grid(ec, res);
  EXPECT_LE(std::abs(fit.theta_hat[0] - mean), 0.01);
  EXPECT_EQ(fit.stop_reason, StopReason::exhaustive);
  EXPECT_GE(fit.gap_bound, 0.0);
}

TEST(FitGrid, AttainsMaximumOfAllEvaluatedPoints) {
  const ParametricFamily m = gaussian_location();
  Rng rng(5);
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, m.sample(m.truth(), 300, rng));
  const std::vector<std::size_t> res = {121};
  const auto fit = fit_grid(ec, res);
  const auto axes = grid_axes(m.box(), res);
  for (double t : axes[0]) EXPECT_LE(ec.evaluate(BoxPoint{t}), fit.m_n_value);
  EXPECT_EQ(ec.evaluate(fit.theta_hat), fit.m_n_value);
}

TEST(FitGrid, ConstantObjectiveTakesLexicographicallyFirstPoint) {
  const ParametricFamily m = flat_family(2);
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, {0.1, 0.7});
  const std::vector<std::size_t> res = {5, 4};
  const auto fit = fit_grid(ec, res);
  EXPECT_EQ(fit.theta_hat, (BoxPoint{-1.0, -1.0}));
  EXPECT_EQ(fit.iterations, 20u);
}

TEST(FitGrid, SingleObservationGivesNearestGridPoint) {
  const ParametricFamily m = gaussian_location();
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, {0.537});
  const auto fit = fit_grid(ec, resolution_for_step(m.box(), 0.01));
  EXPECT_NEAR(fit.theta_hat[0], 0.54, 1e-12);
}

TEST(FitGrid, ResolutionGuards) {
  const ParametricFamily m = gaussian_location();
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, {0.0});
  const std::vector<std::size_t> one = {1};
  EXPECT_THROW(fit_grid(ec, one), ArgumentError);
  const std::vector<std::size_t> huge = {10'000'001};
  EXPECT_THROW(fit_grid(ec, huge), ArgumentError);
  EXPECT_THROW(resolution_for_step(m.box(), 0.0), ArgumentError);
}

TEST(Em, SingleAtomConvergesInOneIteration) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 100, 6));
  const std::vector<double> grid = {0.5};
  const auto fit = fit_mixture_em(ec, grid);
  EXPECT_TRUE(fit.converged);
  EXPECT_EQ(fit.iterations, 1u);
  EXPECT_DOUBLE_EQ(fit.weights[0], 1.0);
  EXPECT_NEAR(fit.directional[0], 0.0, 1e-14);
}

TEST(Em, RejectsNonLogContrast) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::identity(), m, draw(m, 10, 1));
  const std::vector<double> grid = {0.0, 1.0};
  EXPECT_THROW(fit_mixture_em(ec, grid), AdmissibilityError);
}

TEST(Em, MatchesExhaustiveSimplexSearch) {
  const MixtureModel m = gaussian_mixture();
  const std::vector<double> z = {-1.5, 0.0, 1.5};
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto xs = draw(m, 50, seed);
    const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, xs);
    EmOptions o;
    o.tol = 1e-8;
    const auto fit = fit_mixture_em(ec, z, o);
    const double em = log_likelihood(m, xs, z, fit.weights);
    const double oracle = exhaustive_three_atom(m, xs, z);
    EXPECT_GE(em, oracle - 1e-12);
    EXPECT_NEAR(em, oracle, 1e-4);
    // The Lindsay bound covers every simplex point, including the oracle's.
    const GapCertificate cert = certify_gap(ec, fit, std::span<const MixingMeasure>());
    ASSERT_TRUE(cert.upper.has_value());
    EXPECT_LE(oracle - em, *cert.upper + 1e-12);
  }
}

TEST(Em, TwoAtomRecoveryAgainstSubgridOracle) {
  const MixtureModel m = gaussian_mixture(MixingMeasure({-1.5, 1.5}, {0.4, 0.6}));
  const auto xs = draw(m, 5000, 21);
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, xs);
  const auto fit = fit_mixture_em(ec, m.support_grid(201));
  const auto support = fit.theta_hat.pruned();
  EXPECT_LE(m.distance(support, m.truth()), 0.15);
  // Weight grid at 0.02 on the two true atoms.
  const std::vector<double> z = {-1.5, 1.5};
  double oracle = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 50; ++k) {
    const double w[2] = {k / 50.0, 1.0 - k / 50.0};
    oracle = std::max(oracle, log_likelihood(m, xs, z, w));
  }
  EXPECT_GE(log_likelihood(m, xs, fit.support, fit.weights), oracle - 1e-6);
}

TEST(Em, WeightsStayProbabilityAndTraceIsMonotone) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 500, 7));
  for (bool accelerate : {true, false}) {
    EmOptions o;
    o.accelerate = accelerate;
    // Plain EM is sublinear near the optimum; 1e-5 is out of its reach in 10⁴ steps.
    o.tol = accelerate ? 1e-5 : 1e-3;
    const auto fit = fit_mixture_em(ec, m.support_grid(61), o);
    EXPECT_NEAR(std::accumulate(fit.weights.begin(), fit.weights.end(), 0.0), 1.0, 1e-12);
    expect_monotone(fit.trace);
    expect_lindsay(fit, o.tol);
  }
}

TEST(Em, MaxIterStopIsReported) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 500, 7));
  EmOptions o;
  o.max_iter = 3;
  o.tol = 1e-12;
  const auto fit = fit_mixture_em(ec, m.support_grid(61), o);
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.stop_reason, StopReason::max_iter);
  EXPECT_EQ(fit.iterations, 3u);
}

TEST(Fw, AgreesWithEmOnStandardProblem) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 2000, 8));
  const auto grid = m.support_grid(201);
  EmOptions eo;
  eo.tol = 1e-6;
  FwOptions fo;
  fo.tol = 1e-6;
  const auto em = fit_mixture_em(ec, grid, eo);
  const auto fw = fit_mixture_fw(ec, grid, fo);
  EXPECT_NEAR(em.m_n_value, fw.m_n_value, 1e-6);
  expect_lindsay(em, eo.tol);
  expect_lindsay(fw, fo.tol);
  expect_monotone(fw.trace);
  EXPECT_LE(std::abs(1.0 - fw.theta_hat.mass()), 1e-6);
}

TEST(Fw, MatchesExhaustiveSimplexSearch) {
  const MixtureModel m = gaussian_mixture();
  const std::vector<double> z = {-1.5, 0.0, 1.5};
  const auto xs = draw(m, 50, 31);
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, xs);
  FwOptions o;
  o.tol = 1e-8;
  const auto fit = fit_mixture_fw(ec, z, o);
  std::vector<double> w = fit.weights;
  const double mass = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= mass;
  EXPECT_NEAR(log_likelihood(m, xs, z, w), exhaustive_three_atom(m, xs, z), 1e-4);
}

TEST(Fw, SingleAtomOptimumStopsImmediately) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 100, 9));
  const std::vector<double> grid = {1.0};
  const auto fit = fit_mixture_fw(ec, grid);
  EXPECT_TRUE(fit.converged);
  EXPECT_EQ(fit.iterations, 0u);
  EXPECT_EQ(fit.trace.size(), 1u);
}

TEST(Fw, QuadraticContrastAscends) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::identity(), m, draw(m, 400, 10));
  FwOptions o;
  o.tol = 1e-6;
  const auto fit = fit_mixture_fw(ec, m.support_grid(61), o);
  expect_monotone(fit.trace);
  EXPECT_GE(fit.gap_bound, 0.0);
  EXPECT_GT(fit.trace.back(), fit.trace.front());
  EXPECT_TRUE(fit.converged);
}

TEST(Fw, RejectsBoundedFamilyWithNonConvexPsi) {
  // Ψ(u) = u²/(1+u)² has Ψ'' < 0 for u > 1/2, so M_n is not concave in w.
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::inv_sq_1p(), m, draw(m, 10, 1));
  const std::vector<double> grid = {0.0, 1.0};
  EXPECT_THROW(fit_mixture_fw(ec, grid), AdmissibilityError);
}

TEST(Fw, RejectsNonConcaveFamily) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::inv_1p_sq(), m, draw(m, 10, 1));
  const std::vector<double> grid = {0.0, 1.0};
  EXPECT_THROW(fit_mixture_fw(ec, grid), AdmissibilityError);
}

TEST(Scaling, FittedMeasureBeatsItsScaledCopies) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 300, 14));
  const auto fit = fit_mixture_em(ec, m.support_grid(61));
  const double at_fit = ec.evaluate(fit.theta_hat);
  for (double alpha : {0.5, 0.9}) EXPECT_LT(ec.evaluate(fit.theta_hat.scaled(alpha)), at_fit);
}

TEST(CertifyGap, GridArgmaxDominatesGridProbes) {
  const ParametricFamily m = gaussian_location();
  Rng rng(15);
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, m.sample(m.truth(), 200, rng));
  const std::vector<std::size_t> res = {61};
  const auto fit = fit_grid(ec, res);
  std::vector<BoxPoint> probes;
  const auto axes = grid_axes(m.box(), res);
  for (double t : axes[0]) probes.push_back({t});
  EXPECT_EQ(certify_gap(ec, fit, std::span<const BoxPoint>(probes)).lower, 0.0);
  const std::vector<BoxPoint> self = {fit.theta_hat};
  const auto cert = certify_gap(ec, fit, std::span<const BoxPoint>(self));
  EXPECT_EQ(cert.lower, 0.0);
  EXPECT_FALSE(cert.upper.has_value());
}

TEST(CertifyGap, LowerBoundSeesABetterProbe) {
  const ParametricFamily m = gaussian_location();
  Rng rng(16);
  const EmpiricalContrast<ParametricFamily> ec(PhiContrast::log(), m, m.sample(m.truth(), 200, rng));
  FitResult<BoxPoint> bad;
  bad.theta_hat = {2.0};
  const std::vector<BoxPoint> probes = {{0.0}, {2.0}};
  const auto cert = certify_gap(ec, bad, std::span<const BoxPoint>(probes));
  EXPECT_NEAR(cert.lower, ec.evaluate({0.0}) - ec.evaluate({2.0}), 1e-15);
  EXPECT_GT(cert.lower, 1.0);
}

TEST(CertifyGap, LindsayUpperBoundAtConvergence) {
  const MixtureModel m = gaussian_mixture();
  const EmpiricalContrast<MixtureModel> ec(PhiContrast::log(), m, draw(m, 1000, 17));
  EmOptions o;
  o.tol = 1e-6;
  const auto fit = fit_mixture_em(ec, m.support_grid(121), o);
  ASSERT_TRUE(fit.converged);
  std::vector<MixingMeasure> probes = {m.truth(), MixingMeasure::dirac(0.0)};
  Rng rng(18);
  const auto grid = m.support_grid(121);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> w(grid.size());
    for (double& v : w) v = rng.uniform();
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= s;
    probes.emplace_back(grid, w);
  }
  const auto cert = certify_gap(ec, fit, std::span<const MixingMeasure>(probes));
  ASSERT_TRUE(cert.upper.has_value());
  EXPECT_LE(*cert.upper, 1e-6 * (1.0 + 1e-6));
  EXPECT_LE(cert.lower, *cert.upper + 1e-12);
  EXPECT_LE(fit.gap_bound, 1e-6 * (1.0 + 1e-6));
}
