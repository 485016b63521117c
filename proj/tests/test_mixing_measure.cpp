#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mest/error.hpp"
#include "mest/mixing_measure.hpp"
#include "mest/rng.hpp"

using namespace mest;

namespace {

// W₁ through quantile functions: ∫_0^1 |F⁻¹(p) - G⁻¹(p)| dp, walking both
// cumulative weight sequences.
double quantile_w1(const MixingMeasure& mu, const MixingMeasure& nu) {
  const auto a = mu.atoms();
  const auto b = nu.atoms();
  const auto wa = mu.weights();
  const auto wb = nu.weights();
  std::size_t i = 0;
  std::size_t j = 0;
  double ra = wa.empty() ? 0.0 : wa[0];
  double rb = wb.empty() ? 0.0 : wb[0];
  double total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(ra, rb);
    total += m * std::abs(a[i] - b[j]);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15 && ++i < a.size()) ra = wa[i];
    if (rb <= 1e-15 && ++j < b.size()) rb = wb[j];
  }
  return total;
}

MixingMeasure random_probability(Rng& rng, int max_atoms = 5) {
  const int k = 1 + static_cast<int>(rng.uniform() * max_atoms);
  std::vector<std::pair<double, double>> pairs;
  double s = 0.0;
  for (int j = 0; j < k; ++j) {
    const double w = 0.05 + rng.uniform();
    pairs.emplace_back(-3.0 + 6.0 * rng.uniform(), w);
    s += w;
  }
  for (auto& p : pairs) p.second /= s;
  MixingMeasure m = MixingMeasure::from_pairs(pairs);
  return m.normalized();
}

}  // namespace

TEST(MixingMeasure, ConstructionInvariants) {
  EXPECT_THROW(MixingMeasure({0.0, 1.0}, {0.5}), ArgumentError);
  EXPECT_THROW(MixingMeasure({1.0, 0.0}, {0.5, 0.5}), ArgumentError);
  EXPECT_THROW(MixingMeasure({0.0, 0.0}, {0.5, 0.5}), ArgumentError);
  EXPECT_THROW(MixingMeasure({0.0}, {-0.1}), ArgumentError);
  EXPECT_THROW(MixingMeasure({0.0, 1.0}, {0.6, 0.5}), ArgumentError);
  EXPECT_NO_THROW(MixingMeasure({0.0, 1.0}, {0.5, 0.5 + 5e-13}));
  EXPECT_TRUE(MixingMeasure({0.0, 1.0}, {0.3, 0.7}).is_probability());
  EXPECT_FALSE(MixingMeasure({0.0, 1.0}, {0.3, 0.6}).is_probability());
  EXPECT_TRUE(MixingMeasure::null().is_null());
}

TEST(MixingMeasure, FromPairsSortsAndMerges) {
  const auto m = MixingMeasure::from_pairs({{1.0, 0.2}, {-1.0, 0.3}, {1.0 + 1e-12, 0.1}});
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.atoms()[0], -1.0);
  EXPECT_NEAR(m.weights()[1], 0.3, 1e-15);
}

TEST(MixingMeasure, ScaleNormalizePrune) {
  const MixingMeasure m({-1.0, 0.0, 2.0}, {0.25, 0.0, 0.75});
  EXPECT_NEAR(m.scaled(0.4).mass(), 0.4, 1e-15);
  EXPECT_TRUE(m.scaled(0.4).normalized().is_probability());
  EXPECT_EQ(m.pruned().size(), 2u);
  EXPECT_THROW(MixingMeasure::null().normalized(), ArgumentError);
}

TEST(Contraction, WorkedExamples) {
  const MixingMeasure star({-1.0, 1.0}, {0.3, 0.7});
  EXPECT_EQ(contraction(star, star, 0.37), star);

  const auto half = contraction(MixingMeasure::dirac(0.0), MixingMeasure::dirac(2.0), 0.5);
  EXPECT_EQ(half, MixingMeasure({0.0, 2.0}, {0.5, 0.5}));

  const std::vector<double> t{0.0, 0.0};
  const std::vector<double> s{1.0, 2.0};
  // λθ* + (1-λ)θ with θ = 0, θ* = (1, 2): the pull is λ toward θ*.
  const auto box = contraction(std::span<const double>(t), std::span<const double>(s), 0.25);
  EXPECT_DOUBLE_EQ(box[0], 0.25);
  EXPECT_DOUBLE_EQ(box[1], 0.5);
}

TEST(Contraction, RejectsLambdaOutsideOpenInterval) {
  const auto d = MixingMeasure::dirac(0.0);
  for (double lambda : {0.0, 1.0, -0.5, 1.5}) {
    EXPECT_THROW(contraction(d, d, lambda), ArgumentError);
  }
  const std::vector<double> a{0.0};
  const std::vector<double> b{0.0, 1.0};
  EXPECT_THROW(contraction(std::span<const double>(a), std::span<const double>(b), 0.5), ArgumentError);
}

TEST(Contraction, PreservesMassBoundOnSubProbabilities) {
  const MixingMeasure theta({-2.0, 0.5}, {0.1, 0.3});
  const MixingMeasure star({-1.0, 1.0}, {0.3, 0.7});
  for (double lambda : {0.1, 0.5, 0.9}) {
    const auto c = contraction(theta, star, lambda);
    EXPECT_NEAR(c.mass(), lambda * 1.0 + (1 - lambda) * 0.4, 1e-15);
    EXPECT_EQ(c.size(), 4u);
  }
}

TEST(Contraction, IsAffineUnderComposition) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const MixingMeasure theta = random_probability(rng);
    const MixingMeasure star = random_probability(rng);
    const double lambda = 0.05 + 0.9 * rng.uniform();
    const double mu = 0.05 + 0.9 * rng.uniform();
    const auto twice = contraction(contraction(theta, star, lambda), star, mu);
    const auto once = contraction(theta, star, lambda + mu - lambda * mu);
    ASSERT_EQ(twice.size(), once.size());
    for (std::size_t j = 0; j < once.size(); ++j) {
      EXPECT_EQ(twice.atoms()[j], once.atoms()[j]);
      EXPECT_NEAR(twice.weights()[j], once.weights()[j], 1e-12);
    }
  }
}

TEST(Contraction, FixedPointOnlyAtTruth) {
  Rng rng(17);
  const MixingMeasure star({-1.0, 1.0}, {0.3, 0.7});
  for (int trial = 0; trial < 100; ++trial) {
    const MixingMeasure theta = random_probability(rng);
    const double lambda = 0.01 + 0.98 * rng.uniform();
    EXPECT_EQ(contraction(star, star, lambda), star);
    EXPECT_NE(contraction(theta, star, lambda).pruned(), theta) << trial;
  }
}

TEST(Wasserstein1, WorkedExamples) {
  const auto d0 = MixingMeasure::dirac(0.0);
  EXPECT_EQ(wasserstein1(d0, d0), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein1(d0, MixingMeasure::dirac(1.0)), 1.0);
  EXPECT_DOUBLE_EQ(wasserstein1(MixingMeasure({0.0, 1.0}, {0.5, 0.5}), d0), 0.5);
  EXPECT_THROW(wasserstein1(MixingMeasure::dirac(0.0, 0.5), d0), ArgumentError);
}

TEST(Wasserstein1, AgreesWithQuantileRoute) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_probability(rng);
    const auto b = random_probability(rng);
    EXPECT_NEAR(wasserstein1(a, b), quantile_w1(a, b), 1e-12);
  }
}

TEST(Wasserstein1, IsAMetric) {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_probability(rng);
    const auto b = random_probability(rng);
    const auto c = random_probability(rng);
    EXPECT_EQ(wasserstein1(a, b), wasserstein1(b, a));
    EXPECT_LE(wasserstein1(a, c), wasserstein1(a, b) + wasserstein1(b, c) + 1e-12);
    EXPECT_LE(wasserstein1(a, a), 1e-12);
    if (!(a == b)) EXPECT_GT(wasserstein1(a, b), 1e-12);
  }
}
