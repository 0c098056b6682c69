#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "d2c/theory.hpp"

namespace {

using namespace d2c;
using namespace d2c::theory;

const std::string kFixtures = D2C_FIXTURE_DIR;

TEST(UniformVariance, ClosedForms) {
  EXPECT_DOUBLE_EQ(uniform_variance(4, 1.0, 0.0), 0.25);
  EXPECT_DOUBLE_EQ(uniform_variance(5, 1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(uniform_variance(3, 2.0, 0.5), 1.0);
}

TEST(UniformVariance, MonotoneInK) {
  for (double c : {0.0, 0.3, 0.9}) {
    double prev = uniform_variance(1, 1.0, c);
    for (std::size_t k = 2; k < 40; ++k) {
      const double v = uniform_variance(k, 1.0, c);
      EXPECT_LE(v, prev + 1e-15);
      prev = v;
    }
  }
  for (std::size_t k = 1; k < 10; ++k) EXPECT_DOUBLE_EQ(uniform_variance(k, 1.5, 1.5), 1.5);
}

TEST(WeightedVariance, ReducesToUniformAndSelection) {
  for (std::size_t k : {2u, 3u, 7u}) {
    const std::vector<double> uni(k, 1.0 / static_cast<double>(k));
    EXPECT_NEAR(weighted_variance(uni, 1.3, 0.4), uniform_variance(k, 1.3, 0.4), 1e-15);
  }
  EXPECT_EQ(weighted_variance(std::vector<double>{1.0, 0.0, 0.0}, 2.5, 0.7), 2.5);
  EXPECT_NEAR(weighted_variance(std::vector<double>{0.5, 0.3, 0.2}, 1.0, 0.0), 0.38, 1e-15);
}

TEST(WeightedVariance, NonUniformExceedsUniformWithoutCorrelation) {
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(5);
    double s = 0.0;
    for (double& v : a) s += v = uni(rng);
    for (double& v : a) v /= s;
    EXPECT_GE(weighted_variance(a, 1.0, 0.0), uniform_variance(5, 1.0, 0.0) - 1e-15);
  }
}

TEST(McVariance, UncorrelatedLimit) {
  for (std::size_t k : {2u, 4u, 8u}) {
    const auto est = mc_variance_uniform(CorrelatedErrorSpec{k, 1.0, 0.0, 200000, 11});
    EXPECT_DOUBLE_EQ(est.theoretical, 1.0 / static_cast<double>(k));
    EXPECT_NEAR(est.estimated, est.theoretical, 0.01);
    EXPECT_TRUE(est.pass());
  }
}

TEST(McVariance, CorrelatedCases) {
  const auto full = mc_variance_uniform(CorrelatedErrorSpec{5, 1.0, 1.0, 200000, 12});
  EXPECT_EQ(full.theoretical, 1.0);
  EXPECT_NEAR(full.estimated, 1.0, 0.02);
  const auto partial = mc_variance_uniform(CorrelatedErrorSpec{3, 2.0, 0.5, 200000, 13});
  EXPECT_DOUBLE_EQ(partial.theoretical, 1.0);
  EXPECT_NEAR(partial.estimated, 1.0, 0.02);
  const auto negative = mc_variance_uniform(CorrelatedErrorSpec{3, 1.0, -0.5, 200000, 14});
  EXPECT_NEAR(negative.theoretical, 0.0, 1e-15);
  EXPECT_NEAR(negative.estimated, 0.0, 1e-12);
}

TEST(McVariance, WeightedCase) {
  const std::vector<double> alpha{0.5, 0.3, 0.2};
  const auto est = mc_variance_weighted(alpha, CorrelatedErrorSpec{3, 1.0, 0.0, 200000, 15});
  EXPECT_DOUBLE_EQ(est.theoretical, 0.38);
  EXPECT_NEAR(est.estimated, 0.38, 0.01);
  EXPECT_TRUE(est.pass());
}

TEST(McVariance, ThreadCountDoesNotChangeTheEstimate) {
  const CorrelatedErrorSpec spec{4, 1.0, 0.2, 50000, 21};
  const auto a = mc_variance_uniform(spec);
  setenv("D2C_THREADS", "3", 1);
  const auto b = mc_variance_uniform(spec);
  unsetenv("D2C_THREADS");
  EXPECT_EQ(a.estimated, b.estimated);
}

TEST(McVariance, RejectsInvalidSpecs) {
  EXPECT_THROW(mc_variance_uniform(CorrelatedErrorSpec{3, 1.0, -1.0}), InvalidArgument);
  EXPECT_THROW(mc_variance_uniform(CorrelatedErrorSpec{3, 1.0, 1.5}), InvalidArgument);
  EXPECT_THROW(mc_variance_uniform(CorrelatedErrorSpec{3, 0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(mc_variance_weighted(std::vector<double>{0.5, 0.5}, CorrelatedErrorSpec{3, 1.0, 0.0}),
               InvalidArgument);
  EXPECT_THROW(mc_variance_weighted(std::vector<double>{0.5, 0.6, -0.1}, CorrelatedErrorSpec{3, 1.0, 0.0}),
               InvalidArgument);
}

TEST(HeterogeneousEdges, TiltedWeightsBeatUniform) {
  // Two good edges, two noisy ones; weights from the confidence/accuracy rule favour the good pair.
  const std::vector<double> variances{0.2, 0.2, 2.0, 2.0};
  WeightingConfig cfg;
  cfg.num_classes = 2;
  const auto w = uncertainty_weights(std::vector<double>{0.9, 0.9, 0.6, 0.6}, std::vector<double>{0.2, 0.2, 0.6, 0.6},
                                     cfg);
  const auto tilted = mc_variance_heterogeneous(w.alpha, variances, 200000, 4);
  const auto flat = mc_variance_heterogeneous(uniform_weights(4), variances, 200000, 5);
  EXPECT_LT(tilted.theoretical, flat.theoretical);
  EXPECT_TRUE(tilted.pass());
  EXPECT_TRUE(flat.pass());
  EXPECT_LT(tilted.estimated, flat.estimated);
}

TEST(LinearEquivalence, SingleModelAndRandomPairs) {
  Rng rng = make_rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix probes(100, 5);
  for (double& v : probes.data()) v = g(rng);
  const LinearModel one{{1.0, -2.0, 0.5, 3.0, -1.0}, 0.3};
  EXPECT_EQ(linear_average_equivalence(std::vector<LinearModel>{one}, std::vector<double>{1.0}, probes), 0.0);
  for (int t = 0; t < 20; ++t) {
    std::vector<LinearModel> models(2, LinearModel{std::vector<double>(5), 0.0});
    for (auto& m : models) {
      for (double& w : m.weights) w = g(rng);
      m.bias = g(rng);
    }
    EXPECT_LE(linear_average_equivalence(models, std::vector<double>{0.5, 0.5}, probes), 1e-10);
    EXPECT_LE(linear_average_equivalence(models, std::vector<double>{0.3, 0.7}, probes), 1e-10);
  }
}

TEST(LinearEquivalence, MlpCounterTestOnTrainedPair) {
  const std::vector<ParamVector> pair{load_pv(kFixtures + "/mlp_edge_a.pv"), load_pv(kFixtures + "/mlp_edge_b.pv")};
  const MLPConfig cfg{{2, 16, 2}};
  Rng rng = make_rng(9);
  std::normal_distribution<double> g(0.0, 2.0);
  Matrix probes(100, 2);
  for (double& v : probes.data()) v = g(rng);
  EXPECT_GT(mlp_average_deviation(pair, std::vector<double>{0.5, 0.5}, cfg, probes), 1e-3);
}

TEST(NoiseDecomposition, NoiseFreeIsExact) {
  const LinearModel truth{{1.0, 2.0}, 0.5};
  const LinearModel fitted{{0.8, 2.1}, 0.4};
  const auto d = mse_noise_decomposition(NoiseSpec{0.0, 1000, 1}, truth, fitted);
  EXPECT_EQ(d.observed, d.decomposed);
}

TEST(NoiseDecomposition, PerfectAndBiasedFits) {
  const LinearModel truth{{1.0, -1.0, 0.5}, 0.2};
  const auto exact = mse_noise_decomposition(NoiseSpec{0.5, 100000, 2}, truth, truth);
  EXPECT_NEAR(exact.decomposed, 0.25, 1e-15);
  EXPECT_NEAR(exact.observed, 0.25, 0.01);
  const LinearModel biased{{1.2, -1.0, 0.5}, 0.5};
  const auto off = mse_noise_decomposition(NoiseSpec{0.5, 100000, 3}, truth, biased);
  EXPECT_NEAR(off.observed, off.decomposed, 0.01);
  EXPECT_GT(off.observed, 0.25);
  EXPECT_GT(off.decomposed, 0.25);
}

TEST(TrainingDecomposition, HatTraceExplainsTheOptimism) {
  const LinearModel truth{{0.7, -1.1, 2.0}, 0.3};
  const auto d = ols_training_decomposition(truth, 30, 0.5, 300, 6);
  EXPECT_NEAR(d.hat_trace, 4.0, 1e-9);  // p = d + 1 parameters
  EXPECT_NEAR(d.observed, d.decomposed, 0.01);
  EXPECT_LT(d.observed, 0.25);  // training error understates sigma^2
}

TEST(Identities, HandCases) {
  const auto constant = variance_identities_check(std::vector<double>(10, 3.25));
  EXPECT_EQ(constant.var_central, 0.0);
  EXPECT_NEAR(constant.var_moments, 0.0, 1e-12);
  const auto small = variance_identities_check(std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(small.var_central, 1.25);
  EXPECT_DOUBLE_EQ(small.var_moments, 1.25);
  EXPECT_THROW(variance_identities_check(std::vector<double>{1.0}), InvalidArgument);
}

TEST(Identities, RandomFixturesHoldToRelativeTolerance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {1});
    std::normal_distribution<double> g(static_cast<double>(seed) - 10.0, 1.0 + static_cast<double>(seed));
    std::vector<double> x(1000);
    for (double& v : x) v = g(rng);
    const auto r = variance_identities_check(x, 2.0, -3.0);
    EXPECT_TRUE(r.pass(1e-9)) << r.var_rel_error << " " << r.cov_rel_error << " " << r.combo_rel_error;
  }
}

}  // namespace
