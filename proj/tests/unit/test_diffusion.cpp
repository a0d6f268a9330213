// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dcsst/diffusion.hpp"
#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"
#include "test_util.hpp"

namespace dcsst {
namespace {

using testing::bit_equal;

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const Tensor& t) {
  Moments m;
  for (double v : t.data()) m.mean += v;
  m.mean /= static_cast<double>(t.numel());
  for (double v : t.data()) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(t.numel() - 1);
  return m;
}

TEST(NoiseSchedule, LinearEndpointsAndSpacing) {
  const NoiseSchedule s = NoiseSchedule::linear(5, 0.1, 0.5);
  const double expected[5] = {0.1, 0.2, 0.3, 0.4, 0.5};
  for (std::size_t t = 1; t <= 5; ++t) EXPECT_NEAR(s.beta(t), expected[t - 1], 1e-15);
}

TEST(NoiseSchedule, AlphaBarIsRunningProduct) {
  const NoiseSchedule s = NoiseSchedule::linear(50);
  double prod = 1.0;
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (std::size_t t = 1; t <= 50; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * static_cast<double>(t - 1) / 49.0);
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-14);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
}

TEST(NoiseSchedule, RejectsInvalidBetas) {
  EXPECT_THROW(NoiseSchedule({0.1, 1.0}), ConfigError);
  EXPECT_THROW(NoiseSchedule({-0.01}), ConfigError);
  EXPECT_THROW(NoiseSchedule(std::vector<double>{}), ConfigError);
  EXPECT_NO_THROW(NoiseSchedule({0.0, 0.0}));
  const NoiseSchedule s = NoiseSchedule::linear(3);
  EXPECT_THROW(s.beta(0), ConfigError);
  EXPECT_THROW(s.alpha_bar(4), ConfigError);
}

// Monte Carlo at 1e4 samples, 3 standard errors on mean and variance.
TEST(ForwardDiffuse, ClosedFormMoments) {
  const NoiseSchedule s = NoiseSchedule::linear(50);
  const std::size_t N = 10000;
  const double x0 = 0.7;
  Rng rng(1);
  for (std::size_t t : {1u, 10u, 50u}) {
    const Moments m = moments(forward_diffuse(Tensor::full({N}, x0), t, s, rng));
    const double ab = s.alpha_bar(t), var = 1.0 - ab;
    EXPECT_NEAR(m.mean, std::sqrt(ab) * x0, 3.0 * std::sqrt(var / N)) << "t=" << t;
    EXPECT_NEAR(m.var, var, 3.0 * var * std::sqrt(2.0 / (N - 1))) << "t=" << t;
  }
}

TEST(SampleChain, MatchesClosedFormMoments) {
  const NoiseSchedule s = NoiseSchedule::linear(50);
  const std::size_t N = 10000;
  const double x0 = -1.3;
  Rng rng(2);
  for (std::size_t t : {1u, 7u, 50u}) {
    const Moments m = moments(sample_chain(Tensor::full({N}, x0), t, s, rng));
    const double ab = s.alpha_bar(t), var = 1.0 - ab;
    EXPECT_NEAR(m.mean, std::sqrt(ab) * x0, 3.0 * std::sqrt(var / N)) << "t=" << t;
    EXPECT_NEAR(m.var, var, 3.0 * var * std::sqrt(2.0 / (N - 1))) << "t=" << t;
  }
}

TEST(ForwardDiffuse, FirstStepMean) {
  const NoiseSchedule s = NoiseSchedule::linear(10);
  Rng rng(3);
  const Tensor x0 = Tensor::randn({2000}, rng);
  Tensor acc = Tensor::zeros({2000});
  const int reps = 50;
  for (int r = 0; r < reps; ++r) acc = add(acc, forward_diffuse(x0, 1, s, rng));
  const double a = std::sqrt(s.alpha(1)), se = std::sqrt(s.beta(1) / reps);
  double worst = 0.0;
  for (std::size_t i = 0; i < 2000; ++i) worst = std::max(worst, std::abs(acc[i] / reps - a * x0[i]));
  EXPECT_LT(worst, 5.0 * se);
}

TEST(ForwardDiffuse, NoiselessScheduleIsIdentity) {
  const NoiseSchedule s = NoiseSchedule::noiseless(5);
  Rng rng(4);
  const Tensor x0 = Tensor::randn({3, 4}, rng);
  EXPECT_TRUE(bit_equal(forward_diffuse(x0, 5, s, rng), x0));
  EXPECT_TRUE(bit_equal(sample_chain(x0, 5, s, rng), x0));
  const std::vector<std::size_t> ts{1, 5, 3};
  EXPECT_TRUE(bit_equal(forward_diffuse(x0, ts, s, rng), x0));
}

TEST(ForwardDiffuse, PerSampleStepsAndErrors) {
  const NoiseSchedule s = NoiseSchedule::linear(10);
  Rng rng(5);
  const Tensor x0 = Tensor::ones({2, 3});
  const std::vector<std::size_t> two{1, 2}, bad{0, 1}, short_ts{1};
  EXPECT_EQ(forward_diffuse(x0, two, s, rng).shape(), x0.shape());
  EXPECT_THROW(forward_diffuse(x0, bad, s, rng), ConfigError);
  EXPECT_THROW(forward_diffuse(x0, short_ts, s, rng), DimensionError);
  EXPECT_THROW(forward_diffuse(x0, 11, s, rng), ConfigError);
}

TEST(ConsistencyLoss, ZeroWithoutNoiseAndPositiveWithIt) {
  Rng rng(6);
  const Tensor w = Tensor::randn({5, 3}, rng);
  const Classifier f = [&](const Tensor& x) { return matmul(x, w); };
  const Tensor x = Tensor::randn({4, 5}, rng);
  EXPECT_NEAR(consistency_loss(f, x, NoiseSchedule::noiseless(10), 10, rng).item(), 0.0, 1e-15);
  EXPECT_GT(consistency_loss(f, x, NoiseSchedule::linear(10, 0.1, 0.5), 10, rng).item(), 0.0);
  EXPECT_THROW(consistency_loss(f, x, NoiseSchedule::linear(10), 11, rng), ConfigError);
}

}  // namespace
}  // namespace dcsst
