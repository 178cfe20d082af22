#include <gtest/gtest.h>

#include <cmath>

#include "tapid/adam.hpp"
#include "tapid/errors.hpp"

using namespace tapid;

TEST(Adam, SingleStepByHand) {
  std::vector<double> w{1.0};
  const std::vector<double> g{2.0};
  AdamMoments<double> state(1);
  adam_step<double>(w, g, state, 1e-3, 1);
  EXPECT_NEAR(state.m[0], 0.2, 1e-15);
  EXPECT_NEAR(state.v[0], 0.004, 1e-15);
  // m_hat = 2, v_hat = 4
  EXPECT_NEAR(w[0], 1.0 - 0.001 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_NEAR(w[0], 0.999, 1e-9);
}

TEST(Adam, FloatVariantAgrees) {
  std::vector<float> w{1.0f, -0.5f, 3.0f};
  const std::vector<float> g{2.0f, -1.0f, 0.25f};
  AdamMoments<float> state(3);
  adam_step<float>(w, g, state, 1e-3, 1);
  EXPECT_NEAR(w[0], 0.999f, 1e-6f);
  EXPECT_NEAR(w[1], -0.499f, 1e-6f);
  EXPECT_NEAR(w[2], 2.999f, 1e-6f);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  std::vector<double> w{0.3, -2.0, 7.0};
  const auto start = w;
  const std::vector<double> g(3, 0.0);
  AdamMoments<double> state(3);
  for (std::uint64_t t = 1; t <= 100; ++t) adam_step<double>(w, g, state, 1e-2, t);
  EXPECT_EQ(w, start);
}

TEST(Adam, IdenticalGradientsEvolveIdentically) {
  std::vector<double> w{0.5, 0.5};
  AdamMoments<double> state(2);
  for (std::uint64_t t = 1; t <= 50; ++t) {
    const double g = std::sin(0.3 * static_cast<double>(t)) + 0.1 * (w[0] - 1.0);
    const std::vector<double> grads{g, g};
    adam_step<double>(w, grads, state, 1e-2, t);
    EXPECT_EQ(w[0], w[1]);
  }
}

TEST(Adam, MatchesReferenceRecurrence) {
  std::vector<double> w{1.0, -1.0};
  AdamMoments<double> state(2);
  double rw[2] = {1.0, -1.0}, rm[2] = {0, 0}, rv[2] = {0, 0};
  for (std::uint64_t t = 1; t <= 20; ++t) {
    const std::vector<double> g{std::cos(static_cast<double>(t)), 0.5 * static_cast<double>(t)};
    adam_step<double>(w, g, state, 1e-2, t);
    for (int i = 0; i < 2; ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * g[i];
      rv[i] = 0.999 * rv[i] + 0.001 * g[i] * g[i];
      const double mh = rm[i] / (1 - std::pow(0.9, static_cast<double>(t)));
      const double vh = rv[i] / (1 - std::pow(0.999, static_cast<double>(t)));
      rw[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w[i], rw[i], 1e-12);
    }
  }
}

TEST(Adam, RejectsStepZero) {
  std::vector<double> w{1.0};
  const std::vector<double> g{1.0};
  AdamMoments<double> state(1);
  EXPECT_THROW(adam_step<double>(w, g, state, 1e-3, 0), InvalidInput);
}

TEST(Adam, OptimizerMinimizesQuadratic) {
  std::vector<NamedTensor<double>> w{{"x", Tensor<double>({2}, std::vector<double>{3.0, -4.0})}};
  AdamOptimizer<double> opt(w, 0.1);
  for (int i = 0; i < 500; ++i) {
    std::vector<NamedTensor<double>> g{{"x", Tensor<double>({2}, std::vector<double>{2 * w[0].tensor.data[0], 2 * w[0].tensor.data[1]})}};
    opt.step(w, g);
  }
  EXPECT_EQ(opt.steps(), 500u);
  EXPECT_NEAR(w[0].tensor.data[0], 0.0, 1e-2);
  EXPECT_NEAR(w[0].tensor.data[1], 0.0, 1e-2);
}
