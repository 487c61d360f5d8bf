#include <gtest/gtest.h>

#include <cmath>

#include "despeckle/adam.hpp"
#include "despeckle/error.hpp"
#include "support.hpp"

using namespace despeckle;

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> p({3}, std::vector<double>{1, -2, 3});
  p.set_requires_grad(true);
  p.zero_grad();
  std::vector<Tensor<double>> params{p};
  auto st = make_adam_states(params, AdamHyper{});
  adam_step(params, st);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(st[0].t, 1u);
  EXPECT_FALSE(p.has_grad());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p({1}, 0.0);
  p.set_requires_grad(true);
  p.grad_buffer()[0] = 1.0;
  std::vector<Tensor<double>> params{p};
  AdamHyper h;
  h.lr = 0.1;
  auto st = make_adam_states(params, h);
  adam_step(params, st);
  EXPECT_NEAR(p.item(), -0.1, 1e-8);
}

TEST(Adam, MatchesScalarRecurrence) {
  Tensor<double> p({1}, 0.5);
  p.set_requires_grad(true);
  std::vector<Tensor<double>> params{p};
  AdamHyper h;
  h.lr = 0.01;
  auto st = make_adam_states(params, h);
  double x = 0.5, m = 0, v = 0;
  const double g = 0.7;
  for (int t = 1; t <= 2; ++t) {
    p.grad_buffer()[0] = g;
    adam_step(params, st);
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g * g;
    const double mh = m / (1 - std::pow(h.beta1, t)), vh = v / (1 - std::pow(h.beta2, t));
    x -= h.lr * mh / (std::sqrt(vh) + h.eps);
    EXPECT_NEAR(p.item(), x, 1e-12);
  }
}

TEST(Adam, ZeroLearningRateIsBitwiseNoOp) {
  Rng rng(3);
  auto p = testing_support::uniform_tensor<double>({20}, rng, -1, 1);
  p.set_requires_grad(true);
  const std::vector<double> before(p.data().begin(), p.data().end());
  std::vector<Tensor<double>> params{p};
  AdamHyper h;
  h.lr = 0.0;
  auto st = make_adam_states(params, h);
  for (int i = 0; i < 3; ++i) {
    for (auto& g : p.grad_buffer()) g = rng.normal();
    adam_step(params, st);
  }
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), before);
}

TEST(Adam, MissingGradientThrowsBeforeUpdating) {
  Tensor<double> a({1}, 1.0), b({1}, 2.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.grad_buffer()[0] = 1.0;
  std::vector<Tensor<double>> params{a, b};
  auto st = make_adam_states(params, AdamHyper{});
  EXPECT_THROW(adam_step(params, st), StateError);
  EXPECT_EQ(a.item(), 1.0);
}
