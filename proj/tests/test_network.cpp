#include <gtest/gtest.h>

#include <cmath>

#include "despeckle/error.hpp"
#include "despeckle/loss.hpp"
#include "despeckle/network.hpp"
#include "support.hpp"

using namespace despeckle;
using testing_support::uniform_tensor;

namespace {

std::size_t enumerate_params(const Model<float>& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

// Puts running statistics in place so eval mode is usable.
template <typename T>
void warm_up(Model<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  Tape<T> tape(false);
  m.forward(tape, uniform_tensor<T>({2, 1, 16, 16}, rng, 0, 1), ops::NormMode::Train);
}

}  // namespace

TEST(Network, PresetGrid) {
  const auto& p = presets();
  ASSERT_EQ(p.size(), 8u);
  const std::vector<std::pair<int, int>> expected{{10, 32}, {10, 64}, {12, 32}, {12, 64},
                                                  {15, 32}, {15, 64}, {17, 32}, {17, 64}};
  const std::vector<std::string> names{"m1t", "m1l", "m2t", "m2l", "m3t", "m3l", "m4t", "m4l"};
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(p[i].name, names[i]);
    EXPECT_EQ(p[i].depth, expected[i].first);
    EXPECT_EQ(p[i].width, expected[i].second);
  }
  EXPECT_THROW(preset_config("m5t"), ConfigError);
}

TEST(Network, InnerLayerCount) {
  EXPECT_EQ(Model<float>(preset_config("m1t")).inner_layers(), 8u);
  EXPECT_EQ(Model<float>(preset_config("m4l")).inner_layers(), 15u);
}

TEST(Network, DepthBelowThreeThrows) {
  NetworkConfig c;
  c.depth = 2;
  EXPECT_THROW(Model<float>{c}, ConfigError);
}

TEST(Network, ParamCountHandValues) {
  // head 9 + 1, inner 9 + 1 + gamma + beta, tail 9 + 1
  EXPECT_EQ(param_count({3, 1, 3, 0}), 32u);
  EXPECT_EQ(param_count({10, 32, 3, 0}), 75105u);
}

TEST(Network, ParamCountMatchesEnumeration) {
  for (const auto& p : presets()) {
    const auto cfg = preset_config(p.name);
    EXPECT_EQ(param_count(cfg), enumerate_params(Model<float>(cfg))) << p.name;
  }
  EXPECT_EQ(enumerate_params(Model<float>({3, 1, 3, 0})), 32u);
}

TEST(Network, DoublingWidthGrowsBetweenTwoAndFour) {
  for (int d : {10, 12, 15, 17}) {
    const double ratio = double(param_count({d, 64, 3, 0})) / double(param_count({d, 32, 3, 0}));
    EXPECT_GT(ratio, 2.0);
    EXPECT_LT(ratio, 4.0);
  }
}

TEST(Network, ForwardPreservesShape) {
  Rng rng(1);
  const auto x = uniform_tensor<float>({1, 1, 64, 64}, rng, 0, 1);
  for (const auto& p : presets()) {
    Model<float> m(preset_config(p.name, 3));
    Tape<float> tape(false);
    EXPECT_EQ(m.forward(tape, x, ops::NormMode::Train).shape(), (Shape{1, 1, 64, 64})) << p.name;
    EXPECT_EQ(m.infer(x).shape(), (Shape{1, 1, 64, 64})) << p.name;
  }
}

TEST(Network, InitializationStatistics) {
  Model<double> m({10, 64, 3, 4});
  const auto params = m.parameters();
  const auto names = m.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto d = params[i].data();
    if (names[i].ends_with("bias") || names[i].ends_with("beta")) {
      for (double v : d) EXPECT_EQ(v, 0.0);
    } else if (names[i].ends_with("gamma")) {
      for (double v : d) EXPECT_EQ(v, 1.0);
    } else if (names[i] == "inner1.weight") {
      double s2 = 0;
      for (double v : d) s2 += v * v;
      EXPECT_NEAR(std::sqrt(s2 / d.size()), std::sqrt(2.0 / (9 * 64)), 0.01);
    }
  }
}

TEST(Network, SameSeedSameWeights) {
  Model<float> a({4, 8, 3, 11}), b({4, 8, 3, 11}), c({4, 8, 3, 12});
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  EXPECT_TRUE(std::equal(pa[0].data().begin(), pa[0].data().end(), pb[0].data().begin()));
  EXPECT_FALSE(std::equal(pa[0].data().begin(), pa[0].data().end(), pc[0].data().begin()));
}

TEST(Network, EvalBeforeTrainingThrows) {
  Model<float> m({4, 8, 3, 0});
  EXPECT_THROW(despeckle::despeckle(m, Tensor<float>({1, 1, 8, 8}, 0.5f)), StateError);
}

TEST(Network, DespeckleIsDeterministicAndNonnegative) {
  Model<float> m({5, 8, 3, 2});
  warm_up(m, 2);
  Rng rng(3);
  const auto x = uniform_tensor<float>({1, 1, 24, 20}, rng, 0, 2);
  const auto a = despeckle::despeckle(m, x), b = despeckle::despeckle(m, x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  for (float v : a.data()) EXPECT_GE(v, 0.0f);
  const auto z = despeckle::despeckle(m, Tensor<float>({1, 1, 16, 16}));
  for (float v : z.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Network, EvalOutputIndependentOfBatch) {
  Model<float> m({5, 8, 3, 5});
  warm_up(m, 5);
  Rng rng(6);
  const auto batch = uniform_tensor<float>({3, 1, 16, 16}, rng, 0, 1);
  const auto together = m.infer(batch);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<float> one(batch.data().begin() + k * 256, batch.data().begin() + (k + 1) * 256);
    const auto alone = m.infer(Tensor<float>({1, 1, 16, 16}, one));
    for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(alone.data()[i], together.data()[k * 256 + i]);
  }
}

TEST(Network, InitialGradientIsNonzero) {
  Model<float> m(preset_config("m1t", 7));
  Rng rng(8);
  const auto clean = uniform_tensor<float>({2, 1, 32, 32}, rng, 0.1, 1);
  const auto noisy = uniform_tensor<float>({2, 1, 32, 32}, rng, 0.1, 2);
  Tape<float> tape;
  auto loss = total_loss(tape, m.forward(tape, noisy, ops::NormMode::Train), clean, noisy, LossWeights{}, 1);
  backward(loss.total, tape);
  for (const auto& p : m.parameters()) {
    ASSERT_TRUE(p.has_grad());
    double mx = 0;
    for (float g : p.grad()) mx = std::max(mx, double(std::abs(g)));
    if (mx > 1e-12) return;
  }
  FAIL() << "all gradients vanish at initialization";
}

TEST(Network, CloneIsDeep) {
  Model<float> a({4, 8, 3, 1});
  Model<float> b = a.clone();
  b.parameters()[0].mutable_data()[0] += 1.0f;
  EXPECT_NE(a.parameters()[0].data()[0], b.parameters()[0].data()[0]);
}
