#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "despeckle/error.hpp"
#include "despeckle/metrics.hpp"
#include "despeckle/speckle.hpp"
#include "support.hpp"

using namespace despeckle;

namespace {

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

// Gamma(L, L) CDF by cumulative trapezoid integration of the density on a fine grid.
class CdfTable {
 public:
  explicit CdfTable(int L) : cdf_(kSteps + 1, 0.0) {
    auto pdf = [L](double n) {
      if (n <= 0) return L == 1 ? 1.0 : 0.0;
      return std::exp(L * std::log(double(L)) + (L - 1) * std::log(n) - L * n - std::lgamma(double(L)));
    };
    double prev = pdf(0.0);
    for (std::size_t i = 1; i <= kSteps; ++i) {
      const double cur = pdf(i * kStep);
      cdf_[i] = cdf_[i - 1] + 0.5 * kStep * (prev + cur);
      prev = cur;
    }
  }
  double operator()(double n) const {
    if (n >= kStep * kSteps) return 1.0;
    const double pos = n / kStep;
    const auto i = static_cast<std::size_t>(pos);
    return cdf_[i] + (pos - i) * (cdf_[i + 1] - cdf_[i]);
  }

 private:
  static constexpr double kStep = 1e-4;
  static constexpr std::size_t kSteps = 300000;
  std::vector<double> cdf_;
};

double ks_statistic(std::vector<double> v, const std::function<double(double)>& cdf) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = cdf(v[i]);
    d = std::max({d, std::abs((i + 1) / n - f), std::abs(f - i / n)});
  }
  return d;
}

}  // namespace

TEST(Speckle, OneLookMoments) {
  std::vector<double> v(1000000);
  fill_speckle(v, 1, 42);
  const auto m = moments(v);
  EXPECT_NEAR(m.mean, 1.0, 0.003);
  EXPECT_NEAR(m.var, 1.0, 0.01);
  for (double x : v) ASSERT_GT(x, 0.0);
}

TEST(Speckle, OneLookMatchesExponential) {
  std::vector<double> v(1000000);
  fill_speckle(v, 1, 43);
  EXPECT_LT(ks_statistic(v, [](double n) { return 1.0 - std::exp(-n); }), 0.002);
}

TEST(Speckle, FourLookVarianceAndDistribution) {
  std::vector<double> v(1000000);
  fill_speckle(v, 4, 44);
  EXPECT_NEAR(moments(v).var, 0.25, 0.25 * 0.02);
  const CdfTable cdf(4);
  EXPECT_LT(ks_statistic(v, [&](double n) { return cdf(n); }), 0.002);
}

TEST(Speckle, ClosedFormCdfMatchesIntegratedDensity) {
  for (int L : {1, 2, 4, 7}) {
    const CdfTable cdf(L);
    for (double n : {0.05, 0.3, 0.9, 1.0, 1.7, 3.2, 6.0}) EXPECT_NEAR(speckle_cdf(n, L), cdf(n), 1e-7);
  }
}

TEST(Speckle, SameSeedSameField) {
  auto a = sample_speckle<float>({1, 1, 32, 32}, 2, 9);
  auto b = sample_speckle<float>({1, 1, 32, 32}, 2, 9);
  auto c = sample_speckle<float>({1, 1, 32, 32}, 2, 10);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Speckle, InvalidLooksThrows) {
  EXPECT_THROW(sample_speckle<double>({4}, 0, 1), DomainError);
}

TEST(Speckle, EnlOfPureSpeckleField) {
  for (int L : {1, 4}) {
    auto n = sample_speckle<double>({1, 1, 256, 256}, L, 100 + L);
    const double e = metrics::enl(n.data());
    EXPECT_GE(e, 0.9 * L);
    EXPECT_LE(e, 1.1 * L);
  }
}

TEST(Corrupt, ZeroCleanGivesZeroNoisy) {
  auto p = corrupt(Tensor<double>({1, 1, 8, 8}), 1, 5);
  for (double v : p.noisy.data()) EXPECT_EQ(v, 0.0);
}

TEST(Corrupt, UnitCleanGivesSpeckleField) {
  auto p = corrupt(Tensor<float>({1, 1, 8, 8}, 1.0f), 1, 6);
  EXPECT_TRUE(std::equal(p.noisy.data().begin(), p.noisy.data().end(), p.noise.data().begin()));
  EXPECT_EQ(p.looks, 1);
}

TEST(Corrupt, RatioRecoversNoise) {
  Rng rng(7);
  auto clean = testing_support::uniform_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);
  auto p = corrupt(clean, 3, 8);
  for (std::size_t i = 0; i < clean.numel(); ++i) {
    if (clean.data()[i] <= 0) continue;
    const float r = p.noisy.data()[i] / clean.data()[i];
    EXPECT_NEAR(r, p.noise.data()[i], 4 * std::numeric_limits<float>::epsilon() * p.noise.data()[i]);
  }
}

TEST(Corrupt, NegativeCleanThrows) {
  EXPECT_THROW(corrupt(Tensor<double>({2}, -1.0), 1, 1), DomainError);
}
