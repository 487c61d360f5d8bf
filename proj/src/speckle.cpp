#include "despeckle/speckle.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "despeckle/error.hpp"
#include "despeckle/random.hpp"

namespace despeckle {
namespace {
void check_looks(int looks) {
  if (looks < 1)
    throw DomainError("number of looks must be an integer >= 1, got " + std::to_string(looks));
}
}  // namespace

double speckle_pdf(double n, int looks) {
  check_looks(looks);
  if (n < 0.0) return 0.0;
  if (n == 0.0) return looks == 1 ? 1.0 : 0.0;
  const double L = looks;
  return std::exp(L * std::log(L) + (L - 1.0) * std::log(n) - L * n - std::lgamma(L));
}

double speckle_cdf(double n, int looks) {
  check_looks(looks);
  if (n <= 0.0) return 0.0;
  const double z = looks * n;
  // 1 - e^{-z} * sum_{k<L} z^k / k!
  double term = 1.0, acc = 1.0;
  for (int k = 1; k < looks; ++k) {
    term *= z / k;
    acc += term;
  }
  return 1.0 - std::exp(-z) * acc;
}

template <typename T>
void fill_speckle(std::vector<T>& out, int looks, std::uint64_t seed) {
  check_looks(looks);
  Rng rng(seed);
  const double inv_l = 1.0 / looks;
  for (T& v : out) {
    double s = 0.0;
    for (int k = 0; k < looks; ++k) s += rng.exponential();
    // An exponential draw of exactly 0 has probability 2^-53; keep N > 0 regardless.
    v = static_cast<T>(s * inv_l);
    if (!(v > T(0))) v = std::numeric_limits<T>::min();
  }
}

template <typename T>
Tensor<T> sample_speckle(const Shape& shape, int looks, std::uint64_t seed) {
  check_looks(looks);
  std::vector<T> values(shape_numel(shape));
  fill_speckle(values, looks, seed);
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
SpecklePair<T> corrupt(const Tensor<T>& clean, int looks, std::uint64_t seed) {
  for (T v : clean.data())
    if (!(v >= T(0))) throw DomainError("corrupt: clean intensities must be nonnegative");
  SpecklePair<T> pair;
  pair.clean = clean.detach();
  pair.noise = sample_speckle<T>(clean.shape(), looks, seed);
  pair.noisy = Tensor<T>(clean.shape());
  auto x = pair.clean.data();
  auto n = pair.noise.data();
  auto y = pair.noisy.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * n[i];
  pair.looks = looks;
  return pair;
}

template void fill_speckle(std::vector<float>&, int, std::uint64_t);
template void fill_speckle(std::vector<double>&, int, std::uint64_t);
template Tensor<float> sample_speckle(const Shape&, int, std::uint64_t);
template Tensor<double> sample_speckle(const Shape&, int, std::uint64_t);
template SpecklePair<float> corrupt(const Tensor<float>&, int, std::uint64_t);
template SpecklePair<double> corrupt(const Tensor<double>&, int, std::uint64_t);

}  // namespace despeckle
