#pragma once

#include <cstdint>
#include <vector>

#include "despeckle/tensor.hpp"

namespace despeckle {

// Clean intensity X, speckle field N and observation Y = X * N, all [1,1,H,W].
template <typename T>
struct SpecklePair {
  Tensor<T> clean;
  Tensor<T> noise;
  Tensor<T> noisy;
  int looks = 1;
};

// Unit-mean Gamma(L, L) density of L-look intensity speckle.
double speckle_pdf(double n, int looks);
// P(N <= n) for integer L (closed-form Erlang CDF).
double speckle_cdf(double n, int looks);

// Fills `out` with i.i.d. Gamma(L, L) draws: each value is the mean of L
// unit-rate exponentials. Deterministic for a given seed.
template <typename T>
void fill_speckle(std::vector<T>& out, int looks, std::uint64_t seed);

template <typename T>
Tensor<T> sample_speckle(const Shape& shape, int looks, std::uint64_t seed);

// Y = X * N with N drawn from sample_speckle(clean.shape(), looks, seed).
template <typename T>
SpecklePair<T> corrupt(const Tensor<T>& clean, int looks, std::uint64_t seed);

}  // namespace despeckle
