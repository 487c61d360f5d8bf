#pragma once

#include <cstdint>
#include <vector>

#include "despeckle/tensor.hpp"

namespace despeckle {

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::size_t length, AdamHyper h) : m(length, T(0)), v(length, T(0)), hyper(h) {}
};

template <typename T>
std::vector<AdamState<T>> make_adam_states(const std::vector<Tensor<T>>& params, AdamHyper hyper);

// One bias-corrected Adam update per parameter; gradients are cleared
// afterwards. A parameter without a gradient raises StateError before any
// parameter is modified.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, std::vector<AdamState<T>>& states);

}  // namespace despeckle
