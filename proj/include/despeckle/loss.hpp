#pragma once

#include <cstddef>
#include <vector>

#include "despeckle/tensor.hpp"

namespace despeckle {

enum class KlMode { Soft, Hard };

struct LossWeights {
  double lambda_edge = 1.0;
  double lambda_kl = 1.0;
  std::size_t kl_bins = 64;
  double kl_range = 8.0;
  double kl_bandwidth = 0.0625;  // half of 8 / 64
  double eps_ratio = 1e-3;
  KlMode kl_mode = KlMode::Soft;

  void validate() const;
};

// Floor applied to both histograms before taking logs.
inline constexpr double kKlFloor = 1e-10;

// Mean squared difference.
template <typename T>
Tensor<T> l2_loss(Tape<T>& tape, const Tensor<T>& estimate, const Tensor<T>& reference);

// Mean squared difference of horizontal forward differences plus the same
// for vertical ones; inputs are [B,C,H,W] with H, W >= 2.
template <typename T>
Tensor<T> edge_loss(Tape<T>& tape, const Tensor<T>& estimate, const Tensor<T>& reference);

// Expected histogram of Gamma(L, L) speckle under the same binning as
// kl_loss (soft memberships or hard bins; the last bin absorbs the tail).
// Cached per configuration; sums to 1.
const std::vector<double>& speckle_bin_mass(int looks, const LossWeights& weights);

// KL divergence between the histogram of noisy / max(estimate, eps_ratio) and
// the theoretical speckle histogram. In hard mode the value is a constant
// with no gradient.
template <typename T>
Tensor<T> kl_loss(Tape<T>& tape, const Tensor<T>& noisy, const Tensor<T>& estimate, int looks,
                  const LossWeights& weights);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double l2 = 0.0;
  double edge = 0.0;
  double kl = 0.0;
};

// L2 + lambda_edge * edge + lambda_kl * KL. The breakdown always carries all
// three unweighted term values.
template <typename T>
LossBreakdown<T> total_loss(Tape<T>& tape, const Tensor<T>& estimate, const Tensor<T>& reference,
                            const Tensor<T>& noisy, const LossWeights& weights, int looks);

}  // namespace despeckle
