#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "despeckle/loss.hpp"
#include "despeckle/network.hpp"
#include "despeckle/random.hpp"
#include "despeckle/tensor.hpp"

namespace testing_support {

using despeckle::Rng;
using despeckle::Shape;
using despeckle::Tensor;

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<T> v(despeckle::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return Tensor<T>(shape, std::move(v));
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  std::vector<T> v(despeckle::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
  return Tensor<T>(shape, std::move(v));
}

// Direct "same" cross-correlation with zero padding, four nested loops.
std::vector<double> conv_oracle(const std::vector<double>& in, const std::vector<double>& w,
                                const std::vector<double>& b, std::size_t B, std::size_t Cin,
                                std::size_t Cout, std::size_t H, std::size_t W, std::size_t K);

double l2_oracle(const std::vector<double>& est, const std::vector<double>& ref);
// Forward differences of ref - est, per-axis means of squares, summed.
double edge_oracle(const std::vector<double>& est, const std::vector<double>& ref, std::size_t planes,
                   std::size_t H, std::size_t W);
double mse_oracle(const std::vector<double>& est, const std::vector<double>& ref);
// Windowed SSIM from the definition: explicit per-window means, variances
// and covariance, averaged over all stride-1 placements.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t H,
                   std::size_t W, double range, std::size_t window = 8);

struct ParamGrad {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool kink = false;  // a slope discontinuity lies within +-h
};

// Gradient norms below this count as zero (central-difference roundoff at
// h = 1e-5 is ~1e-11 per entry for O(1) losses).
inline constexpr double kGradNormFloor = 1e-4;

// Per-tensor view: ||analytic - numeric|| / max(||analytic||, ||numeric||).
struct TensorGrad {
  std::string name;
  std::size_t entries = 0;
  double rel_error = 0.0;
  double worst_entry = 0.0;
  bool kink = false;
};

std::vector<TensorGrad> per_tensor(const std::vector<ParamGrad>& grads);

// Central differences of `loss` w.r.t. every entry of every tensor in
// `params`, compared with `analytic` (same layout).
std::vector<ParamGrad> finite_difference_check(const std::function<double()>& loss,
                                               std::vector<Tensor<double>>& params,
                                               const std::vector<std::string>& names,
                                               const std::vector<std::vector<double>>& analytic,
                                               double h);

double relative_error(double a, double b);

struct CompositeGradReport {
  std::vector<ParamGrad> grads;
  std::vector<TensorGrad> tensors;
  double worst_smooth = 0.0, worst_kink = 0.0;  // over tensors
  std::size_t kink_tensors = 0;
  double estimate_min = 0.0, estimate_max = 0.0;
};

// Full training loss (L2 + edge + soft KL, default weights, L = 1) of a
// depth-4, width-8 network on one 1x1x8x8 sample, checked entry by entry.
CompositeGradReport composite_gradcheck(std::uint64_t seed, double h = 1e-5,
                                        const despeckle::LossWeights& weights = {});

}  // namespace testing_support
