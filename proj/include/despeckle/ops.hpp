#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "despeckle/tensor.hpp"

namespace despeckle::ops {

// Elementwise binary ops; operands must have identical shapes.
template <typename T> Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& a, T s);
template <typename T> Tensor<T> square(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> log(Tape<T>& tape, const Tensor<T>& a);
// max(a, floor); gradient flows only where a > floor.
template <typename T> Tensor<T> clamp_min(Tape<T>& tape, const Tensor<T>& a, T floor);
// max(0, a); gradient at exactly 0 is 0.
template <typename T> Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a);

// Full reductions to a shape-{1} tensor.
template <typename T> Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a);

// Half-open range [begin, end) along one axis.
template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& a, std::size_t axis, std::size_t begin,
                std::size_t end);

// "Same" cross-correlation: input [B,Cin,H,W], kernel [Cout,Cin,K,K] with K
// odd, bias [Cout]; zero padding (K-1)/2 keeps H x W.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias);

enum class NormMode { Train, Eval };

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.9);  // running = momentum * running + (1 - momentum) * batch
  T eps = T(1e-5);
  std::size_t updates = 0;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Per-channel normalization over (B, H, W). Train mode uses batch statistics
// and updates `state`; eval mode requires state.updates > 0.
template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state, NormMode mode);

// Soft histogram of all entries of `a` over `bins` equal-width bins spanning
// (0, range]. Each sample spreads unit mass over the bins with softmax weights
// exp(-(x - c_b)^2 / (2 sigma^2)); the result is normalized to sum to 1.
template <typename T>
Tensor<T> soft_histogram(Tape<T>& tape, const Tensor<T>& a, std::size_t bins, T range,
                         T sigma);

// Throws NumericError naming `op` if any entry is NaN or infinite.
template <typename T>
void ensure_finite(std::span<const T> values, const char* op);

}  // namespace despeckle::ops

namespace despeckle::ops {

// Membership weights of one value over the soft_histogram bins (length `bins`).
std::vector<double> soft_bin_weights(double x, std::size_t bins, double range, double sigma);

}  // namespace despeckle::ops
