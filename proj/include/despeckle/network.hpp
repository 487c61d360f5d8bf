#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "despeckle/ops.hpp"
#include "despeckle/tensor.hpp"

namespace despeckle {

// Depth counts every convolution: one conv+ReLU head, depth-2 inner
// conv+BN+ReLU layers and a single-channel conv tail.
struct NetworkConfig {
  int depth = 10;
  int width = 32;
  int kernel = 3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
  bool operator==(const NetworkConfig&) const = default;
};

struct Preset {
  const char* name;  // m1t ... m4l
  int depth;
  int width;
};

// The eight depth/width variants: depths {10, 12, 15, 17} x widths {32, 64}.
const std::vector<Preset>& presets();
NetworkConfig preset_config(const std::string& name, std::uint64_t seed = 0);

// Closed-form trainable parameter count (conv weights and biases plus the
// BN affine pairs of the inner layers).
std::size_t param_count(const NetworkConfig& config);

template <typename T>
class Model {
 public:
  // Fan-in scaled normal weights (std = sqrt(2 / (K^2 Cin))), zero biases,
  // gamma = 1, beta = 0. Throws ConfigError for depth < 3.
  explicit Model(const NetworkConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  // Deep copy; the default copy would alias parameter storage.
  Model clone() const;

  const NetworkConfig& config() const { return config_; }
  std::size_t inner_layers() const { return inner_.size(); }

  // [B,1,H,W] -> [B,1,H,W]. Train mode updates the BN running statistics.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& input, ops::NormMode mode);

  // Eval-mode forward that leaves the model untouched; safe to call
  // concurrently on a model nobody is training.
  Tensor<T> infer(const Tensor<T>& input) const;

  // All trainable tensors in fixed layer order: head (w, b), each inner
  // layer (w, b, gamma, beta), tail (w, b).
  std::vector<Tensor<T>> parameters() const;
  std::vector<std::string> parameter_names() const;

  std::vector<ops::BatchNormState<T>>& bn_states() { return bn_; }
  const std::vector<ops::BatchNormState<T>>& bn_states() const { return bn_; }

 private:
  struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;
  };
  struct Inner {
    Conv conv;
    Tensor<T> gamma;
    Tensor<T> beta;
  };

  NetworkConfig config_;
  Conv head_;
  std::vector<Inner> inner_;
  std::vector<ops::BatchNormState<T>> bn_;
  Conv tail_;
};

// Eval-mode forward on [B,1,H,W] with the output clamped to [0, inf).
template <typename T>
Tensor<T> despeckle(const Model<T>& model, const Tensor<T>& noisy);

}  // namespace despeckle
