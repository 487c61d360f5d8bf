#include "despeckle/network.hpp"

#include <algorithm>
#include <cmath>

#include "despeckle/error.hpp"
#include "despeckle/random.hpp"

namespace despeckle {

void NetworkConfig::validate() const {
  if (depth < 3 || depth > 64)
    throw ConfigError("network depth must lie in [3, 64] (head, at least one inner layer, tail); got " +
                      std::to_string(depth));
  if (width < 1) throw ConfigError("network width must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel size must be a positive odd integer");
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"depth", depth}, {"width", width}, {"kernel", kernel}, {"seed", seed}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.kernel = j.value("kernel", c.kernel);
  c.seed = j.value("seed", c.seed);
  return c;
}

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table{
      {"m1t", 10, 32}, {"m1l", 10, 64}, {"m2t", 12, 32}, {"m2l", 12, 64},
      {"m3t", 15, 32}, {"m3l", 15, 64}, {"m4t", 17, 32}, {"m4l", 17, 64},
  };
  return table;
}

NetworkConfig preset_config(const std::string& name, std::uint64_t seed) {
  for (const auto& p : presets())
    if (name == p.name) return NetworkConfig{p.depth, p.width, 3, seed};
  throw ConfigError("unknown preset '" + name + "' (expected m1t, m1l, ..., m4l)");
}

std::size_t param_count(const NetworkConfig& c) {
  c.validate();
  const std::size_t k2 = static_cast<std::size_t>(c.kernel) * c.kernel;
  const std::size_t nf = static_cast<std::size_t>(c.width);
  const std::size_t inner = static_cast<std::size_t>(c.depth - 2);
  return (k2 * nf + nf) + inner * (k2 * nf * nf + nf + 2 * nf) + (k2 * nf + 1);
}

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : t.mutable_data()) v = static_cast<T>(std_dev * rng.normal());
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> filled(std::size_t n, T value) {
  Tensor<T> t({n}, value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
Model<T>::Model(const NetworkConfig& config) : config_(config) {
  config_.validate();
  const std::size_t K = static_cast<std::size_t>(config_.kernel);
  const std::size_t nf = static_cast<std::size_t>(config_.width);
  Rng rng(mix_seed({config_.seed, 0x1A17ULL}));
  head_ = {he_normal<T>({nf, 1, K, K}, K * K, rng), filled<T>(nf, T(0))};
  for (int i = 0; i < config_.depth - 2; ++i) {
    inner_.push_back({{he_normal<T>({nf, nf, K, K}, K * K * nf, rng), filled<T>(nf, T(0))},
                      filled<T>(nf, T(1)),
                      filled<T>(nf, T(0))});
    bn_.emplace_back(nf);
  }
  tail_ = {he_normal<T>({1, nf, K, K}, K * K * nf, rng), filled<T>(1, T(0))};
}

template <typename T>
Tensor<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& input, ops::NormMode mode) {
  if (input.rank() != 4 || input.dim(1) != 1)
    throw DimensionError("model input must be [B,1,H,W], got " + shape_string(input.shape()));
  Tensor<T> h = ops::relu(tape, ops::conv2d(tape, input, head_.weight, head_.bias));
  for (std::size_t i = 0; i < inner_.size(); ++i) {
    Tensor<T> c = ops::conv2d(tape, h, inner_[i].conv.weight, inner_[i].conv.bias);
    h = ops::relu(tape, ops::batch_norm(tape, c, inner_[i].gamma, inner_[i].beta, bn_[i], mode));
  }
  return ops::conv2d(tape, h, tail_.weight, tail_.bias);
}

template <typename T>
Tensor<T> Model<T>::infer(const Tensor<T>& input) const {
  if (input.rank() != 4 || input.dim(1) != 1)
    throw DimensionError("model input must be [B,1,H,W], got " + shape_string(input.shape()));
  Tape<T> tape(false);
  Tensor<T> h = ops::relu(tape, ops::conv2d(tape, input, head_.weight, head_.bias));
  for (std::size_t i = 0; i < inner_.size(); ++i) {
    Tensor<T> c = ops::conv2d(tape, h, inner_[i].conv.weight, inner_[i].conv.bias);
    ops::BatchNormState<T> frozen = bn_[i];
    h = ops::relu(tape, ops::batch_norm(tape, c, inner_[i].gamma, inner_[i].beta, frozen,
                                        ops::NormMode::Eval));
  }
  return ops::conv2d(tape, h, tail_.weight, tail_.bias);
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy(config_);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].data();
    std::copy(from.begin(), from.end(), dst[i].mutable_data().begin());
  }
  copy.bn_ = bn_;
  return copy;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> p{head_.weight, head_.bias};
  for (const auto& l : inner_) {
    p.push_back(l.conv.weight);
    p.push_back(l.conv.bias);
    p.push_back(l.gamma);
    p.push_back(l.beta);
  }
  p.push_back(tail_.weight);
  p.push_back(tail_.bias);
  return p;
}

template <typename T>
std::vector<std::string> Model<T>::parameter_names() const {
  std::vector<std::string> n{"head.weight", "head.bias"};
  for (std::size_t i = 0; i < inner_.size(); ++i) {
    const std::string pre = "inner" + std::to_string(i + 1) + ".";
    n.push_back(pre + "weight");
    n.push_back(pre + "bias");
    n.push_back(pre + "gamma");
    n.push_back(pre + "beta");
  }
  n.push_back("tail.weight");
  n.push_back("tail.bias");
  return n;
}

template <typename T>
Tensor<T> despeckle(const Model<T>& model, const Tensor<T>& noisy) {
  Tensor<T> out = model.infer(noisy);
  for (T& v : out.mutable_data()) v = v > T(0) ? v : T(0);
  return out;
}

template class Model<float>;
template class Model<double>;
template Tensor<float> despeckle(const Model<float>&, const Tensor<float>&);
template Tensor<double> despeckle(const Model<double>&, const Tensor<double>&);

}  // namespace despeckle
