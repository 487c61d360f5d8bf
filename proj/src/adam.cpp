#include "despeckle/adam.hpp"

#include <cmath>

#include "despeckle/error.hpp"

namespace despeckle {

template <typename T>
std::vector<AdamState<T>> make_adam_states(const std::vector<Tensor<T>>& params, AdamHyper hyper) {
  std::vector<AdamState<T>> states;
  states.reserve(params.size());
  for (const auto& p : params) states.emplace_back(p.numel(), hyper);
  return states;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, std::vector<AdamState<T>>& states) {
  if (params.size() != states.size())
    throw StateError("adam_step: one optimizer state per parameter required");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].has_grad())
      throw StateError("adam_step: parameter " + std::to_string(k) + " has no gradient");
    if (states[k].m.size() != params[k].numel() || states[k].v.size() != params[k].numel())
      throw StateError("adam_step: optimizer state length mismatch for parameter " +
                       std::to_string(k));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    AdamState<T>& st = states[k];
    st.t += 1;
    const T b1 = static_cast<T>(st.hyper.beta1);
    const T b2 = static_cast<T>(st.hyper.beta2);
    const T lr = static_cast<T>(st.hyper.lr);
    const T eps = static_cast<T>(st.hyper.eps);
    const T c1 = static_cast<T>(1.0 - std::pow(st.hyper.beta1, static_cast<double>(st.t)));
    const T c2 = static_cast<T>(1.0 - std::pow(st.hyper.beta2, static_cast<double>(st.t)));
    auto p = params[k].mutable_data();
    auto g = params[k].grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      st.m[i] = b1 * st.m[i] + (T(1) - b1) * g[i];
      st.v[i] = b2 * st.v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = st.m[i] / c1;
      const T v_hat = st.v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    params[k].clear_grad();
  }
}

template std::vector<AdamState<float>> make_adam_states(const std::vector<Tensor<float>>&, AdamHyper);
template std::vector<AdamState<double>> make_adam_states(const std::vector<Tensor<double>>&, AdamHyper);
template void adam_step(std::vector<Tensor<float>>&, std::vector<AdamState<float>>&);
template void adam_step(std::vector<Tensor<double>>&, std::vector<AdamState<double>>&);

}  // namespace despeckle
