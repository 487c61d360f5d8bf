#include "despeckle/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "despeckle/random.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {
namespace {
constexpr std::uint64_t kShuffleTag = 0x5F0FF1EULL;
constexpr std::uint64_t kTrainNoiseTag = 0x7A1DULL;
constexpr std::uint64_t kValNoiseTag = 0x5A1DULL;
}  // namespace

void TrainOptions::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (looks < 1) throw ConfigError("looks must be >= 1");
  if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw ConfigError("learning rate must be >= 0");
  weights.validate();
}

template <typename T>
void make_batch(const PatchSet<T>& set, std::span<const std::size_t> indices,
                std::span<const std::uint64_t> noise_seeds, int looks, Tensor<T>& clean,
                Tensor<T>& noisy) {
  const std::size_t S = set.size, n = indices.size(), plane = S * S;
  clean = Tensor<T>({n, 1, S, S});
  noisy = Tensor<T>({n, 1, S, S});
  auto x = clean.mutable_data();
  auto y = noisy.mutable_data();
  std::vector<T> noise(plane);
  for (std::size_t k = 0; k < n; ++k) {
    const auto patch = set.patch(indices[k]);
    fill_speckle(noise, looks, noise_seeds[k]);
    for (std::size_t i = 0; i < plane; ++i) {
      x[k * plane + i] = patch[i];
      y[k * plane + i] = patch[i] * noise[i];
    }
  }
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainOptions options) : model_(model), options_(options) {
  options_.validate();
  adam_ = make_adam_states(model_.parameters(), options_.adam);
}

template <typename T>
void Trainer<T>::restore(std::vector<AdamState<T>> states, int epochs_done) {
  const auto params = model_.parameters();
  if (states.size() != params.size()) throw StateError("restore: optimizer state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (states[i].m.size() != params[i].numel()) throw StateError("restore: optimizer state length mismatch");
  adam_ = std::move(states);
  epochs_done_ = epochs_done;
}

template <typename T>
EpochRecord Trainer<T>::run_epoch(const PatchSet<T>& train, const PatchSet<T>& val) {
  if (train.count() == 0 || val.count() == 0) throw DataError("training and validation sets must be nonempty");
  if (train.size != val.size) throw DimensionError("training and validation patches differ in size");
  const auto start = std::chrono::steady_clock::now();
  const int epoch = epochs_done_ + 1;
  const auto e = static_cast<std::uint64_t>(epoch);

  std::vector<std::size_t> order(train.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed({options_.seed, kShuffleTag, e}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  auto params = model_.parameters();
  double weighted_total = 0.0;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += options_.batch_size, ++batch_index) {
    const std::size_t end = std::min(order.size(), begin + options_.batch_size);
    std::span<const std::size_t> idx(order.data() + begin, end - begin);
    std::vector<std::uint64_t> seeds(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      seeds[k] = mix_seed({options_.seed, kTrainNoiseTag, e, static_cast<std::uint64_t>(idx[k])});
    Tensor<T> clean, noisy;
    make_batch(train, idx, seeds, options_.looks, clean, noisy);

    try {
      Tape<T> tape;
      Tensor<T> estimate = model_.forward(tape, noisy, ops::NormMode::Train);
      auto loss = total_loss(tape, estimate, clean, noisy, options_.weights, options_.looks);
      const double value = static_cast<double>(loss.total.item());
      if (!std::isfinite(value)) throw NumericError("non-finite loss");
      backward(loss.total, tape);
      for (const auto& p : params)
        if (p.has_grad()) ops::ensure_finite<T>(p.grad(), "parameter gradient");
      adam_step(params, adam_);
      for (const auto& p : params) ops::ensure_finite<T>(p.data(), "parameter update");
      weighted_total += value * static_cast<double>(idx.size());
    } catch (const NumericError& err) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_index) + ": " + err.what(),
                            epoch, batch_index);
    }
  }

  ValidationLosses v;
  try {
    v = validate(val);
  } catch (const NumericError& err) {
    throw DivergenceError("validation diverged at epoch " + std::to_string(epoch) + ": " + err.what(),
                          epoch, 0);
  }
  epochs_done_ = epoch;
  EpochRecord rec;
  rec.epoch = epoch;
  rec.train_total = weighted_total / static_cast<double>(order.size());
  rec.val_mse = v.mse;
  rec.val_kl = v.kl;
  rec.val_edge = v.edge;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

template <typename T>
std::vector<EpochRecord> Trainer<T>::fit(const PatchSet<T>& train, const PatchSet<T>& val,
                                         const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> log;
  while (epochs_done_ < options_.epochs) {
    log.push_back(run_epoch(train, val));
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

template <typename T>
ValidationLosses Trainer<T>::validate(const PatchSet<T>& val) const {
  ValidationLosses out;
  const std::size_t n = val.count();
  if (n == 0) throw DataError("validation set is empty");
  for (std::size_t begin = 0; begin < n; begin += options_.batch_size) {
    const std::size_t end = std::min(n, begin + options_.batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    std::vector<std::uint64_t> seeds(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      seeds[k] = mix_seed({options_.seed, kValNoiseTag, static_cast<std::uint64_t>(idx[k])});
    Tensor<T> clean, noisy;
    make_batch<T>(val, idx, seeds, options_.looks, clean, noisy);
    Tensor<T> estimate = model_.infer(noisy);
    Tape<T> tape(false);
    auto loss = total_loss(tape, estimate, clean, noisy, options_.weights, options_.looks);
    const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
    out.mse += w * loss.l2;
    out.edge += w * loss.edge;
    out.kl += w * loss.kl;
    out.total += w * static_cast<double>(loss.total.item());
  }
  return out;
}

template class Trainer<float>;
template class Trainer<double>;
template void make_batch(const PatchSet<float>&, std::span<const std::size_t>,
                         std::span<const std::uint64_t>, int, Tensor<float>&, Tensor<float>&);
template void make_batch(const PatchSet<double>&, std::span<const std::size_t>,
                         std::span<const std::uint64_t>, int, Tensor<double>&, Tensor<double>&);

}  // namespace despeckle
