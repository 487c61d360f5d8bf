#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "despeckle/adam.hpp"
#include "despeckle/dataset.hpp"
#include "despeckle/error.hpp"
#include "despeckle/loss.hpp"
#include "despeckle/network.hpp"

namespace despeckle {

struct TrainOptions {
  int epochs = 130;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  int looks = 1;
  LossWeights weights;
  AdamHyper adam;  // adam.lr is the learning rate (default 3e-4)

  void validate() const;
};

struct ValidationLosses {
  double mse = 0.0;
  double kl = 0.0;
  double edge = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_total = 0.0;
  double val_mse = 0.0;
  double val_kl = 0.0;
  double val_edge = 0.0;
  double wall_seconds = 0.0;
};

// Raised when a training loss or update turns non-finite. The model may hold
// partially updated parameters; callers restore from their last checkpoint.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, int epoch, std::size_t batch)
      : NumericError(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

// Adam training of a Model on clean patches. Speckle is simulated on the fly:
// training draws depend on (seed, epoch, patch index), validation draws on
// (seed, patch index) only, and the shuffle order on (seed, epoch).
template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainOptions options);

  const TrainOptions& options() const { return options_; }
  int epochs_done() const { return epochs_done_; }
  const std::vector<AdamState<T>>& adam_states() const { return adam_; }

  // Continues from a checkpointed optimizer state after `epochs_done` epochs.
  void restore(std::vector<AdamState<T>> states, int epochs_done);

  // Trains one epoch, then evaluates on `val`.
  EpochRecord run_epoch(const PatchSet<T>& train, const PatchSet<T>& val);

  // Runs epochs until options().epochs have been completed in total.
  std::vector<EpochRecord> fit(const PatchSet<T>& train, const PatchSet<T>& val,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

  // Eval-mode loss terms averaged over `val` (weighted by batch size).
  ValidationLosses validate(const PatchSet<T>& val) const;

 private:
  Model<T>& model_;
  TrainOptions options_;
  std::vector<AdamState<T>> adam_;
  int epochs_done_ = 0;
};

// Builds a [n,1,S,S] batch of clean patches and its speckled observation.
template <typename T>
void make_batch(const PatchSet<T>& set, std::span<const std::size_t> indices,
                std::span<const std::uint64_t> noise_seeds, int looks, Tensor<T>& clean,
                Tensor<T>& noisy);

}  // namespace despeckle
