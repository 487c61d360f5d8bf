#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "despeckle/adam.hpp"
#include "despeckle/network.hpp"

namespace despeckle {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'P', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t epoch = 0;     // completed training epochs
  std::uint64_t rng_seed = 0;  // training seed; per-epoch streams derive from (seed, epoch)
  double divisor = 1.0;        // intensity normalization of the training data
  int looks = 1;
  nlohmann::json training = nlohmann::json::object();  // free-form run settings
};

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::optional<std::vector<AdamState<T>>> adam;
  CheckpointMeta meta;
};

// Layout: "DSPK", u32 LE version, u32 LE header length, JSON header, then
// little-endian float32 blocks: parameters in Model::parameters() order, BN
// running mean/var per inner layer, and (when present) Adam m/v per parameter.
template <typename T>
std::vector<unsigned char> encode_checkpoint(const Model<T>& model,
                                             const std::vector<AdamState<T>>* adam,
                                             const CheckpointMeta& meta);

// Throws FormatError (magic, version, header) or LengthError (truncation).
template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<unsigned char>& bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const std::vector<AdamState<T>>* adam, const CheckpointMeta& meta);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace despeckle
