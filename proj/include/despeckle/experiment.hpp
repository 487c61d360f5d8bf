#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "despeckle/dataset.hpp"
#include "despeckle/loss.hpp"
#include "despeckle/network.hpp"

namespace despeckle {

// Everything needed to re-run an experiment. JSON keys mirror the field names.
struct ExperimentConfig {
  DatasetSpec dataset;
  std::optional<std::string> preset;  // m1t ... m4l; overrides `network` depth/width
  NetworkConfig network;
  LossWeights loss_weights;
  int epochs = 130;
  double lr = 3e-4;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  int looks = 1;
  std::filesystem::path output_dir = "runs";

  // Network config after applying the preset (seeded from `seed`).
  NetworkConfig resolved_network() const;
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace despeckle
