#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "despeckle/raster.hpp"
#include "despeckle/tensor.hpp"

namespace despeckle {

enum class Split { Train, Val, Test };
std::string split_name(Split s);
Split parse_split(const std::string& name);

enum class Normalization { Percentile, None };

struct DatasetSpec {
  std::filesystem::path source_dir;
  std::size_t patch_size = 64;
  std::size_t stride = 64;
  // Target patch counts per split; 0 keeps every grid patch.
  std::size_t train_patches = 0;
  std::size_t val_patches = 0;
  std::size_t test_patches = 0;
  // Relative share of source images per split.
  double train_ratio = 0.8;
  double val_ratio = 0.2;
  double test_ratio = 0.0;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::Percentile;
  double percentile = 99.9;

  void validate() const;
};

struct PatchRecord {
  Split split;
  std::string image;  // file name relative to the source directory
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t size = 0;
};

struct ImageRecord {
  std::string image;
  Split split;
  std::size_t width = 0;
  std::size_t height = 0;
};

struct Manifest {
  std::uint64_t seed = 0;
  double divisor = 0.0;  // 0 when no training pixels were available
  std::size_t patch_size = 0;
  std::size_t stride = 0;
  std::string source_dir;
  std::vector<ImageRecord> images;
  std::vector<PatchRecord> patches;
  std::size_t skipped = 0;  // images smaller than the patch size
  std::vector<std::string> unreadable;

  std::size_t count(Split s) const;
  std::vector<std::string> images_in(Split s) const;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

// Source images in file-name order.
std::vector<std::filesystem::path> list_rasters(const std::filesystem::path& dir);

// Deterministic patch sampling: images are assigned whole to one split,
// every image contributes its regular stride grid, then the split is
// subsampled or topped up with seeded random offsets to reach its target.
Manifest extract_patches(const DatasetSpec& spec);

// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<float> values, double q);
double percentile(std::vector<double> values, double q);

// Divides by `divisor` and clips to [0, 1].
template <typename T>
std::vector<T> normalize_with(const std::vector<float>& pixels, double divisor);

// Normalizes by the image's own 99.9th percentile; the divisor is returned
// through `divisor`. Throws DomainError for all-zero images.
template <typename T>
Tensor<T> normalize(const Raster& image, double* divisor = nullptr, double q = 99.9);

template <typename T>
std::vector<float> denormalize(std::span<const T> values, double divisor);

// N patches of size x size stored contiguously, normalized intensities.
template <typename T>
struct PatchSet {
  std::size_t size = 0;
  std::vector<T> data;

  std::size_t count() const { return size ? data.size() / (size * size) : 0; }
  std::span<const T> patch(std::size_t i) const {
    return std::span<const T>(data).subspan(i * size * size, size * size);
  }
};

template <typename T>
PatchSet<T> load_patches(const Manifest& manifest, Split split,
                         const std::filesystem::path& source_dir);

}  // namespace despeckle
