#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace despeckle {

enum class RasterFormat { Png8, Png16, Pgm8, Pgm16, Float32 };

// Single-channel image with row-major float pixels in source units.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;
  RasterFormat format = RasterFormat::Float32;

  float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

// Largest representable value of an integer format (0 for Float32).
double format_max(RasterFormat format);

// True for .png, .pgm and .f32/.raw (with .json sidecar) files.
bool is_raster_path(const std::filesystem::path& path);

// Reads 8/16-bit grayscale PNG, binary PGM (P5) or a raw little-endian
// float32 file whose sidecar <stem>.json holds {"width": W, "height": H}.
// RGB PNGs are converted to luma. Throws DataError on malformed input.
Raster read_raster(const std::filesystem::path& path);

// Writes in raster.format; integer formats round and clamp to [0, max].
void write_raster(const std::filesystem::path& path, const Raster& raster);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace despeckle
