#include "despeckle/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "despeckle/random.hpp"

namespace despeckle {

std::vector<float> synthetic_scene(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0x5CE4EULL}));
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  std::vector<double> img(height * width);

  // Shaded background.
  const double base = 0.25 + 0.35 * rng.uniform();
  const double gy = (rng.uniform() - 0.5) * 0.3, gx = (rng.uniform() - 0.5) * 0.3;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      img[y * width + x] = base + gy * (y / h - 0.5) + gx * (x / w - 0.5);

  const double area_scale = std::sqrt(h * w) / 256.0;
  const int shapes = 6 + static_cast<int>(rng.below(8));
  for (int s = 0; s < shapes; ++s) {
    const double level = 0.05 + 0.95 * rng.uniform();
    const double cy = rng.uniform() * h, cx = rng.uniform() * w;
    const double ry = (10.0 + 50.0 * rng.uniform()) * area_scale;
    const double rx = (10.0 + 50.0 * rng.uniform()) * area_scale;
    const bool ellipse = rng.uniform() < 0.5;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) img[y * width + x] = level;
      }
  }

  // Roads / field boundaries.
  const int lines = 1 + static_cast<int>(rng.below(4));
  for (int l = 0; l < lines; ++l) {
    const double level = rng.uniform() < 0.5 ? 0.08 : 0.95;
    const double theta = rng.uniform() * 3.141592653589793;
    const double c = std::cos(theta), sn = std::sin(theta);
    const double off = (rng.uniform() - 0.5) * std::min(h, w);
    const double half = 1.0 + 2.0 * rng.uniform();
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double d = (x - w / 2) * c + (y - h / 2) * sn - off;
        if (std::abs(d) <= half) img[y * width + x] = level;
      }
  }

  // Fine texture.
  const double amp = 0.04 * rng.uniform();
  const double fy = 0.05 + 0.3 * rng.uniform(), fx = 0.05 + 0.3 * rng.uniform();
  std::vector<float> out(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double v = img[y * width + x] + amp * std::sin(fy * y) * std::sin(fx * x);
      out[y * width + x] = static_cast<float>(std::clamp(v, 0.05, 1.0));
    }
  return out;
}

template <typename T>
PatchSet<T> synthetic_patches(std::size_t count, std::size_t patch, std::uint64_t seed) {
  PatchSet<T> set;
  set.size = patch;
  set.data.reserve(count * patch * patch);
  const std::size_t scene = std::max<std::size_t>(256, patch);
  std::size_t made = 0;
  for (std::uint64_t s = 0; made < count; ++s) {
    const auto img = synthetic_scene(scene, scene, mix_seed({seed, s}));
    for (std::size_t y = 0; y + patch <= scene && made < count; y += patch)
      for (std::size_t x = 0; x + patch <= scene && made < count; x += patch, ++made)
        for (std::size_t r = 0; r < patch; ++r)
          for (std::size_t c = 0; c < patch; ++c)
            set.data.push_back(static_cast<T>(img[(y + r) * scene + x + c]));
  }
  return set;
}

template PatchSet<float> synthetic_patches<float>(std::size_t, std::size_t, std::uint64_t);
template PatchSet<double> synthetic_patches<double>(std::size_t, std::size_t, std::uint64_t);

}  // namespace despeckle
