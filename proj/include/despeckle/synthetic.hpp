#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "despeckle/dataset.hpp"

namespace despeckle {

// Seeded piecewise-smooth scene with intensities in [0.05, 1]: a shaded
// background, flat rectangles and ellipses, thin linear features, and a
// little fine texture. Stand-in for aerial land-use imagery.
std::vector<float> synthetic_scene(std::size_t height, std::size_t width, std::uint64_t seed);

// `count` non-overlapping patches cut in order from consecutive 256x256
// synthetic scenes seeded from `seed`.
template <typename T>
PatchSet<T> synthetic_patches(std::size_t count, std::size_t patch, std::uint64_t seed);

}  // namespace despeckle
