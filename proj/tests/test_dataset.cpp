#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "despeckle/dataset.hpp"
#include "despeckle/error.hpp"
#include "despeckle/raster.hpp"
#include "despeckle/synthetic.hpp"

using namespace despeckle;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("despeckle_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_scene(const fs::path& path, std::size_t size, std::uint64_t seed, RasterFormat fmt = RasterFormat::Png8) {
  Raster r;
  r.width = r.height = size;
  r.format = fmt;
  r.pixels = synthetic_scene(size, size, seed);
  for (auto& p : r.pixels) p *= 250.0f;
  write_raster(path, r);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Raster, RoundTripsEveryFormat) {
  const auto dir = fresh_dir("raster");
  Raster r;
  r.width = 5;
  r.height = 3;
  for (int i = 0; i < 15; ++i) r.pixels.push_back(static_cast<float>(i * 17));
  for (auto [fmt, name] : {std::pair{RasterFormat::Png8, "a.png"}, {RasterFormat::Png16, "b.png"},
                           {RasterFormat::Pgm8, "c.pgm"}, {RasterFormat::Pgm16, "d.pgm"},
                           {RasterFormat::Float32, "e.f32"}}) {
    r.format = fmt;
    write_raster(dir / name, r);
    const Raster back = read_raster(dir / name);
    EXPECT_EQ(back.width, 5u);
    EXPECT_EQ(back.height, 3u);
    EXPECT_EQ(back.format, fmt);
    EXPECT_EQ(back.pixels, r.pixels) << name;
  }
}

TEST(Raster, MalformedFileThrows) {
  const auto dir = fresh_dir("bad_raster");
  std::ofstream(dir / "x.png") << "not a png";
  EXPECT_THROW(read_raster(dir / "x.png"), DataError);
}

TEST(Patches, OneImageGivesSixteenGridPatches) {
  const auto dir = fresh_dir("grid");
  write_scene(dir / "a.png", 256, 1);
  DatasetSpec spec;
  spec.source_dir = dir;
  spec.train_ratio = 1.0;
  spec.val_ratio = 0.0;
  const Manifest m = extract_patches(spec);
  ASSERT_EQ(m.count(Split::Train), 16u);
  std::set<std::pair<std::size_t, std::size_t>> offsets;
  for (const auto& p : m.patches) offsets.insert({p.x, p.y});
  std::set<std::pair<std::size_t, std::size_t>> expected;
  for (std::size_t y : {0, 64, 128, 192})
    for (std::size_t x : {0, 64, 128, 192}) expected.insert({x, y});
  EXPECT_EQ(offsets, expected);
}

TEST(Patches, EmptyDirectoryGivesZeroCounts) {
  DatasetSpec spec;
  spec.source_dir = fresh_dir("empty");
  const Manifest m = extract_patches(spec);
  EXPECT_TRUE(m.patches.empty());
  const auto j = m.to_json();
  EXPECT_EQ(j["counts"]["train"], 0);
  EXPECT_EQ(j["counts"]["val"], 0);
  EXPECT_EQ(j["counts"]["test"], 0);
}

TEST(Patches, SplitIsByImageAndDisjoint) {
  const auto dir = fresh_dir("split");
  for (int i = 0; i < 3; ++i) write_scene(dir / ("img" + std::to_string(i) + ".png"), 256, 10 + i);
  DatasetSpec spec;
  spec.source_dir = dir;
  spec.train_ratio = 2.0;
  spec.val_ratio = 1.0;
  spec.seed = 5;
  const Manifest m = extract_patches(spec);
  std::set<std::string> train, val;
  for (const auto& p : m.patches) (p.split == Split::Train ? train : val).insert(p.image);
  EXPECT_EQ(train.size(), 2u);
  EXPECT_EQ(val.size(), 1u);
  for (const auto& v : val) EXPECT_FALSE(train.count(v));
}

TEST(Patches, SmallImagesAreSkippedAndCounted) {
  const auto dir = fresh_dir("small");
  write_scene(dir / "big.png", 128, 1);
  write_scene(dir / "tiny.png", 32, 2);
  DatasetSpec spec;
  spec.source_dir = dir;
  spec.train_ratio = 1.0;
  spec.val_ratio = 0.0;
  const Manifest m = extract_patches(spec);
  EXPECT_EQ(m.skipped, 1u);
  EXPECT_EQ(m.count(Split::Train), 4u);
}

TEST(Patches, TargetCountsAreMetBySubsamplingOrTopUp) {
  const auto dir = fresh_dir("targets");
  for (int i = 0; i < 2; ++i) write_scene(dir / ("s" + std::to_string(i) + ".png"), 128, 20 + i);
  DatasetSpec spec;
  spec.source_dir = dir;
  spec.train_ratio = 1.0;
  spec.val_ratio = 1.0;
  spec.train_patches = 10;  // grid gives 4: topped up with random offsets
  spec.val_patches = 2;     // grid gives 4: subsampled
  const Manifest m = extract_patches(spec);
  EXPECT_EQ(m.count(Split::Train), 10u);
  EXPECT_EQ(m.count(Split::Val), 2u);
  for (const auto& p : m.patches) {
    EXPECT_LE(p.x + p.size, 128u);
    EXPECT_LE(p.y + p.size, 128u);
  }
}

TEST(Patches, SameSeedGivesIdenticalManifest) {
  const auto dir = fresh_dir("replay");
  for (int i = 0; i < 4; ++i) write_scene(dir / ("s" + std::to_string(i) + ".png"), 192, 30 + i);
  DatasetSpec spec;
  spec.source_dir = dir;
  spec.train_patches = 20;
  spec.seed = 77;
  extract_patches(spec).save(dir / "m1.json");
  extract_patches(spec).save(dir / "m2.json");
  EXPECT_EQ(file_bytes(dir / "m1.json"), file_bytes(dir / "m2.json"));
  const Manifest back = Manifest::load(dir / "m1.json");
  EXPECT_EQ(back.to_json(), Manifest::load(dir / "m2.json").to_json());
}

TEST(Patches, LoadedPatchesMatchSourcePixels) {
  const auto dir = fresh_dir("load");
  write_scene(dir / "a.png", 128, 3);
  DatasetSpec spec;
  spec.source_dir = dir;
  spec.train_ratio = 1.0;
  spec.val_ratio = 0.0;
  const Manifest m = extract_patches(spec);
  const auto set = load_patches<double>(m, Split::Train, dir);
  const Raster r = read_raster(dir / "a.png");
  ASSERT_EQ(set.count(), 4u);
  const auto& p = m.patches[1];
  const auto patch = set.patch(1);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j)
      EXPECT_DOUBLE_EQ(patch[i * 64 + j], std::min(1.0, r.at(p.y + i, p.x + j) / m.divisor));
}

TEST(Normalize, ConstantImage) {
  Raster r;
  r.width = r.height = 4;
  r.pixels.assign(16, 37.0f);
  double divisor = 0;
  auto t = normalize<double>(r, &divisor);
  EXPECT_DOUBLE_EQ(divisor, 37.0);
  for (double v : t.data()) EXPECT_EQ(v, 1.0);
}

TEST(Normalize, AllZeroThrows) {
  Raster r;
  r.width = r.height = 4;
  r.pixels.assign(16, 0.0f);
  EXPECT_THROW(normalize<double>(r), DomainError);
}

TEST(Normalize, UnitRangeImageIsUnchanged) {
  Raster r;
  r.width = r.height = 10;
  for (int i = 0; i < 100; ++i) r.pixels.push_back(i < 99 ? 0.01f * (i % 90) : 1.0f);
  r.pixels[98] = 1.0f;  // two maxima so the 99.9th percentile is the max
  double divisor = 0;
  auto t = normalize<double>(r, &divisor);
  EXPECT_DOUBLE_EQ(divisor, 1.0);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_DOUBLE_EQ(t.data()[i], r.pixels[i]);
}

TEST(Normalize, RoundTripBelowClip) {
  Raster r;
  r.width = r.height = 64;
  r.pixels = synthetic_scene(64, 64, 9);
  for (auto& p : r.pixels) p *= 3000.0f;
  double divisor = 0;
  auto t = normalize<double>(r, &divisor);
  const auto back = denormalize<double>(t.data(), divisor);
  for (std::size_t i = 0; i < back.size(); ++i) {
    if (r.pixels[i] >= divisor) continue;
    EXPECT_NEAR(back[i], r.pixels[i], 1e-6 * r.pixels[i]);
  }
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile(std::vector<double>{1, 2, 3, 4}, 50.0), 2.5);
  EXPECT_DOUBLE_EQ(percentile(std::vector<double>{5}, 99.9), 5.0);
}
