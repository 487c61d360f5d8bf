#include "despeckle/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "despeckle/error.hpp"
#include "despeckle/parallel.hpp"
#include "despeckle/random.hpp"

namespace despeckle {
namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw FormatError("unknown split '" + name + "'");
}

void DatasetSpec::validate() const {
  if (patch_size == 0) throw ConfigError("patch size must be positive");
  if (stride == 0) throw ConfigError("stride must be positive");
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 ||
      train_ratio + val_ratio + test_ratio <= 0)
    throw ConfigError("split ratios must be nonnegative with a positive sum");
  if (!(percentile > 0.0 && percentile <= 100.0))
    throw ConfigError("normalization percentile must lie in (0, 100]");
}

std::size_t Manifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(patches.begin(), patches.end(), [s](const PatchRecord& p) { return p.split == s; }));
}

std::vector<std::string> Manifest::images_in(Split s) const {
  std::vector<std::string> out;
  for (const auto& im : images)
    if (im.split == s) out.push_back(im.image);
  return out;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["divisor"] = divisor;
  j["patch_size"] = patch_size;
  j["stride"] = stride;
  j["source_dir"] = source_dir;
  j["counts"] = {{"train", count(Split::Train)},
                 {"val", count(Split::Val)},
                 {"test", count(Split::Test)}};
  j["skipped"] = skipped;
  j["unreadable"] = unreadable;
  j["images"] = nlohmann::json::array();
  for (const auto& im : images)
    j["images"].push_back({{"image", im.image},
                           {"split", split_name(im.split)},
                           {"width", im.width},
                           {"height", im.height}});
  j["splits"] = nlohmann::json::array();
  for (const auto& p : patches)
    j["splits"].push_back(
        {{"split", split_name(p.split)}, {"image", p.image}, {"x", p.x}, {"y", p.y}, {"size", p.size}});
  return j;
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.divisor = j.at("divisor").get<double>();
    m.patch_size = j.at("patch_size").get<std::size_t>();
    m.stride = j.value("stride", m.patch_size);
    m.source_dir = j.value("source_dir", std::string{});
    m.skipped = j.value("skipped", std::size_t{0});
    m.unreadable = j.value("unreadable", std::vector<std::string>{});
    for (const auto& im : j.value("images", nlohmann::json::array()))
      m.images.push_back({im.at("image").get<std::string>(), parse_split(im.at("split").get<std::string>()),
                          im.at("width").get<std::size_t>(), im.at("height").get<std::size_t>()});
    for (const auto& p : j.at("splits"))
      m.patches.push_back({parse_split(p.at("split").get<std::string>()), p.at("image").get<std::string>(),
                           p.at("x").get<std::size_t>(), p.at("y").get<std::size_t>(),
                           p.at("size").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void Manifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << to_json().dump(2) << '\n';
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<fs::path> list_rasters(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("source directory does not exist: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_raster_path(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return files;
}

template <typename V>
double percentile_impl(std::vector<V>& values, double q) {
  if (values.empty()) throw DomainError("percentile of an empty set");
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + frac * (b - a);
}

double percentile(std::vector<float> values, double q) { return percentile_impl(values, q); }
double percentile(std::vector<double> values, double q) { return percentile_impl(values, q); }

namespace {

// Largest-remainder apportionment of n images over the three ratios.
std::array<std::size_t, 3> apportion(std::size_t n, const DatasetSpec& spec) {
  const std::array<double, 3> r{spec.train_ratio, spec.val_ratio, spec.test_ratio};
  const double total = r[0] + r[1] + r[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * r[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (rem[k] > rem[best]) best = k;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

}  // namespace

Manifest extract_patches(const DatasetSpec& spec) {
  spec.validate();
  Manifest m;
  m.seed = spec.seed;
  m.patch_size = spec.patch_size;
  m.stride = spec.stride;
  m.source_dir = spec.source_dir.string();

  const auto files = list_rasters(spec.source_dir);
  std::vector<Raster> rasters(files.size());
  std::vector<std::string> errors(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    try {
      rasters[i] = read_raster(files[i]);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!errors[i].empty()) {
      m.unreadable.push_back(files[i].filename().string());
    } else if (rasters[i].width < spec.patch_size || rasters[i].height < spec.patch_size) {
      ++m.skipped;
    } else {
      usable.push_back(i);
    }
  }

  // Seeded image-to-split assignment.
  std::vector<std::size_t> order = usable;
  Rng rng(mix_seed({spec.seed, 0x5B117ULL}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto counts = apportion(order.size(), spec);
  std::map<std::size_t, Split> split_of;
  for (std::size_t k = 0; k < order.size(); ++k)
    split_of[order[k]] = k < counts[0] ? Split::Train : (k < counts[0] + counts[1] ? Split::Val : Split::Test);

  for (std::size_t i : usable)
    m.images.push_back({files[i].filename().string(), split_of[i], rasters[i].width, rasters[i].height});

  const std::array<Split, 3> splits{Split::Train, Split::Val, Split::Test};
  const std::array<std::size_t, 3> targets{spec.train_patches, spec.val_patches, spec.test_patches};
  const std::size_t size = spec.patch_size;
  for (int k = 0; k < 3; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i : usable)
      if (split_of[i] == splits[k]) members.push_back(i);
    std::vector<PatchRecord> grid;
    for (std::size_t i : members) {
      const Raster& r = rasters[i];
      for (std::size_t y = 0; y + size <= r.height; y += spec.stride)
        for (std::size_t x = 0; x + size <= r.width; x += spec.stride)
          grid.push_back({splits[k], files[i].filename().string(), x, y, size});
    }
    Rng prng(mix_seed({spec.seed, 0xBA7C4ULL, static_cast<std::uint64_t>(k)}));
    const std::size_t target = targets[k];
    if (target > 0 && target < grid.size()) {
      std::vector<std::size_t> idx(grid.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t i = 0; i < target; ++i) std::swap(idx[i], idx[i + prng.below(idx.size() - i)]);
      idx.resize(target);
      std::sort(idx.begin(), idx.end());
      std::vector<PatchRecord> kept;
      for (std::size_t i : idx) kept.push_back(grid[i]);
      grid = std::move(kept);
    } else if (target > grid.size() && !members.empty()) {
      std::set<std::tuple<std::string, std::size_t, std::size_t>> seen;
      for (const auto& p : grid) seen.insert({p.image, p.x, p.y});
      std::size_t attempts = 0;
      const std::size_t max_attempts = 100 * target + 1000;
      while (grid.size() < target && attempts++ < max_attempts) {
        const std::size_t i = members[prng.below(members.size())];
        const Raster& r = rasters[i];
        const std::size_t x = prng.below(r.width - size + 1);
        const std::size_t y = prng.below(r.height - size + 1);
        const std::string name = files[i].filename().string();
        if (seen.insert({name, x, y}).second) grid.push_back({splits[k], name, x, y, size});
      }
    }
    m.patches.insert(m.patches.end(), grid.begin(), grid.end());
  }

  if (spec.normalization == Normalization::None) {
    m.divisor = 1.0;
  } else {
    std::vector<float> pixels;
    for (std::size_t i : usable)
      if (split_of[i] == Split::Train)
        pixels.insert(pixels.end(), rasters[i].pixels.begin(), rasters[i].pixels.end());
    if (!pixels.empty()) {
      m.divisor = percentile(std::move(pixels), spec.percentile);
      if (!(m.divisor > 0.0))
        throw DomainError("training images are all zero at the normalization percentile");
    }
  }
  return m;
}

template <typename T>
std::vector<T> normalize_with(const std::vector<float>& pixels, double divisor) {
  if (!(divisor > 0.0) || !std::isfinite(divisor))
    throw DomainError("normalization divisor must be positive and finite");
  std::vector<T> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!(pixels[i] >= 0.0f)) throw DomainError("normalize: raster values must be nonnegative");
    out[i] = static_cast<T>(std::min(1.0, static_cast<double>(pixels[i]) / divisor));
  }
  return out;
}

template <typename T>
Tensor<T> normalize(const Raster& image, double* divisor, double q) {
  const double d = percentile(image.pixels, q);
  if (!(d > 0.0)) throw DomainError("normalize: divisor is zero (all-zero image)");
  if (divisor) *divisor = d;
  return Tensor<T>({1, 1, image.height, image.width}, normalize_with<T>(image.pixels, d));
}

template <typename T>
std::vector<float> denormalize(std::span<const T> values, double divisor) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(values[i]) * divisor);
  return out;
}

template <typename T>
PatchSet<T> load_patches(const Manifest& manifest, Split split, const fs::path& source_dir) {
  if (!(manifest.divisor > 0.0)) throw DataError("manifest has no normalization divisor");
  PatchSet<T> set;
  set.size = manifest.patch_size;
  std::map<std::string, Raster> cache;
  for (const auto& p : manifest.patches) {
    if (p.split != split) continue;
    auto it = cache.find(p.image);
    if (it == cache.end()) it = cache.emplace(p.image, read_raster(source_dir / p.image)).first;
    const Raster& r = it->second;
    if (p.size != set.size || p.x + p.size > r.width || p.y + p.size > r.height)
      throw DataError("manifest patch out of bounds in " + p.image);
    for (std::size_t y = 0; y < p.size; ++y)
      for (std::size_t x = 0; x < p.size; ++x)
        set.data.push_back(static_cast<T>(
            std::min(1.0, static_cast<double>(r.at(p.y + y, p.x + x)) / manifest.divisor)));
  }
  return set;
}

template std::vector<float> normalize_with<float>(const std::vector<float>&, double);
template std::vector<double> normalize_with<double>(const std::vector<float>&, double);
template Tensor<float> normalize<float>(const Raster&, double*, double);
template Tensor<double> normalize<double>(const Raster&, double*, double);
template std::vector<float> denormalize<float>(std::span<const float>, double);
template std::vector<float> denormalize<double>(std::span<const double>, double);
template PatchSet<float> load_patches<float>(const Manifest&, Split, const fs::path&);
template PatchSet<double> load_patches<double>(const Manifest&, Split, const fs::path&);

}  // namespace despeckle
