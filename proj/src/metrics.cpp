#include "despeckle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include "despeckle/dataset.hpp"
#include "despeckle/error.hpp"
#include "despeckle/random.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle::metrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": size mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  if (a == 0) throw DimensionError(std::string(op) + ": empty input");
}

void check_view(const ImageView& v, const char* op) {
  if (v.pixels.size() != v.height * v.width || v.pixels.empty())
    throw DimensionError(std::string(op) + ": pixel count does not match image extents");
}

// (H+1) x (W+1) summed-area table of f(a, b).
template <typename F>
std::vector<double> integral(std::span<const double> a, std::span<const double> b, std::size_t H,
                             std::size_t W, F f) {
  std::vector<double> I((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < W; ++x) {
      row += f(a[y * W + x], b[y * W + x]);
      I[(y + 1) * (W + 1) + x + 1] = I[y * (W + 1) + x + 1] + row;
    }
  }
  return I;
}

inline double box_sum(const std::vector<double>& I, std::size_t W, std::size_t y, std::size_t x,
                      std::size_t k) {
  const std::size_t s = W + 1;
  return I[(y + k) * s + x + k] - I[y * s + x + k] - I[(y + k) * s + x] + I[y * s + x];
}

}  // namespace

double mse(std::span<const double> estimate, std::span<const double> reference) {
  require_same_size(estimate.size(), reference.size(), "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = estimate[i] - reference[i];
    acc += d * d;
  }
  return acc / static_cast<double>(estimate.size());
}

double snr_db(std::span<const double> estimate, std::span<const double> reference) {
  require_same_size(estimate.size(), reference.size(), "snr_db");
  double signal = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    signal += reference[i] * reference[i];
    const double d = reference[i] - estimate[i];
    residual += d * d;
  }
  if (signal == 0.0) throw DomainError("snr_db: reference image is all zero");
  if (residual == 0.0) return kInf;
  return 10.0 * std::log10(signal / residual);
}

double ssim(const ImageView& estimate, const ImageView& reference, double dynamic_range,
            std::size_t window) {
  check_view(estimate, "ssim");
  check_view(reference, "ssim");
  if (estimate.height != reference.height || estimate.width != reference.width)
    throw DimensionError("ssim: image extents differ");
  const std::size_t H = estimate.height, W = estimate.width;
  if (window == 0 || H < window || W < window)
    throw DimensionError("ssim: image smaller than the " + std::to_string(window) + "-pixel window");
  if (!(dynamic_range > 0.0)) throw DomainError("ssim: dynamic range must be positive");

  const auto& a = estimate.pixels;
  const auto& b = reference.pixels;
  const auto Ia = integral(a, b, H, W, [](double x, double) { return x; });
  const auto Ib = integral(a, b, H, W, [](double, double y) { return y; });
  const auto Iaa = integral(a, b, H, W, [](double x, double) { return x * x; });
  const auto Ibb = integral(a, b, H, W, [](double, double y) { return y * y; });
  const auto Iab = integral(a, b, H, W, [](double x, double y) { return x * y; });

  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + window <= H; ++y)
    for (std::size_t x = 0; x + window <= W; ++x) {
      const double mx = box_sum(Ia, W, y, x, window) / n;
      const double my = box_sum(Ib, W, y, x, window) / n;
      const double vx = box_sum(Iaa, W, y, x, window) / n - mx * mx;
      const double vy = box_sum(Ibb, W, y, x, window) / n - my * my;
      const double cov = box_sum(Iab, W, y, x, window) / n - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

double enl(std::span<const double> values) {
  if (values.empty()) throw DimensionError("enl: empty region");
  double s = 0.0;
  for (double v : values) s += v;
  const double mu = s / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  const double var = ss / static_cast<double>(values.size());
  if (var == 0.0) return kInf;
  return mu * mu / var;
}

double enl(const ImageView& image, const Region& region) {
  check_view(image, "enl");
  if (region.row + region.height > image.height || region.col + region.width > image.width)
    throw DimensionError("enl: region exceeds image bounds");
  if (region.height * region.width < 64)
    throw DimensionError("enl: region must hold at least 64 pixels");
  std::vector<double> values;
  values.reserve(region.height * region.width);
  for (std::size_t y = 0; y < region.height; ++y)
    for (std::size_t x = 0; x < region.width; ++x)
      values.push_back(image.pixels[(region.row + y) * image.width + region.col + x]);
  return enl(values);
}

std::vector<int> quantize(std::span<const double> values, int levels, double lo_pct, double hi_pct) {
  if (levels < 2) throw DomainError("quantize: need at least 2 gray levels");
  if (values.empty()) throw DimensionError("quantize: empty input");
  std::vector<double> copy(values.begin(), values.end());
  const double lo = percentile(copy, lo_pct);
  const double hi = percentile(std::move(copy), hi_pct);
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw DomainError("quantize: non-finite percentile range");
  std::vector<int> out(values.size());
  const double span = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    int q;
    if (!(span > 0.0)) {
      q = v > hi ? levels - 1 : 0;
    } else {
      q = static_cast<int>(std::floor((v - lo) / span * levels));
    }
    out[i] = std::clamp(q, 0, levels - 1);
  }
  return out;
}

double glcm_homogeneity(std::span<const int> img, std::size_t H, std::size_t W, int levels) {
  if (img.size() != H * W || img.empty()) throw DimensionError("glcm: size mismatch");
  const std::size_t G = static_cast<std::size_t>(levels);
  struct Offset {
    std::ptrdiff_t dy, dx;
  };
  constexpr Offset offsets[] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  std::vector<double> counts(G * G);
  double homogeneity = 0.0;
  int used = 0;
  for (const Offset& o : offsets) {
    std::fill(counts.begin(), counts.end(), 0.0);
    double pairs = 0.0;
    for (std::size_t y = 0; y + static_cast<std::size_t>(o.dy) < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(x) + o.dx;
        if (nx < 0 || nx >= static_cast<std::ptrdiff_t>(W)) continue;
        const int i = img[y * W + x];
        const int j = img[(y + static_cast<std::size_t>(o.dy)) * W + static_cast<std::size_t>(nx)];
        if (i < 0 || j < 0 || i >= levels || j >= levels)
          throw DomainError("glcm: gray level out of range");
        counts[static_cast<std::size_t>(i) * G + static_cast<std::size_t>(j)] += 1.0;
        counts[static_cast<std::size_t>(j) * G + static_cast<std::size_t>(i)] += 1.0;
        pairs += 2.0;
      }
    if (pairs == 0.0) continue;
    double h = 0.0;
    for (std::size_t i = 0; i < G; ++i)
      for (std::size_t j = 0; j < G; ++j) {
        const double d = i > j ? double(i - j) : double(j - i);
        h += counts[i * G + j] / pairs / (1.0 + d);
      }
    homogeneity += h;
    ++used;
  }
  if (used == 0) throw DimensionError("glcm: image too small for any offset");
  return homogeneity / used;
}

std::vector<double> ratio_image(std::span<const double> noisy, std::span<const double> estimate,
                                double eps_ratio) {
  require_same_size(noisy.size(), estimate.size(), "ratio_image");
  if (!(eps_ratio > 0.0)) throw DomainError("ratio_image: eps_ratio must be positive");
  std::vector<double> r(noisy.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = noisy[i] / std::max(estimate[i], eps_ratio);
  return r;
}

double raw_ratio_homogeneity(const ImageView& noisy, const ImageView& estimate,
                             const RatioOptions& opts) {
  check_view(noisy, "ratio_homogeneity");
  check_view(estimate, "ratio_homogeneity");
  if (noisy.height != estimate.height || noisy.width != estimate.width)
    throw DimensionError("ratio_homogeneity: image extents differ");
  const auto r = ratio_image(noisy.pixels, estimate.pixels, opts.eps_ratio);
  const auto q = quantize(r, opts.levels, opts.lo_pct, opts.hi_pct);
  return glcm_homogeneity(q, noisy.height, noisy.width, opts.levels);
}

double speckle_homogeneity_baseline(int looks, std::size_t height, std::size_t width,
                                    const RatioOptions& opts) {
  using Key = std::tuple<int, std::size_t, std::size_t, int, double, double, int, std::uint64_t>;
  static std::mutex mu;
  static std::map<Key, double> cache;
  const Key key{looks, height, width, opts.levels, opts.lo_pct, opts.hi_pct, opts.reference_draws,
                opts.reference_seed};
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const int draws = std::max(1, opts.reference_draws);
  double acc = 0.0;
  std::vector<double> field(height * width);
  for (int d = 0; d < draws; ++d) {
    fill_speckle(field, looks, mix_seed({opts.reference_seed, static_cast<std::uint64_t>(d)}));
    const auto q = quantize(field, opts.levels, opts.lo_pct, opts.hi_pct);
    acc += glcm_homogeneity(q, height, width, opts.levels);
  }
  const double base = acc / draws;
  std::lock_guard lock(mu);
  cache.emplace(key, base);
  return base;
}

double ratio_homogeneity(const ImageView& noisy, const ImageView& estimate, int looks,
                         const RatioOptions& opts) {
  const double raw = raw_ratio_homogeneity(noisy, estimate, opts);
  const double base = speckle_homogeneity_baseline(looks, noisy.height, noisy.width, opts);
  return std::clamp(std::abs(raw - base), 0.0, 1.0);
}

MIndexResult m_index_proxy(const ImageView& noisy, const ImageView& estimate, int looks,
                           const MIndexOptions& opts) {
  if (looks < 1) throw DomainError("m_index_proxy: looks must be >= 1");
  check_view(noisy, "m_index_proxy");
  check_view(estimate, "m_index_proxy");
  if (noisy.height != estimate.height || noisy.width != estimate.width)
    throw DimensionError("m_index_proxy: image extents differ");
  const std::size_t H = noisy.height, W = noisy.width;
  std::size_t block = opts.block;
  while (block > 8 && (H < block || W < block)) block /= 2;
  if (H < block || W < block || block * block < 64)
    throw DimensionError("m_index_proxy: image too small for homogeneous-block search");

  struct Block {
    std::size_t row, col;
    double cv;
  };
  std::vector<Block> blocks;
  std::vector<double> vals(block * block);
  for (std::size_t by = 0; by + block <= H; by += block)
    for (std::size_t bx = 0; bx + block <= W; bx += block) {
      for (std::size_t y = 0; y < block; ++y)
        for (std::size_t x = 0; x < block; ++x)
          vals[y * block + x] = noisy.pixels[(by + y) * W + bx + x];
      const double e = enl(vals);
      double mu = 0.0;
      for (double v : vals) mu += v;
      if (mu <= 0.0 || !std::isfinite(e) || e <= 0.0) continue;
      blocks.push_back({by, bx, 1.0 / std::sqrt(e)});
    }

  const double nominal = 1.0 / std::sqrt(static_cast<double>(looks));
  std::vector<Block> chosen;
  double threshold = 0.0;
  for (double f : opts.cv_factors) {
    threshold = f * nominal;
    for (const auto& b : blocks)
      if (b.cv <= threshold) chosen.push_back(b);
    if (!chosen.empty()) break;
  }
  if (chosen.empty()) {
    std::ostringstream os;
    os << "m_index_proxy: no homogeneous " << block << "x" << block
       << " block found; coefficient-of-variation thresholds tried:";
    for (double f : opts.cv_factors) os << ' ' << f * nominal;
    throw DataError(os.str());
  }

  const auto ratio = ratio_image(noisy.pixels, estimate.pixels, opts.ratio.eps_ratio);
  MIndexResult res;
  res.blocks = chosen.size();
  res.cv_threshold = threshold;
  double enl_r = 0.0, enl_e = 0.0;
  for (const auto& b : chosen) {
    std::vector<double> rv, ev;
    rv.reserve(block * block);
    ev.reserve(block * block);
    for (std::size_t y = 0; y < block; ++y)
      for (std::size_t x = 0; x < block; ++x) {
        rv.push_back(ratio[(b.row + y) * W + b.col + x]);
        ev.push_back(estimate.pixels[(b.row + y) * W + b.col + x]);
      }
    enl_r += enl(rv);
    enl_e += enl(ev);
  }
  res.enl_ratio = enl_r / static_cast<double>(chosen.size());
  res.enl_estimate = enl_e / static_cast<double>(chosen.size());
  const double L = looks;
  res.enl_term = std::isfinite(res.enl_ratio) ? std::min(std::abs(res.enl_ratio - L) / L, 1.0) : 1.0;
  res.homogeneity = ratio_homogeneity(noisy, estimate, looks, opts.ratio);
  res.value = res.enl_term + opts.kappa * res.homogeneity;
  return res;
}

namespace {

std::optional<double> MetricsRow::*const kFields[] = {
    &MetricsRow::ssim,        &MetricsRow::snr_db,       &MetricsRow::mse,
    &MetricsRow::enl,         &MetricsRow::homogeneity, &MetricsRow::m_index_proxy};

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

MetricsRow MetricsReport::aggregate() const {
  MetricsRow agg;
  agg.image = "mean";
  for (auto field : kFields) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if ((r.*field).has_value()) {
        s += *(r.*field);
        ++n;
      }
    if (n > 0) agg.*field = s / static_cast<double>(n);
  }
  return agg;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "image";
  for (const char* c : kColumns) os << ',' << c;
  os << '\n';
  for (const auto& r : rows) {
    os << r.image;
    for (auto field : kFields) {
      os << ',';
      if ((r.*field).has_value()) os << format_number(*(r.*field));
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["model"] = model_id;
  j["dataset"] = dataset_id;
  j["timestamp"] = timestamp;
  j["count"] = rows.size();
  j["snr_definition"] = kSnrDefinition;
  j["m_index_note"] = "m_index_proxy = min(|ENL(ratio) - L| / L, 1) + 100 * homogeneity; a proxy, not the published M-index";
  const MetricsRow agg = aggregate();
  nlohmann::json mean = nlohmann::json::object();
  for (std::size_t k = 0; k < std::size(kFields); ++k) {
    const auto& v = agg.*kFields[k];
    if (!v) continue;
    if (std::isfinite(*v))
      mean[kColumns[k]] = *v;
    else
      mean[kColumns[k]] = format_number(*v);
  }
  j["mean"] = mean;
  return j;
}

}  // namespace despeckle::metrics
