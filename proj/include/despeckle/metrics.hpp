#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace despeckle::metrics {

// Borrowed single-channel image.
struct ImageView {
  std::span<const double> pixels;
  std::size_t height = 0;
  std::size_t width = 0;
};

double mse(std::span<const double> estimate, std::span<const double> reference);

// 10 log10(sum ref^2 / sum (ref - est)^2). +inf for a zero residual.
double snr_db(std::span<const double> estimate, std::span<const double> reference);

// Mean SSIM over all window x window placements (stride 1, uniform weights),
// C1 = (0.01 R)^2, C2 = (0.03 R)^2.
double ssim(const ImageView& estimate, const ImageView& reference, double dynamic_range,
            std::size_t window = 8);

// mean^2 / variance (population); +inf when the variance is zero.
double enl(std::span<const double> values);

struct Region {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

// ENL over a declared-homogeneous rectangle of at least 64 pixels.
double enl(const ImageView& image, const Region& region);

// Gray levels in [0, levels) after clipping to the [lo_pct, hi_pct]
// percentile range. A collapsed range maps everything at or below it to 0.
std::vector<int> quantize(std::span<const double> values, int levels, double lo_pct = 1.0,
                          double hi_pct = 99.0);

// Haralick homogeneity sum P(i,j) / (1 + |i - j|) of the symmetric GLCM
// averaged over offsets (0,1), (1,0), (1,1), (1,-1).
double glcm_homogeneity(std::span<const int> levels_image, std::size_t height, std::size_t width,
                        int levels);

struct RatioOptions {
  double eps_ratio = 1e-3;
  int levels = 64;
  double lo_pct = 1.0;
  double hi_pct = 99.0;
  int reference_draws = 4;
  std::uint64_t reference_seed = 0x5EED0001ULL;
};

// noisy / max(estimate, eps_ratio).
std::vector<double> ratio_image(std::span<const double> noisy, std::span<const double> estimate,
                                double eps_ratio);

// GLCM homogeneity of the quantized ratio image, before baseline removal.
double raw_ratio_homogeneity(const ImageView& noisy, const ImageView& estimate,
                             const RatioOptions& opts = {});

// Expected raw homogeneity of pure L-look speckle of this size (cached).
double speckle_homogeneity_baseline(int looks, std::size_t height, std::size_t width,
                                    const RatioOptions& opts = {});

// |raw - pure-speckle baseline|, in [0, 1]. Over-smoothing pushes raw below the baseline.
double ratio_homogeneity(const ImageView& noisy, const ImageView& estimate, int looks,
                         const RatioOptions& opts = {});

struct MIndexOptions {
  RatioOptions ratio;
  double kappa = 100.0;
  std::size_t block = 32;
  std::vector<double> cv_factors{1.1, 1.25, 1.5, 2.0, 3.0};
};

struct MIndexResult {
  double value = 0.0;          // enl_term + kappa * homogeneity
  double enl_ratio = 0.0;      // mean ENL of the ratio image over the selected blocks
  double enl_term = 0.0;       // min(|enl_ratio - L| / L, 1)
  double enl_estimate = 0.0;   // mean ENL of the estimate over the same blocks
  double homogeneity = 0.0;
  std::size_t blocks = 0;
  double cv_threshold = 0.0;
};

// No-reference quality proxy combining ratio-image ENL fidelity and ratio
// homogeneity. Not the published M-index formula; lower is better.
// Homogeneous blocks are chosen on the noisy image: the blocks whose
// coefficient of variation is below factor / sqrt(L) for the first factor
// that admits any block.
MIndexResult m_index_proxy(const ImageView& noisy, const ImageView& estimate, int looks,
                           const MIndexOptions& opts = {});

inline constexpr const char* kSnrDefinition =
    "snr_db = 10*log10(sum(reference^2) / sum((reference - estimate)^2))";

struct MetricsRow {
  std::string image;
  std::optional<double> ssim, snr_db, mse, enl, homogeneity, m_index_proxy;
};

struct MetricsReport {
  std::string mode;  // "reference" or "noreference"
  std::string model_id;
  std::string dataset_id;
  std::string timestamp;
  std::vector<MetricsRow> rows;

  // Column means over rows where the column is populated.
  MetricsRow aggregate() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

inline constexpr const char* kColumns[] = {"ssim", "snr_db", "mse", "enl", "homogeneity",
                                           "m_index_proxy"};

}  // namespace despeckle::metrics
