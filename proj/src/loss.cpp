#include "despeckle/loss.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <tuple>

#include "despeckle/error.hpp"
#include "despeckle/ops.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {

void LossWeights::validate() const {
  if (!(std::isfinite(lambda_edge) && lambda_edge >= 0.0) ||
      !(std::isfinite(lambda_kl) && lambda_kl >= 0.0))
    throw ConfigError("loss weights must be finite and nonnegative");
  if (kl_bins < 2) throw ConfigError("kl_bins must be at least 2");
  if (!(kl_range > 0.0) || !std::isfinite(kl_range)) throw ConfigError("kl_range must be positive");
  if (!(kl_bandwidth > 0.0) || !std::isfinite(kl_bandwidth))
    throw ConfigError("kl_bandwidth must be positive");
  if (!(eps_ratio > 0.0) || !std::isfinite(eps_ratio)) throw ConfigError("eps_ratio must be positive");
}

template <typename T>
Tensor<T> l2_loss(Tape<T>& tape, const Tensor<T>& estimate, const Tensor<T>& reference) {
  return ops::mean(tape, ops::square(tape, ops::sub(tape, estimate, reference)));
}

template <typename T>
Tensor<T> edge_loss(Tape<T>& tape, const Tensor<T>& estimate, const Tensor<T>& reference) {
  if (estimate.shape() != reference.shape())
    throw DimensionError("edge_loss: shape mismatch " + shape_string(estimate.shape()) + " vs " +
                         shape_string(reference.shape()));
  if (estimate.rank() != 4) throw DimensionError("edge_loss: inputs must be [B,C,H,W]");
  const std::size_t H = estimate.dim(2), W = estimate.dim(3);
  if (H < 2 || W < 2) throw DimensionError("edge_loss: spatial extents must be at least 2");
  // Differences are linear, so grad(X) - grad(X^) = grad(X - X^).
  Tensor<T> diff = ops::sub(tape, reference, estimate);
  Tensor<T> du = ops::sub(tape, ops::slice(tape, diff, 3, 1, W), ops::slice(tape, diff, 3, 0, W - 1));
  Tensor<T> dv = ops::sub(tape, ops::slice(tape, diff, 2, 1, H), ops::slice(tape, diff, 2, 0, H - 1));
  return ops::add(tape, ops::mean(tape, ops::square(tape, du)), ops::mean(tape, ops::square(tape, dv)));
}

namespace {

using BinKey = std::tuple<int, std::size_t, double, double, int>;

std::vector<double> compute_bin_mass(int looks, const LossWeights& w) {
  const std::size_t B = w.kl_bins;
  const double width = w.kl_range / static_cast<double>(B);
  std::vector<double> q(B, 0.0);
  if (w.kl_mode == KlMode::Hard) {
    for (std::size_t b = 0; b + 1 < B; ++b)
      q[b] = speckle_cdf((b + 1) * width, looks) - speckle_cdf(b * width, looks);
    q[B - 1] = 1.0 - speckle_cdf((B - 1) * width, looks);
    return q;
  }
  // Composite Simpson over [0, upper]; beyond `upper` every membership sits in the last bin.
  const double upper = w.kl_range + 40.0 * w.kl_bandwidth + 2.0 * width;
  const double step_target = std::min(w.kl_bandwidth, width) / 64.0;
  std::size_t intervals = static_cast<std::size_t>(std::ceil(upper / step_target));
  if (intervals % 2) ++intervals;
  const double h = upper / static_cast<double>(intervals);
  for (std::size_t k = 0; k <= intervals; ++k) {
    const double n = k * h;
    const double coef = (k == 0 || k == intervals) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    const double pdf = speckle_pdf(n, looks);
    if (pdf == 0.0) continue;
    const auto m = ops::soft_bin_weights(n, B, w.kl_range, w.kl_bandwidth);
    for (std::size_t b = 0; b < B; ++b) q[b] += coef * pdf * m[b];
  }
  for (double& v : q) v *= h / 3.0;
  q[B - 1] += 1.0 - speckle_cdf(upper, looks);
  return q;
}

}  // namespace

const std::vector<double>& speckle_bin_mass(int looks, const LossWeights& weights) {
  if (looks < 1) throw DomainError("number of looks must be >= 1");
  weights.validate();
  static std::mutex mu;
  static std::map<BinKey, std::vector<double>> cache;
  const BinKey key{looks, weights.kl_bins, weights.kl_range, weights.kl_bandwidth,
                   static_cast<int>(weights.kl_mode)};
  std::lock_guard lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, compute_bin_mass(looks, weights)).first;
  return it->second;
}

template <typename T>
Tensor<T> kl_loss(Tape<T>& tape, const Tensor<T>& noisy, const Tensor<T>& estimate, int looks,
                  const LossWeights& weights) {
  if (noisy.shape() != estimate.shape())
    throw DimensionError("kl_loss: shape mismatch " + shape_string(noisy.shape()) + " vs " +
                         shape_string(estimate.shape()));
  for (T v : noisy.data())
    if (!(v >= T(0))) throw DomainError("kl_loss: noisy intensities must be nonnegative");
  const auto& q = speckle_bin_mass(looks, weights);
  const std::size_t B = weights.kl_bins;

  std::vector<T> log_q(B);
  for (std::size_t b = 0; b < B; ++b) log_q[b] = static_cast<T>(std::log(std::max(q[b], kKlFloor)));

  try {
    if (weights.kl_mode == KlMode::Hard) {
      const double width = weights.kl_range / static_cast<double>(B);
      std::vector<double> counts(B, 0.0);
      auto y = noisy.data();
      auto x = estimate.data();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = static_cast<double>(y[i]) / std::max(static_cast<double>(x[i]), weights.eps_ratio);
        auto bin = static_cast<std::ptrdiff_t>(std::floor(r / width));
        bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(B) - 1);
        counts[static_cast<std::size_t>(bin)] += 1.0;
      }
      double kl = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double p = std::max(counts[b] / static_cast<double>(y.size()), kKlFloor);
        kl += p * (std::log(p) - static_cast<double>(log_q[b]));
      }
      Tensor<T> out = Tensor<T>::scalar(static_cast<T>(kl));
      ops::ensure_finite<T>(out.data(), "kl_loss");
      return out;
    }
    Tensor<T> floored = ops::clamp_min(tape, estimate, static_cast<T>(weights.eps_ratio));
    Tensor<T> ratio = ops::div(tape, noisy, floored);
    Tensor<T> hist = ops::soft_histogram(tape, ratio, B, static_cast<T>(weights.kl_range),
                                         static_cast<T>(weights.kl_bandwidth));
    Tensor<T> p = ops::clamp_min(tape, hist, static_cast<T>(kKlFloor));
    Tensor<T> log_ratio = ops::sub(tape, ops::log(tape, p), Tensor<T>({B}, log_q));
    return ops::sum(tape, ops::mul(tape, p, log_ratio));
  } catch (const NumericError& e) {
    throw NumericError(std::string("kl_loss: ") + e.what());
  }
}

template <typename T>
LossBreakdown<T> total_loss(Tape<T>& tape, const Tensor<T>& estimate, const Tensor<T>& reference,
                            const Tensor<T>& noisy, const LossWeights& weights, int looks) {
  weights.validate();
  LossBreakdown<T> out;
  Tensor<T> l2 = l2_loss(tape, estimate, reference);
  Tensor<T> edge = edge_loss(tape, estimate, reference);
  Tensor<T> kl = kl_loss(tape, noisy, estimate, looks, weights);
  out.l2 = static_cast<double>(l2.item());
  out.edge = static_cast<double>(edge.item());
  out.kl = static_cast<double>(kl.item());
  Tensor<T> total = l2;
  if (weights.lambda_edge != 0.0)
    total = ops::add(tape, total, ops::mul_scalar(tape, edge, static_cast<T>(weights.lambda_edge)));
  if (weights.lambda_kl != 0.0)
    total = ops::add(tape, total, ops::mul_scalar(tape, kl, static_cast<T>(weights.lambda_kl)));
  out.total = total;
  return out;
}

#define DESPECKLE_INSTANTIATE_LOSS(T)                                                           \
  template Tensor<T> l2_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> edge_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> kl_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&, int, const LossWeights&); \
  template LossBreakdown<T> total_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                       const Tensor<T>&, const LossWeights&, int);

DESPECKLE_INSTANTIATE_LOSS(float)
DESPECKLE_INSTANTIATE_LOSS(double)

}  // namespace despeckle
