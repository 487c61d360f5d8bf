#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "despeckle/loss.hpp"
#include "despeckle/speckle.hpp"

namespace testing_support {

using namespace despeckle;

std::vector<double> conv_oracle(const std::vector<double>& in, const std::vector<double>& w,
                                const std::vector<double>& b, std::size_t B, std::size_t Cin,
                                std::size_t Cout, std::size_t H, std::size_t W, std::size_t K) {
  const long pad = static_cast<long>(K / 2);
  std::vector<double> out(B * Cout * H * W, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long sy = static_cast<long>(y + ky) - pad;
                const long sx = static_cast<long>(x + kx) - pad;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W)) continue;
                acc += in[((n * Cin + ci) * H + sy) * W + sx] * w[((co * Cin + ci) * K + ky) * K + kx];
              }
          out[((n * Cout + co) * H + y) * W + x] = acc;
        }
  return out;
}

double l2_oracle(const std::vector<double>& est, const std::vector<double>& ref) {
  double s = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) s += (est[i] - ref[i]) * (est[i] - ref[i]);
  return s / static_cast<double>(est.size());
}

double edge_oracle(const std::vector<double>& est, const std::vector<double>& ref, std::size_t planes,
                   std::size_t H, std::size_t W) {
  double su = 0.0, sv = 0.0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t k = (p * H + i) * W + j;
        const double d = ref[k] - est[k];
        if (j + 1 < W) {
          const double du = (ref[k + 1] - est[k + 1]) - d;
          su += du * du;
        }
        if (i + 1 < H) {
          const double dv = (ref[k + W] - est[k + W]) - d;
          sv += dv * dv;
        }
      }
  return su / static_cast<double>(planes * H * (W - 1)) + sv / static_cast<double>(planes * (H - 1) * W);
}

double mse_oracle(const std::vector<double>& est, const std::vector<double>& ref) { return l2_oracle(est, ref); }

double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t H, std::size_t W,
                   double range, std::size_t window) {
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + window <= H; ++y)
    for (std::size_t x = 0; x + window <= W; ++x) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < window; ++i)
        for (std::size_t j = 0; j < window; ++j) {
          ma += a[(y + i) * W + x + j];
          mb += b[(y + i) * W + x + j];
        }
      ma /= n;
      mb /= n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (std::size_t i = 0; i < window; ++i)
        for (std::size_t j = 0; j < window; ++j) {
          const double da = a[(y + i) * W + x + j] - ma, db = b[(y + i) * W + x + j] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n;
      vb /= n;
      cov /= n;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

std::vector<ParamGrad> finite_difference_check(const std::function<double()>& loss,
                                               std::vector<Tensor<double>>& params,
                                               const std::vector<std::string>& names,
                                               const std::vector<std::vector<double>>& analytic, double h) {
  std::vector<ParamGrad> out;
  const double f0 = loss();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto data = params[p].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = loss();
      data[i] = saved - h;
      const double fm = loss();
      data[i] = saved;
      ParamGrad g;
      g.name = names[p];
      g.index = i;
      g.analytic = analytic[p][i];
      g.numeric = (fp - fm) / (2.0 * h);
      g.rel_error = relative_error(g.analytic, g.numeric);
      // Second differences at h and h/2 agree for smooth f; a slope jump
      // inside the stencil scales them like 1/h.
      data[i] = saved + h / 2;
      const double fp2 = loss();
      data[i] = saved - h / 2;
      const double fm2 = loss();
      data[i] = saved;
      const double d2 = (fp - 2.0 * f0 + fm) / (h * h);
      const double d2_half = (fp2 - 2.0 * f0 + fm2) / (h * h / 4.0);
      const double noise = 64.0 * 2.2e-16 * std::max(std::abs(f0), 1e-3) / (h * h / 4.0);
      g.kink = std::abs(d2_half - d2) > 0.25 * std::abs(d2) + noise;
      out.push_back(g);
    }
  }
  return out;
}

std::vector<TensorGrad> per_tensor(const std::vector<ParamGrad>& grads) {
  std::vector<TensorGrad> out;
  std::vector<double> diff2, a2, n2;
  for (const auto& g : grads) {
    if (out.empty() || out.back().name != g.name || g.index == 0) {
      out.push_back({g.name});
      diff2.push_back(0.0);
      a2.push_back(0.0);
      n2.push_back(0.0);
    }
    auto& t = out.back();
    ++t.entries;
    t.worst_entry = std::max(t.worst_entry, g.rel_error);
    t.kink = t.kink || g.kink;
    diff2.back() += (g.analytic - g.numeric) * (g.analytic - g.numeric);
    a2.back() += g.analytic * g.analytic;
    n2.back() += g.numeric * g.numeric;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double scale = std::max({std::sqrt(a2[i]), std::sqrt(n2[i]), kGradNormFloor});
    out[i].rel_error = std::sqrt(diff2[i]) / scale;
  }
  return out;
}

CompositeGradReport composite_gradcheck(std::uint64_t seed, double h, const LossWeights& weights) {
  NetworkConfig cfg;
  cfg.depth = 4;
  cfg.width = 8;
  cfg.seed = seed;
  Model<double> model(cfg);
  Rng rng(mix_seed({seed, 0xC0DEULL}));
  auto params = model.parameters();
  const auto names = model.parameter_names();
  // Move off the symmetric initial point so every parameter has a generic gradient.
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto d = params[p].mutable_data();
    const bool is_gamma = names[p].find("gamma") != std::string::npos;
    for (auto& v : d) v += is_gamma ? 0.5 * (rng.uniform() - 0.5) : 0.1 * rng.normal();
  }
  // Tail scaled so the estimate sits in a plausible intensity band, clear of eps_ratio.
  for (auto& v : params[params.size() - 2].mutable_data()) v *= 0.15;
  params.back().mutable_data()[0] += 0.6;

  Tensor<double> clean = uniform_tensor<double>({1, 1, 8, 8}, rng, 0.2, 1.0);
  Tensor<double> noisy = corrupt(clean, 1, mix_seed({seed, 0x5EULL})).noisy;

  auto evaluate = [&](Tape<double>& tape) {
    Tensor<double> est = model.forward(tape, noisy, ops::NormMode::Train);
    return total_loss(tape, est, clean, noisy, weights, 1).total;
  };

  for (auto& p : params) p.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> root = evaluate(tape);
  CompositeGradReport r;
  {
    Tape<double> off(false);
    const Tensor<double> out = model.forward(off, noisy, ops::NormMode::Train);
    const auto est = out.data();
    r.estimate_min = *std::min_element(est.begin(), est.end());
    r.estimate_max = *std::max_element(est.begin(), est.end());
  }
  backward(root, tape);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    p.clear_grad();
  }

  auto loss = [&] {
    Tape<double> off(false);
    return evaluate(off).item();
  };
  r.grads = finite_difference_check(loss, params, names, analytic, h);
  r.tensors = per_tensor(r.grads);
  for (const auto& t : r.tensors) {
    if (t.kink) {
      ++r.kink_tensors;
      r.worst_kink = std::max(r.worst_kink, t.rel_error);
    } else {
      r.worst_smooth = std::max(r.worst_smooth, t.rel_error);
    }
  }
  return r;
}

}  // namespace testing_support
