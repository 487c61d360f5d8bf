#include "despeckle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "despeckle/error.hpp"
#include "despeckle/parallel.hpp"

namespace despeckle::ops {
namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

template <typename T>
Tensor<T> finished(Tensor<T> out, const char* op) {
  ensure_finite<T>(out.data(), op);
  return out;
}

// Shared skeleton for ops of the form out[i] = f(a[i]) with da[i] = g[i] * df(a[i], out[i]).
template <typename T, typename F, typename D>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& a, const char* name, F f, D df) {
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  finished(out, name);
  if (tape.wants({&a})) {
    tape.record(name, out, [a, out, df]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = out.data();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
void ensure_finite(std::span<const T> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
  }
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  finished(out, "add");
  if (tape.wants({&a, &b})) {
    tape.record("add", out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  finished(out, "sub");
  if (tape.wants({&a, &b})) {
    tape.record("sub", out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  finished(out, "mul");
  if (tape.wants({&a, &b})) {
    tape.record("mul", out, [a, b, out]() mutable {
      auto g = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> div(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  Tensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto z = out.mutable_data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] / y[i];
  finished(out, "div");
  if (tape.wants({&a, &b})) {
    tape.record("div", out, [a, b, out]() mutable {
      auto g = out.grad();
      auto y = b.data();
      auto z = out.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * z[i] / y[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, T s) {
  return unary(
      tape, a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& a, T s) {
  return unary(
      tape, a, "mul_scalar", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> square(Tape<T>& tape, const Tensor<T>& a) {
  return unary(
      tape, a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& a) {
  return unary(
      tape, a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> clamp_min(Tape<T>& tape, const Tensor<T>& a, T floor) {
  return unary(
      tape, a, "clamp_min", [floor](T x) { return x > floor ? x : floor; },
      [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a) {
  return unary(
      tape, a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  finished(out, "sum");
  if (tape.wants({&a})) {
    tape.record("sum", out, [a, out]() mutable {
      T g = out.grad()[0];
      for (T& v : a.grad_buffer()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(a.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
  finished(out, "mean");
  if (tape.wants({&a})) {
    tape.record("mean", out, [a, out, n]() mutable {
      T g = static_cast<T>(out.grad()[0] / n);
      for (T& v : a.grad_buffer()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& a, std::size_t axis, std::size_t begin,
                std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range for " + shape_string(s));
  if (begin >= end || end > s[axis])
    throw DimensionError("slice: invalid range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") on axis of extent " + std::to_string(s[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t len = (end - begin) * inner;
  const std::size_t src_stride = s[axis] * inner;
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.begin() + o * src_stride + begin * inner, len, y.begin() + o * len);
  if (tape.wants({&a})) {
    tape.record("slice", out, [a, out, outer, inner, len, src_stride, begin]() mutable {
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = g.data() + o * len;
        T* dst = ga.data() + o * src_stride + begin * inner;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

namespace {

// Row/column range over which a tap at offset d reads inside [0, n).
struct Span1 {
  std::size_t lo, hi;
};
inline Span1 valid_range(std::ptrdiff_t d, std::size_t n) {
  std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -d);
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n),
                                               static_cast<std::ptrdiff_t>(n) - d);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias) {
  if (input.rank() != 4) throw DimensionError("conv2d: input must be [B,C,H,W]");
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be [Cout,Cin,K,K]");
  const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = kernel.dim(0), K = kernel.dim(2);
  if (kernel.dim(1) != Cin)
    throw DimensionError("conv2d: input has " + std::to_string(Cin) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)));
  if (kernel.dim(3) != K || K % 2 == 0)
    throw DimensionError("conv2d: kernel must be square with odd size");
  if (bias.numel() != Cout) throw DimensionError("conv2d: bias length must equal Cout");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::size_t plane = H * W;

  Tensor<T> out({B, Cout, H, W});
  {
    const T* in = input.data().data();
    const T* w = kernel.data().data();
    const T* bb = bias.data().data();
    T* o = out.mutable_data().data();
    parallel_for(B * Cout, [&](std::size_t job) {
      const std::size_t b = job / Cout, co = job % Cout;
      T* dst = o + job * plane;
      std::fill(dst, dst + plane, bb[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* src = in + (b * Cin + ci) * plane;
        const T* wk = w + (co * Cin + ci) * K * K;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
          const Span1 rows = valid_range(dy, H);
          for (std::size_t kx = 0; kx < K; ++kx) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
            const Span1 cols = valid_range(dx, W);
            const T wv = wk[ky * K + kx];
            for (std::size_t y = rows.lo; y < rows.hi; ++y) {
              T* drow = dst + y * W;
              const T* srow = src + (y + dy) * W;
              for (std::size_t x = cols.lo; x < cols.hi; ++x) drow[x] += wv * srow[x + dx];
            }
          }
        }
      }
    });
  }
  finished(out, "conv2d");

  if (tape.wants({&input, &kernel, &bias})) {
    tape.record("conv2d", out, [=]() mutable {
      const T* g = out.grad().data();
      if (input.requires_grad()) {
        T* gi = input.grad_buffer().data();
        const T* w = kernel.data().data();
        parallel_for(B * Cin, [&](std::size_t job) {
          const std::size_t b = job / Cin, ci = job % Cin;
          T* dst = gi + job * plane;
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* src = g + (b * Cout + co) * plane;
            const T* wk = w + (co * Cin + ci) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
              const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
              const Span1 rows = valid_range(dy, H);
              for (std::size_t kx = 0; kx < K; ++kx) {
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                const Span1 cols = valid_range(dx, W);
                const T wv = wk[ky * K + kx];
                for (std::size_t y = rows.lo; y < rows.hi; ++y) {
                  T* drow = dst + (y + dy) * W;
                  const T* srow = src + y * W;
                  for (std::size_t x = cols.lo; x < cols.hi; ++x) drow[x + dx] += wv * srow[x];
                }
              }
            }
          }
        });
      }
      if (kernel.requires_grad()) {
        T* gw = kernel.grad_buffer().data();
        const T* in = input.data().data();
        parallel_for(Cout * Cin, [&](std::size_t job) {
          const std::size_t co = job / Cin, ci = job % Cin;
          T* wk = gw + job * K * K;
          for (std::size_t ky = 0; ky < K; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            const Span1 rows = valid_range(dy, H);
            for (std::size_t kx = 0; kx < K; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const Span1 cols = valid_range(dx, W);
              T acc = T(0);
              for (std::size_t b = 0; b < B; ++b) {
                const T* gp = g + (b * Cout + co) * plane;
                const T* ip = in + (b * Cin + ci) * plane;
                for (std::size_t y = rows.lo; y < rows.hi; ++y) {
                  const T* grow = gp + y * W;
                  const T* irow = ip + (y + dy) * W;
                  T row_acc = T(0);
                  for (std::size_t x = cols.lo; x < cols.hi; ++x) row_acc += grow[x] * irow[x + dx];
                  acc += row_acc;
                }
              }
              wk[ky * K + kx] += acc;
            }
          }
        });
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t co = 0; co < Cout; ++co) {
          T acc = T(0);
          for (std::size_t b = 0; b < B; ++b) {
            const T* gp = g + (b * Cout + co) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
          }
          gb[co] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state, NormMode mode) {
  if (input.rank() != 4) throw DimensionError("batch_norm: input must be [B,C,H,W]");
  const std::size_t B = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw DimensionError("batch_norm: gamma/beta length must equal channel count");
  if (state.running_mean.size() != C || state.running_var.size() != C)
    throw StateError("batch_norm: running statistics have wrong channel count");
  const std::size_t n = B * plane;

  std::vector<T> mean(C), inv_std(C);
  if (mode == NormMode::Train) {
    if (n < 2) throw DimensionError("batch_norm: train mode needs at least 2 values per channel");
    const T* x = input.data().data();
    parallel_for(C, [&](std::size_t c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(n);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      const double unbiased = ss / static_cast<double>(n - 1);
      state.running_mean[c] = state.momentum * state.running_mean[c] +
                              (T(1) - state.momentum) * static_cast<T>(mu);
      state.running_var[c] = state.momentum * state.running_var[c] +
                             (T(1) - state.momentum) * static_cast<T>(unbiased);
    });
    ++state.updates;
  } else {
    if (state.updates == 0)
      throw StateError("batch_norm: eval mode requires running statistics from training");
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor<T> normalized(input.shape());
  Tensor<T> out(input.shape());
  {
    const T* x = input.data().data();
    const T* g = gamma.data().data();
    const T* bt = beta.data().data();
    T* xh = normalized.mutable_data().data();
    T* y = out.mutable_data().data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T v = (x[off + i] - mean[c]) * inv_std[c];
          xh[off + i] = v;
          y[off + i] = g[c] * v + bt[c];
        }
      }
  }
  finished(out, "batch_norm");

  if (tape.wants({&input, &gamma, &beta})) {
    tape.record("batch_norm", out, [=]() mutable {
      const T* gy = out.grad().data();
      const T* xh = normalized.data().data();
      const T* gm = gamma.data().data();
      std::vector<T> sum_g(C), sum_gx(C);
      for (std::size_t c = 0; c < C; ++c) {
        double sg = 0.0, sgx = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (b * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sg += gy[off + i];
            sgx += static_cast<double>(gy[off + i]) * xh[off + i];
          }
        }
        sum_g[c] = static_cast<T>(sg);
        sum_gx[c] = static_cast<T>(sgx);
      }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad_buffer();
        for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad_buffer();
        for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
      }
      if (input.requires_grad()) {
        T* gi = input.grad_buffer().data();
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * plane;
            const T scale = gm[c] * inv_std[c];
            if (mode == NormMode::Train) {
              for (std::size_t i = 0; i < plane; ++i)
                gi[off + i] +=
                    scale * (gy[off + i] - inv_n * sum_g[c] - xh[off + i] * inv_n * sum_gx[c]);
            } else {
              for (std::size_t i = 0; i < plane; ++i) gi[off + i] += scale * gy[off + i];
            }
          }
      }
    });
  }
  return out;
}

namespace {

constexpr double kUnderflowLogit = 750.0;
constexpr std::size_t kHistChunk = 4096;

struct HistGeometry {
  std::size_t bins;
  double width;
  double inv_two_var;
  double inv_var;
  std::ptrdiff_t half_window;
};

// Bins whose softmax weight can be nonzero in double precision.
inline std::pair<std::size_t, std::size_t> bin_window(double x, const HistGeometry& geo) {
  std::ptrdiff_t nearest = static_cast<std::ptrdiff_t>(std::floor(x / geo.width));
  nearest = std::clamp<std::ptrdiff_t>(nearest, 0, static_cast<std::ptrdiff_t>(geo.bins) - 1);
  std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, nearest - geo.half_window);
  std::ptrdiff_t hi =
      std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(geo.bins), nearest + geo.half_window + 1);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Softmax membership weights of x over bins [lo, hi).
inline void memberships(double x, const HistGeometry& geo, std::size_t lo, std::size_t hi,
                        double* w) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t b = lo; b < hi; ++b) {
    const double d = x - (static_cast<double>(b) + 0.5) * geo.width;
    w[b - lo] = -d * d * geo.inv_two_var;
    best = std::max(best, w[b - lo]);
  }
  double total = 0.0;
  for (std::size_t b = lo; b < hi; ++b) {
    const double l = w[b - lo] - best;
    w[b - lo] = l < -kUnderflowLogit ? 0.0 : std::exp(l);
    total += w[b - lo];
  }
  for (std::size_t b = lo; b < hi; ++b) w[b - lo] /= total;
}

}  // namespace

constexpr int kHistFixedBits = 60;

template <typename T>
Tensor<T> soft_histogram(Tape<T>& tape, const Tensor<T>& a, std::size_t bins, T range, T sigma) {
  if (bins < 2) throw DomainError("soft_histogram: need at least 2 bins");
  if (!(range > T(0)) || !(sigma > T(0)))
    throw DomainError("soft_histogram: range and bandwidth must be positive");
  const double width = static_cast<double>(range) / static_cast<double>(bins);
  const double sg = static_cast<double>(sigma);
  HistGeometry geo{bins, width, 1.0 / (2.0 * sg * sg), 1.0 / (sg * sg),
                   static_cast<std::ptrdiff_t>(std::ceil(std::sqrt(2.0 * kUnderflowLogit) * sg / width)) + 2};

  const auto x = a.data();
  const std::size_t n = x.size();
  const std::size_t chunks = (n + kHistChunk - 1) / kHistChunk;
  // fixed-point sums: exact, so the result does not depend on pixel order
  std::vector<__int128> partial(chunks * bins, 0);
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<double> w(bins);
    __int128* acc = partial.data() + c * bins;
    const std::size_t end = std::min(n, (c + 1) * kHistChunk);
    for (std::size_t i = c * kHistChunk; i < end; ++i) {
      const double xi = x[i];
      auto [lo, hi] = bin_window(xi, geo);
      memberships(xi, geo, lo, hi, w.data());
      for (std::size_t b = lo; b < hi; ++b)
        acc[b] += static_cast<std::int64_t>(std::llround(std::ldexp(w[b - lo], kHistFixedBits)));
    }
  });
  Tensor<T> out({bins});
  auto p = out.mutable_data();
  for (std::size_t b = 0; b < bins; ++b) {
    __int128 s = 0;
    for (std::size_t c = 0; c < chunks; ++c) s += partial[c * bins + b];
    p[b] = static_cast<T>(std::ldexp(static_cast<double>(s), -kHistFixedBits) / static_cast<double>(n));
  }
  finished(out, "soft_histogram");

  if (tape.wants({&a})) {
    tape.record("soft_histogram", out, [a, out, geo, n, chunks]() mutable {
      const auto g = out.grad();
      const auto x = a.data();
      T* ga = a.grad_buffer().data();
      const double inv_n = 1.0 / static_cast<double>(n);
      parallel_for(chunks, [&](std::size_t c) {
        std::vector<double> w(geo.bins);
        const std::size_t end = std::min(n, (c + 1) * kHistChunk);
        for (std::size_t i = c * kHistChunk; i < end; ++i) {
          const double xi = x[i];
          auto [lo, hi] = bin_window(xi, geo);
          memberships(xi, geo, lo, hi, w.data());
          // d w_b / dx = w_b (s_b - sum_k w_k s_k), s_b = -(x - c_b) / sigma^2
          double gws = 0.0, gw = 0.0, ws = 0.0;
          for (std::size_t b = lo; b < hi; ++b) {
            const double s = -(xi - (static_cast<double>(b) + 0.5) * geo.width) * geo.inv_var;
            const double wb = w[b - lo];
            gws += static_cast<double>(g[b]) * wb * s;
            gw += static_cast<double>(g[b]) * wb;
            ws += wb * s;
          }
          ga[i] += static_cast<T>(inv_n * (gws - gw * ws));
        }
      });
    });
  }
  return out;
}

#define DESPECKLE_INSTANTIATE_OPS(T)                                                       \
  template void ensure_finite<T>(std::span<const T>, const char*);                         \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> div(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> add_scalar(Tape<T>&, const Tensor<T>&, T);                            \
  template Tensor<T> mul_scalar(Tape<T>&, const Tensor<T>&, T);                            \
  template Tensor<T> square(Tape<T>&, const Tensor<T>&);                                   \
  template Tensor<T> log(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> clamp_min(Tape<T>&, const Tensor<T>&, T);                             \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                     \
  template Tensor<T> slice(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> batch_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                BatchNormState<T>&, NormMode);                             \
  template Tensor<T> soft_histogram(Tape<T>&, const Tensor<T>&, std::size_t, T, T);

DESPECKLE_INSTANTIATE_OPS(float)
DESPECKLE_INSTANTIATE_OPS(double)

}  // namespace despeckle::ops

namespace despeckle::ops {

std::vector<double> soft_bin_weights(double x, std::size_t bins, double range, double sigma) {
  if (bins < 2 || !(range > 0.0) || !(sigma > 0.0))
    throw DomainError("soft_bin_weights: invalid histogram geometry");
  const double width = range / static_cast<double>(bins);
  HistGeometry geo{bins, width, 1.0 / (2.0 * sigma * sigma), 1.0 / (sigma * sigma),
                   static_cast<std::ptrdiff_t>(std::ceil(std::sqrt(2.0 * kUnderflowLogit) * sigma / width)) + 2};
  std::vector<double> w(bins, 0.0), tmp(bins);
  auto [lo, hi] = bin_window(x, geo);
  memberships(x, geo, lo, hi, tmp.data());
  for (std::size_t b = lo; b < hi; ++b) w[b] = tmp[b - lo];
  return w;
}

}  // namespace despeckle::ops
