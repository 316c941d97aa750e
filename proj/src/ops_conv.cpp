#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "exreg/ops.hpp"
#include "gemm.hpp"

namespace exreg {

namespace {

struct ConvGeom {
  std::size_t channels, height, width;  // the "image" side of im2col
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // the "column" side
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose tap j lands inside [0, width).
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_columns(std::size_t j, const ConvGeom& g) {
  // x = ow*stride + j - pad must satisfy 0 <= x < width.
  const long s = static_cast<long>(g.stride);
  const long off = static_cast<long>(j) - static_cast<long>(g.pad);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(g.width) - 1 - off) >= 0 ? (static_cast<long>(g.width) - 1 - off) / s + 1 : 0;
  lo = std::min<long>(lo, static_cast<long>(g.out_w));
  hi = std::clamp<long>(hi, lo, static_cast<long>(g.out_w));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(c*kh+i)*kw+j, oh*out_w+ow] = img[c, oh*stride-pad+i, ow*stride-pad+j] (zero outside)
void im2col(const Real* img, const ConvGeom& g, Real* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const Real* plane = img + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        Real* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        const ValidRange r = valid_columns(j, g);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long y = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          Real* dst = row + oh * g.out_w;
          if (y < 0 || y >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, Real(0));
            continue;
          }
          std::fill(dst, dst + r.lo, Real(0));
          std::fill(dst + r.hi, dst + g.out_w, Real(0));
          const Real* src = plane + static_cast<std::size_t>(y) * g.width + (r.lo * g.stride + j - g.pad);
          if (g.stride == 1) {
            std::copy(src, src + (r.hi - r.lo), dst + r.lo);
          } else {
            for (std::size_t ow = r.lo; ow < r.hi; ++ow, src += g.stride) dst[ow] = *src;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: img += scatter(cols).
void col2im(const Real* cols, const ConvGeom& g, Real* img) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    Real* plane = img + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Real* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        const ValidRange r = valid_columns(j, g);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long y = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          Real* dst = plane + static_cast<std::size_t>(y) * g.width + (r.lo * g.stride + j - g.pad);
          const Real* src = row + oh * g.out_w;
          if (g.stride == 1) {
            for (std::size_t ow = r.lo; ow < r.hi; ++ow) dst[ow - r.lo] += src[ow];
          } else {
            for (std::size_t ow = r.lo; ow < r.hi; ++ow, dst += g.stride) *dst += src[ow];
          }
        }
      }
    }
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_conv_args(const char* op, const Var& x, const Var& w, int stride, int padding) {
  require(x.value().rank() == 4, std::string(op) + ": input must be rank 4 [N,C,H,W], got " +
                                     shape_str(x.shape()));
  require(w.value().rank() == 4, std::string(op) + ": weight must be rank 4, got " + shape_str(w.shape()));
  require(stride >= 1, std::string(op) + ": stride must be >= 1");
  require(padding >= 0, std::string(op) + ": padding must be >= 0");
  require(w.dim(2) >= 1 && w.dim(3) >= 1, std::string(op) + ": kernel size must be >= 1");
}

void add_channel_bias(Real* out, const Real* bias, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c) {
    const Real b = bias[c];
    Real* p = out + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

void accumulate_channel_sums(const Real* g, Real* db, std::size_t channels, std::size_t plane) {
  for (std::size_t c = 0; c < channels; ++c) {
    Real s = 0;
    const Real* p = g + c * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    db[c] += s;
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int padding) {
  check_conv_args("conv2d", x, w, stride, padding);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const std::size_t K = W.dim(0);
  require(W.dim(1) == C, "conv2d: weight dim 1 (input channels) = " + std::to_string(W.dim(1)) +
                             " does not match input dim 1 (channels) = " + std::to_string(C));
  const std::size_t kh = W.dim(2), kw = W.dim(3);
  const auto s = static_cast<std::size_t>(stride), p = static_cast<std::size_t>(padding);
  require(H + 2 * p >= kh, "conv2d: input dim 2 (height) " + std::to_string(H) + " smaller than kernel");
  require(Wd + 2 * p >= kw, "conv2d: input dim 3 (width) " + std::to_string(Wd) + " smaller than kernel");
  require((H + 2 * p - kh) % s == 0, "conv2d: input dim 2 (height) " + std::to_string(H) +
                                         " gives a fractional output size");
  require((Wd + 2 * p - kw) % s == 0, "conv2d: input dim 3 (width) " + std::to_string(Wd) +
                                          " gives a fractional output size");
  if (b.valid()) {
    require(b.value().size() == K, "conv2d: bias has " + std::to_string(b.value().size()) +
                                       " values for weight dim 0 (output channels) = " + std::to_string(K));
  }
  const ConvGeom g{C, H, Wd, kh, kw, s, p, (H + 2 * p - kh) / s + 1, (Wd + 2 * p - kw) / s + 1};
  Tensor out({N, K, g.out_h, g.out_w});
  // Columns are kept for the weight gradient when one will be needed.
  const bool keep = w.requires_grad() && !g.pointwise();
  auto cols = std::make_shared<std::vector<Real>>(g.pointwise() ? 0 : g.rows() * g.cols() * (keep ? N : 1));
  for (std::size_t n = 0; n < N; ++n) {
    const Real* xn = X.ptr() + n * C * H * Wd;
    const Real* colp = xn;
    if (!g.pointwise()) {
      Real* dst = cols->data() + (keep ? n * g.rows() * g.cols() : 0);
      im2col(xn, g, dst);
      colp = dst;
    }
    Real* on = out.ptr() + n * K * g.cols();
    detail::gemm(false, false, K, g.cols(), g.rows(), W.ptr(), colp, 0, on);
    if (b.valid()) add_channel_bias(on, b.value().ptr(), K, g.cols());
  }

  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return x.tape()->record(
      std::move(out), inputs,
      [x, w, b, g, N, K, cols](Tape& t, const Tensor&, const Tensor& gout) {
        const Tensor& X = x.value();
        const Tensor& W = w.value();
        const std::size_t in_plane = g.channels * g.height * g.width;
        std::vector<Real> dcols(x.requires_grad() && !g.pointwise() ? g.rows() * g.cols() : 0);
        for (std::size_t n = 0; n < N; ++n) {
          const Real* gn = gout.ptr() + n * K * g.cols();
          if (w.requires_grad()) {
            const Real* colp = g.pointwise() ? X.ptr() + n * in_plane : cols->data() + n * g.rows() * g.cols();
            detail::gemm(false, true, K, g.rows(), g.cols(), gn, colp, 1, t.grad_buffer(w.id()).ptr());
          }
          if (x.requires_grad()) {
            Real* dxn = t.grad_buffer(x.id()).ptr() + n * in_plane;
            if (g.pointwise()) {
              detail::gemm(true, false, g.rows(), g.cols(), K, W.ptr(), gn, 1, dxn);
            } else {
              detail::gemm(true, false, g.rows(), g.cols(), K, W.ptr(), gn, 0, dcols.data());
              col2im(dcols.data(), g, dxn);
            }
          }
          if (b.valid() && b.requires_grad()) {
            accumulate_channel_sums(gn, t.grad_buffer(b.id()).ptr(), K, g.cols());
          }
        }
      },
      "conv2d");
}

Var transposed_conv2d(const Var& x, const Var& w, const Var& b, int stride, int padding) {
  check_conv_args("transposed_conv2d", x, w, stride, padding);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const std::size_t N = X.dim(0), Cin = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  require(W.dim(0) == Cin, "transposed_conv2d: weight dim 0 (input channels) = " + std::to_string(W.dim(0)) +
                               " does not match input dim 1 (channels) = " + std::to_string(Cin));
  const std::size_t Cout = W.dim(1), kh = W.dim(2), kw = W.dim(3);
  const auto s = static_cast<std::size_t>(stride), p = static_cast<std::size_t>(padding);
  require(H >= 1 && Wd >= 1, "transposed_conv2d: empty spatial input");
  require((H - 1) * s + kh > 2 * p, "transposed_conv2d: input dim 2 (height) too small for padding");
  require((Wd - 1) * s + kw > 2 * p, "transposed_conv2d: input dim 3 (width) too small for padding");
  if (b.valid()) {
    require(b.value().size() == Cout, "transposed_conv2d: bias has " + std::to_string(b.value().size()) +
                                          " values for weight dim 1 (output channels) = " + std::to_string(Cout));
  }
  const std::size_t Ho = (H - 1) * s + kh - 2 * p, Wo = (Wd - 1) * s + kw - 2 * p;
  // Geometry of the conv whose input-gradient this op computes: image = output, columns = input.
  const ConvGeom g{Cout, Ho, Wo, kh, kw, s, p, H, Wd};
  Tensor out({N, Cout, Ho, Wo});
  std::vector<Real> cols(g.rows() * g.cols());
  for (std::size_t n = 0; n < N; ++n) {
    const Real* xn = X.ptr() + n * Cin * H * Wd;
    Real* on = out.ptr() + n * Cout * Ho * Wo;
    if (g.pointwise()) {
      detail::gemm(true, false, Cout, H * Wd, Cin, W.ptr(), xn, 0, on);
    } else {
      detail::gemm(true, false, g.rows(), g.cols(), Cin, W.ptr(), xn, 0, cols.data());
      col2im(cols.data(), g, on);
    }
    if (b.valid()) add_channel_bias(on, b.value().ptr(), Cout, Ho * Wo);
  }

  std::vector<Var> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return x.tape()->record(
      std::move(out), inputs,
      [x, w, b, g, N, Cin](Tape& t, const Tensor&, const Tensor& gout) {
        const Tensor& X = x.value();
        const Tensor& W = w.value();
        const std::size_t out_plane = g.channels * g.height * g.width;
        const std::size_t in_plane = Cin * g.cols();
        std::vector<Real> cols(g.pointwise() ? 0 : g.rows() * g.cols());
        for (std::size_t n = 0; n < N; ++n) {
          const Real* gn = gout.ptr() + n * out_plane;
          const Real* colp = gn;
          if (!g.pointwise()) {
            im2col(gn, g, cols.data());
            colp = cols.data();
          }
          if (x.requires_grad()) {
            Real* dxn = t.grad_buffer(x.id()).ptr() + n * in_plane;
            detail::gemm(false, false, Cin, g.cols(), g.rows(), W.ptr(), colp, 1, dxn);
          }
          if (w.requires_grad()) {
            const Real* xn = X.ptr() + n * in_plane;
            detail::gemm(false, true, Cin, g.rows(), g.cols(), xn, colp, 1, t.grad_buffer(w.id()).ptr());
          }
          if (b.valid() && b.requires_grad()) {
            accumulate_channel_sums(gn, t.grad_buffer(b.id()).ptr(), g.channels, g.height * g.width);
          }
        }
      },
      "transposed_conv2d");
}

Var avg_pool2d(const Var& x, int k) {
  const Tensor& X = x.value();
  require(X.rank() == 4, "avg_pool2d: input must be rank 4, got " + shape_str(X.shape()));
  require(k >= 1, "avg_pool2d: window must be >= 1");
  const auto kk = static_cast<std::size_t>(k);
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  require(H % kk == 0, "avg_pool2d: input dim 2 (height) " + std::to_string(H) + " not divisible by " +
                           std::to_string(k));
  require(W % kk == 0, "avg_pool2d: input dim 3 (width) " + std::to_string(W) + " not divisible by " +
                           std::to_string(k));
  const std::size_t Ho = H / kk, Wo = W / kk;
  const Real inv = Real(1) / static_cast<Real>(kk * kk);
  Tensor out({N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const Real* src = X.ptr() + nc * H * W;
    Real* dst = out.ptr() + nc * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        Real s = 0;
        for (std::size_t i = 0; i < kk; ++i) {
          for (std::size_t j = 0; j < kk; ++j) s += src[(oh * kk + i) * W + ow * kk + j];
        }
        dst[oh * Wo + ow] = s * inv;
      }
    }
  }
  return x.tape()->record(
      std::move(out), {x},
      [x, kk, N, C, H, W, Ho, Wo, inv](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& dx = t.grad_buffer(x.id());
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          Real* dst = dx.ptr() + nc * H * W;
          const Real* src = g.ptr() + nc * Ho * Wo;
          for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w) dst[h * W + w] += src[(h / kk) * Wo + w / kk] * inv;
          }
        }
      },
      "avg_pool2d");
}

namespace {

struct Tap {
  std::size_t i0, i1;
  Real frac;
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    const Real src = out > 1 ? static_cast<Real>(o * (in - 1)) / static_cast<Real>(out - 1) : Real(0);
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = Tap{i0, i1, src - static_cast<Real>(i0)};
  }
  return taps;
}

}  // namespace

Var bilinear_resize(const Var& x, std::size_t height, std::size_t width) {
  const Tensor& X = x.value();
  require(X.rank() == 4, "bilinear_resize: input must be rank 4, got " + shape_str(X.shape()));
  require(height >= 1 && width >= 1, "bilinear_resize: target size must be positive");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  require(H >= 1 && W >= 1, "bilinear_resize: empty input");
  auto ty = resize_taps(H, height);
  auto tx = resize_taps(W, width);
  Tensor out({N, C, height, width});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const Real* src = X.ptr() + nc * H * W;
    Real* dst = out.ptr() + nc * height * width;
    for (std::size_t oy = 0; oy < height; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < width; ++ox) {
        const Tap& b = tx[ox];
        const Real top = (1 - b.frac) * src[a.i0 * W + b.i0] + b.frac * src[a.i0 * W + b.i1];
        const Real bot = (1 - b.frac) * src[a.i1 * W + b.i0] + b.frac * src[a.i1 * W + b.i1];
        dst[oy * width + ox] = (1 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return x.tape()->record(
      std::move(out), {x},
      [x, ty = std::move(ty), tx = std::move(tx), N, C, H, W, height, width](Tape& t, const Tensor&, const Tensor& g) {
        Tensor& dx = t.grad_buffer(x.id());
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          Real* dst = dx.ptr() + nc * H * W;
          const Real* src = g.ptr() + nc * height * width;
          for (std::size_t oy = 0; oy < height; ++oy) {
            const Tap& a = ty[oy];
            for (std::size_t ox = 0; ox < width; ++ox) {
              const Tap& b = tx[ox];
              const Real v = src[oy * width + ox];
              dst[a.i0 * W + b.i0] += v * (1 - a.frac) * (1 - b.frac);
              dst[a.i0 * W + b.i1] += v * (1 - a.frac) * b.frac;
              dst[a.i1 * W + b.i0] += v * a.frac * (1 - b.frac);
              dst[a.i1 * W + b.i1] += v * a.frac * b.frac;
            }
          }
        }
      },
      "bilinear_resize");
}

}  // namespace exreg
