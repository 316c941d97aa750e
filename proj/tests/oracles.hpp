#pragma once

// Direct loop implementations used as independent references in the tests.

#include <cmath>
#include <vector>

#include "exreg/image.hpp"
#include "exreg/random.hpp"
#include "exreg/tensor.hpp"

namespace oracle {

using exreg::Real;
using exreg::Tensor;

inline Tensor random_tensor(exreg::Rng& rng, exreg::Shape shape, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline exreg::Image random_image(exreg::Rng& rng, std::size_t h, std::size_t w) {
  exreg::Image img(h, w);
  for (auto& v : img.pixels) v = static_cast<Real>(rng.uniform(0, 1));
  return img;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// x [N,C,H,W], w [K,C,kh,kw], b [K] or empty.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const long OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  Tensor out({std::size_t(N), std::size_t(K), std::size_t(OH), std::size_t(OW)});
  for (long n = 0; n < N; ++n)
    for (long k = 0; k < K; ++k)
      for (long oy = 0; oy < OH; ++oy)
        for (long ox = 0; ox < OW; ++ox) {
          double acc = b.empty() ? 0.0 : b[k];
          for (long c = 0; c < C; ++c)
            for (long i = 0; i < kh; ++i)
              for (long j = 0; j < kw; ++j) {
                const long y = oy * stride + i - pad, xx = ox * stride + j - pad;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                acc += w.at(k, c, i, j) * x.at(n, c, y, xx);
              }
          out.at(n, k, oy, ox) = static_cast<Real>(acc);
        }
  return out;
}

// Scatter form: every input pixel stamps the kernel into the output. w [Cin,Cout,kh,kw].
inline Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const long OH = (H - 1) * stride - 2 * pad + kh, OW = (W - 1) * stride - 2 * pad + kw;
  Tensor out({std::size_t(N), std::size_t(O), std::size_t(OH), std::size_t(OW)});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long y = 0; y < OH; ++y)
        for (long xx = 0; xx < OW; ++xx) out.at(n, o, y, xx) = b.empty() ? 0 : b[o];
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c)
      for (long iy = 0; iy < H; ++iy)
        for (long ix = 0; ix < W; ++ix)
          for (long o = 0; o < O; ++o)
            for (long i = 0; i < kh; ++i)
              for (long j = 0; j < kw; ++j) {
                const long y = iy * stride - pad + i, xx = ix * stride - pad + j;
                if (y < 0 || y >= OH || xx < 0 || xx >= OW) continue;
                out.at(n, o, y, xx) += x.at(n, c, iy, ix) * w.at(c, o, i, j);
              }
  return out;
}

inline Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  const std::size_t N = x.dim(0), C = x.dim(1), OH = x.dim(2) / k, OW = x.dim(3) / k;
  Tensor out({N, C, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = 0;
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) s += x.at(n, c, oy * k + i, ox * k + j);
          out.at(n, c, oy, ox) = static_cast<Real>(s / double(k * k));
        }
  return out;
}

inline double psnr(const exreg::Image& a, const exreg::Image& b) {
  double se = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = double(a.pixels[i]) - double(b.pixels[i]);
    se += d * d;
  }
  const double mse = se / double(a.pixels.size());
  return 10.0 * std::log10(1.0 / mse);
}

// SSIM with an explicit 11x11 Gaussian window (sigma 1.5) evaluated at every fully-contained
// position, averaged over positions and channels.
inline double ssim(const exreg::Image& a, const exreg::Image& b) {
  const int R = 5;
  double g[11][11];
  double gs = 0;
  for (int i = -R; i <= R; ++i)
    for (int j = -R; j <= R; ++j) gs += g[i + R][j + R] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  for (auto& row : g)
    for (double& v : row) v /= gs;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = R; y + R < a.height; ++y)
      for (std::size_t x = R; x + R < a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = -R; i <= R; ++i)
          for (int j = -R; j <= R; ++j) {
            const double wv = g[i + R][j + R];
            const double va = a.at(y + i, x + j, c), vb = b.at(y + i, x + j, c);
            ma += wv * va, mb += wv * vb;
            saa += wv * va * va, sbb += wv * vb * vb, sab += wv * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        ++count;
      }
  return total / double(count);
}

}  // namespace oracle
