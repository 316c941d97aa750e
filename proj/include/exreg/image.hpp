#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "exreg/tensor.hpp"

namespace exreg {

enum class ColorSpace { srgb, linear };

// H x W x 3 RGB raster, interleaved, values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Real> pixels;
  ColorSpace space = ColorSpace::srgb;

  Image() = default;
  Image(std::size_t h, std::size_t w, ColorSpace s = ColorSpace::srgb, Real fill = Real(0))
      : height(h), width(w), pixels(h * w * 3, fill), space(s) {}

  std::size_t size() const { return pixels.size(); }
  Real& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  Real at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
  friend bool operator==(const Image& a, const Image& b) = default;
};

// Gamma-2.2 approximation of the sRGB transfer curve.
constexpr Real kDisplayGamma = Real(2.2);
Real srgb_encode(Real linear);
Real srgb_decode(Real encoded);
Image encode_srgb(const Image& linear);
Image decode_srgb(const Image& encoded);

void clamp_unit(Image& img);
bool in_unit_range(const Image& img);

// [1,3,H,W] planar tensor and back. tensor_to_image clamps to [0,1].
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t, ColorSpace space = ColorSpace::srgb);

Image crop(const Image& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w);
Image resize_bilinear(const Image& img, std::size_t h, std::size_t w);

// PNG files. 8-bit files carry sRGB-encoded samples; 16-bit files store the same samples without
// quantisation loss beyond 1/65535.
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8);
Image read_png(const std::filesystem::path& path);
// Single-channel 16-bit PNG from values already mapped to [0,1].
void write_gray16_png(const std::filesystem::path& path, const std::vector<Real>& values, std::size_t h,
                      std::size_t w);
std::vector<Real> read_gray_png(const std::filesystem::path& path, std::size_t& h, std::size_t& w);

}  // namespace exreg
