#include "exreg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "exreg/ops.hpp"

namespace exreg {

Real srgb_encode(Real linear) { return std::pow(std::clamp(linear, Real(0), Real(1)), Real(1) / kDisplayGamma); }

Real srgb_decode(Real encoded) { return std::pow(std::clamp(encoded, Real(0), Real(1)), kDisplayGamma); }

Image encode_srgb(const Image& linear) {
  if (linear.space != ColorSpace::linear) throw std::invalid_argument("encode_srgb: image is not linear");
  Image out = linear;
  for (auto& v : out.pixels) v = srgb_encode(v);
  out.space = ColorSpace::srgb;
  return out;
}

Image decode_srgb(const Image& encoded) {
  if (encoded.space != ColorSpace::srgb) throw std::invalid_argument("decode_srgb: image is not sRGB-encoded");
  Image out = encoded;
  for (auto& v : out.pixels) v = srgb_decode(v);
  out.space = ColorSpace::linear;
  return out;
}

void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, Real(0), Real(1));
}

bool in_unit_range(const Image& img) {
  return std::all_of(img.pixels.begin(), img.pixels.end(), [](Real v) { return v >= 0 && v <= 1; });
}

Tensor image_to_tensor(const Image& img) {
  const std::size_t H = img.height, W = img.width;
  Tensor t({1, 3, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) t[(c * H + y) * W + x] = img.at(y, x, c);
  return t;
}

Image tensor_to_image(const Tensor& t, ColorSpace space) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3) {
    throw std::invalid_argument("tensor_to_image: expected [1,3,H,W], got " + shape_str(t.shape()));
  }
  const std::size_t H = t.dim(2), W = t.dim(3);
  Image img(H, W, space);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(t[(c * H + y) * W + x], Real(0), Real(1));
  return img;
}

Image crop(const Image& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  if (y + h > img.height || x + w > img.width) throw std::invalid_argument("crop: window exceeds image");
  Image out(h, w, img.space);
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(&img.pixels[((y + r) * img.width + x) * 3], w * 3, &out.pixels[r * w * 3]);
  return out;
}

Image resize_bilinear(const Image& img, std::size_t h, std::size_t w) {
  if (img.height == h && img.width == w) return img;
  Tape tape;
  Var out = bilinear_resize(tape.constant(image_to_tensor(img)), h, w);
  return tensor_to_image(out.value(), img.space);
}

namespace {

std::uint16_t to_u16(Real v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, Real(0), Real(1)) * 65535)); }
std::uint8_t to_u8(Real v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, Real(0), Real(1)) * 255)); }

void finish_write(png_image& image, const std::filesystem::path& path, const void* buffer) {
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer, 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + msg);
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  if (bit_depth == 8) {
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(img.pixels.size());
    std::transform(img.pixels.begin(), img.pixels.end(), buf.begin(), to_u8);
    finish_write(image, path, buf.data());
  } else {
    image.format = PNG_FORMAT_LINEAR_RGB;
    std::vector<std::uint16_t> buf(img.pixels.size());
    std::transform(img.pixels.begin(), img.pixels.end(), buf.begin(), to_u16);
    finish_write(image, path, buf.data());
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  // Keep the file's own sample encoding so no gamma conversion is applied.
  const bool sixteen = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  image.format = sixteen ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_RGB;
  Image out(image.height, image.width, ColorSpace::srgb);
  const png_color black{0, 0, 0};
  if (sixteen) {
    std::vector<std::uint16_t> buf(PNG_IMAGE_SIZE(image) / 2);
    if (!png_image_finish_read(&image, &black, buf.data(), 0, nullptr)) {
      throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
    }
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = Real(buf[i]) / Real(65535);
  } else {
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, &black, buf.data(), 0, nullptr)) {
      throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
    }
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = Real(buf[i]) / Real(255);
  }
  return out;
}

void write_gray16_png(const std::filesystem::path& path, const std::vector<Real>& values, std::size_t h,
                      std::size_t w) {
  if (values.size() != h * w) throw std::invalid_argument("write_gray16_png: value count does not match size");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_LINEAR_Y;
  std::vector<std::uint16_t> buf(values.size());
  std::transform(values.begin(), values.end(), buf.begin(), to_u16);
  finish_write(image, path, buf.data());
}

std::vector<Real> read_gray_png(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_LINEAR_Y;
  std::vector<std::uint16_t> buf(PNG_IMAGE_SIZE(image) / 2);
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  h = image.height;
  w = image.width;
  std::vector<Real> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) out[i] = Real(buf[i]) / Real(65535);
  return out;
}

}  // namespace exreg
