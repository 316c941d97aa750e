#include "exreg/tensor.hpp"

#include <cassert>
#include <cmath>
#include <sstream>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace exreg {

namespace {

#ifdef __GLIBC__
// Activations of a few MB are allocated and freed every step. Serving them from the heap instead of
// fresh mmap pages avoids a page fault per 4 KiB on every allocation.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from(Shape shape, std::initializer_list<Real> values) {
  return Tensor(std::move(shape), std::vector<Real>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(shape_.size()));
  }
  return shape_[axis];
}

Real& Tensor::at(std::size_t i, std::size_t j) {
  assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
  return data_[i * shape_[1] + j];
}

Real Tensor::at(std::size_t i, std::size_t j) const {
  assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
  return data_[i * shape_[1] + j];
}

Real& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  assert(rank() == 4 && n < shape_[0] && c < shape_[1] && h < shape_[2] && w < shape_[3]);
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Real Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  assert(rank() == 4 && n < shape_[0] && c < shape_[1] && h < shape_[2] && w < shape_[3]);
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                                " changes element count");
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(Real v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (auto x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Real Tensor::max_abs() const {
  Real m = 0;
  for (auto x : data_) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace exreg
