#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ctseg/errors.hpp"

namespace ctseg {

// Dense 4D array, layout N x C x H x W, w fastest. Optional gradient buffer
// of identical shape.
template <class T>
struct Tensor4 {
  std::array<std::int64_t, 4> dims{0, 0, 0, 0};
  std::vector<T> data;
  std::vector<T> grad;  // empty unless alloc_grad() was called

  Tensor4() = default;
  Tensor4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
          T fill = T(0))
      : dims{n, c, h, w} {
    if (n <= 0 || c <= 0 || h <= 0 || w <= 0)
      throw ShapeError("Tensor4: dimensions must be positive");
    data.assign(static_cast<std::size_t>(n * c * h * w), fill);
  }

  std::int64_t n() const { return dims[0]; }
  std::int64_t c() const { return dims[1]; }
  std::int64_t h() const { return dims[2]; }
  std::int64_t w() const { return dims[3]; }
  std::int64_t size() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  bool same_shape(const Tensor4& o) const { return dims == o.dims; }

  T& at(std::int64_t n_, std::int64_t c_, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>(
        ((n_ * dims[1] + c_) * dims[2] + y) * dims[3] + x)];
  }
  const T& at(std::int64_t n_, std::int64_t c_, std::int64_t y,
              std::int64_t x) const {
    return data[static_cast<std::size_t>(
        ((n_ * dims[1] + c_) * dims[2] + y) * dims[3] + x)];
  }

  T* plane(std::int64_t n_, std::int64_t c_) {
    return data.data() + (n_ * dims[1] + c_) * dims[2] * dims[3];
  }
  const T* plane(std::int64_t n_, std::int64_t c_) const {
    return data.data() + (n_ * dims[1] + c_) * dims[2] * dims[3];
  }

  void alloc_grad() { grad.assign(data.size(), T(0)); }

  bool all_finite() const {
    for (const T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor4 zeros_like(const Tensor4& o) {
    return Tensor4(o.dims[0], o.dims[1], o.dims[2], o.dims[3]);
  }

  template <class U>
  Tensor4<U> cast() const {
    Tensor4<U> out(dims[0], dims[1], dims[2], dims[3]);
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// Convolution kernel, weights layout Cout x Cin x Kh x Kw.
template <class T>
struct ConvKernel {
  std::int64_t cout = 0, cin = 0, kh = 0, kw = 0;
  std::vector<T> weights;
  std::vector<T> bias;  // empty or length cout
  int dilation = 1;

  ConvKernel() = default;
  ConvKernel(std::int64_t co, std::int64_t ci, std::int64_t kh_,
             std::int64_t kw_, int dil = 1, bool with_bias = true)
      : cout(co), cin(ci), kh(kh_), kw(kw_), dilation(dil) {
    if (co <= 0 || ci <= 0 || kh_ <= 0 || kw_ <= 0)
      throw ShapeError("ConvKernel: dimensions must be positive");
    if (kh_ % 2 == 0 || kw_ % 2 == 0)
      throw ConfigError("ConvKernel: kernel extent must be odd");
    if (dil < 1) throw ConfigError("ConvKernel: dilation must be >= 1");
    weights.assign(static_cast<std::size_t>(co * ci * kh_ * kw_), T(0));
    if (with_bias) bias.assign(static_cast<std::size_t>(co), T(0));
  }

  T& w(std::int64_t o, std::int64_t c, std::int64_t i, std::int64_t j) {
    return weights[static_cast<std::size_t>(((o * cin + c) * kh + i) * kw + j)];
  }
  const T& w(std::int64_t o, std::int64_t c, std::int64_t i,
             std::int64_t j) const {
    return weights[static_cast<std::size_t>(((o * cin + c) * kh + i) * kw + j)];
  }
};

}  // namespace ctseg
