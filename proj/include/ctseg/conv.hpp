#pragma once

#include <Eigen/Core>
#include <cstring>
#include <memory>
#include <vector>

#include "ctseg/tensor.hpp"

namespace ctseg {

// Which inner algorithm carries the convolution.
//
//   direct: tap-by-tap accumulation in a fixed (c, ki, kj) order. For a given
//           output element the partial-sum sequence depends only on the tap
//           order, so a kernel zero-inflated to extent d*(K-1)+1 at dilation 1
//           reproduces the dilated result bit for bit.
//   gemm:   im2row + Eigen matrix products. Much faster; used for the float
//           training hot path.
//
// auto_select picks direct for double and gemm for float.
enum class ConvAlgo { auto_select, direct, gemm };

template <class T>
struct Conv2dGrads {
  Tensor4<T> grad_input;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

namespace detail {

template <class T>
constexpr ConvAlgo resolve_algo(ConvAlgo a) {
  if (a != ConvAlgo::auto_select) return a;
  return std::is_same_v<T, double> ? ConvAlgo::direct : ConvAlgo::gemm;
}

template <class T>
void conv_check(const Tensor4<T>& in, const ConvKernel<T>& k) {
  if (k.kh % 2 == 0 || k.kw % 2 == 0)
    throw ConfigError("conv2d: kernel extent must be odd");
  if (in.c() != k.cin)
    throw ShapeError("conv2d: input channels " + std::to_string(in.c()) +
                     " != kernel cin " + std::to_string(k.cin));
  if (!k.bias.empty() && static_cast<std::int64_t>(k.bias.size()) != k.cout)
    throw ShapeError("conv2d: bias length != cout");
}

// ---------------------------------------------------------------- direct ---

template <class T>
void conv2d_forward_direct(const Tensor4<T>& in, const ConvKernel<T>& k,
                           Tensor4<T>& out) {
  const std::int64_t H = in.h(), W = in.w();
  const std::int64_t ci = (k.kh - 1) / 2, cj = (k.kw - 1) / 2;
  const std::int64_t d = k.dilation;
  for (std::int64_t s = 0; s < in.n(); ++s) {
    for (std::int64_t o = 0; o < k.cout; ++o) {
      T* outp = out.plane(s, o);
      const T b = k.bias.empty() ? T(0) : k.bias[o];
      std::fill(outp, outp + H * W, T(0));
      for (std::int64_t c = 0; c < k.cin; ++c) {
        const T* inp = in.plane(s, c);
        for (std::int64_t i = 0; i < k.kh; ++i) {
          const std::int64_t dy = d * (i - ci);
          for (std::int64_t j = 0; j < k.kw; ++j) {
            const std::int64_t dx = d * (j - cj);
            const T wv = k.w(o, c, i, j);
            const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
            const std::int64_t y1 = std::min(H, H - dy);
            const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
            const std::int64_t x1 = std::min(W, W - dx);
            for (std::int64_t y = y0; y < y1; ++y) {
              T* orow = outp + y * W;
              const T* irow = inp + (y + dy) * W + dx;
              for (std::int64_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
        }
      }
      if (!k.bias.empty())
        for (std::int64_t p = 0; p < H * W; ++p) outp[p] += b;
    }
  }
}

template <class T>
void conv2d_backward_direct(const Tensor4<T>& in, const ConvKernel<T>& k,
                            const Tensor4<T>& gout, Tensor4<T>& gin,
                            std::vector<T>& gw, std::vector<T>& gb) {
  const std::int64_t H = in.h(), W = in.w();
  const std::int64_t ci = (k.kh - 1) / 2, cj = (k.kw - 1) / 2;
  const std::int64_t d = k.dilation;
  for (std::int64_t s = 0; s < in.n(); ++s) {
    for (std::int64_t o = 0; o < k.cout; ++o) {
      const T* gp = gout.plane(s, o);
      for (std::int64_t c = 0; c < k.cin; ++c) {
        T* gip = gin.plane(s, c);
        const T* inp = in.plane(s, c);
        for (std::int64_t i = 0; i < k.kh; ++i) {
          const std::int64_t dy = d * (i - ci);
          for (std::int64_t j = 0; j < k.kw; ++j) {
            const std::int64_t dx = d * (j - cj);
            const T wv = k.w(o, c, i, j);
            const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
            const std::int64_t y1 = std::min(H, H - dy);
            const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
            const std::int64_t x1 = std::min(W, W - dx);
            double acc = 0.0;
            for (std::int64_t y = y0; y < y1; ++y) {
              const T* grow = gp + y * W;
              const T* irow = inp + (y + dy) * W + dx;
              T* girow = gip + (y + dy) * W + dx;
              for (std::int64_t x = x0; x < x1; ++x) {
                acc += static_cast<double>(grow[x]) * irow[x];
                girow[x] += wv * grow[x];
              }
            }
            gw[static_cast<std::size_t>(((o * k.cin + c) * k.kh + i) * k.kw +
                                        j)] += static_cast<T>(acc);
          }
        }
      }
      if (!gb.empty()) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < H * W; ++p)
          acc += static_cast<double>(gp[p]);
        gb[o] += static_cast<T>(acc);
      }
    }
  }
}

// ------------------------------------------------------------------ gemm ---

// Rows per im2row strip, sized so the buffer stays around 8 MB: large enough
// for near-peak products, small enough to stay cache-resident between the
// fill and the multiply.
template <class T>
std::int64_t strip_rows(std::int64_t W, std::int64_t k2c) {
  const std::int64_t budget = 8 << 20;
  const std::int64_t per_row = W * k2c * static_cast<std::int64_t>(sizeof(T));
  return std::max<std::int64_t>(1, budget / std::max<std::int64_t>(1, per_row));
}

// Grow-only scratch shared by every convolution call on this thread (the
// engine runs one logical compute thread). Contents are always written
// before they are read, so reuse never leaks data between calls.
template <class T>
T* conv_scratch(std::size_t elems, int slot) {
  struct Buf {
    std::unique_ptr<T[]> p;
    std::size_t cap = 0;
  };
  thread_local Buf bufs[2];
  Buf& b = bufs[slot];
  if (b.cap < elems) {
    b.p.reset(new T[elems]);
    b.cap = elems;
  }
  return b.p.get();
}

// Fills the im2row block for output rows [y0, y1): column r = (c*Kh+i)*Kw+j
// holds input samples for every strip pixel, contiguously (col-major P x K2C).
// Each tap is one flat run copy — consecutive strip rows are consecutive in
// the source plane — followed by zeroing the few border elements per row that
// the flat copy borrowed from a neighbouring row.
template <class T>
void im2row_fill(const Tensor4<T>& in, std::int64_t s, const ConvKernel<T>& k,
                 std::int64_t y0, std::int64_t y1, T* buf, std::int64_t P) {
  const std::int64_t H = in.h(), W = in.w(), HW = H * W;
  const std::int64_t ci = (k.kh - 1) / 2, cj = (k.kw - 1) / 2;
  const std::int64_t d = k.dilation;
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < k.cin; ++c) {
    const T* inp = in.plane(s, c);
    for (std::int64_t i = 0; i < k.kh; ++i) {
      const std::int64_t dy = d * (i - ci);
      for (std::int64_t j = 0; j < k.kw; ++j, ++r) {
        const std::int64_t dx = d * (j - cj);
        T* col = buf + r * P;
        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
        const std::int64_t x1 = std::min(W, W - dx);
        const std::int64_t ys = std::max(y0, -dy);   // rows with a source row
        const std::int64_t ye = std::min(y1, H - dy);
        if (ye <= ys) {
          std::memset(col, 0, sizeof(T) * static_cast<std::size_t>(P));
          continue;
        }
        if (ys > y0)
          std::memset(col, 0, sizeof(T) * static_cast<std::size_t>((ys - y0) * W));
        if (y1 > ye)
          std::memset(col + (ye - y0) * W, 0,
                      sizeof(T) * static_cast<std::size_t>((y1 - ye) * W));
        T* dst = col + (ys - y0) * W;
        const std::int64_t nW = (ye - ys) * W;
        const std::int64_t off = (ys + dy) * W + dx;  // flat source start
        const std::int64_t i0 = std::max<std::int64_t>(0, -off);
        const std::int64_t i1 = std::min(nW, HW - off);
        if (i0 > 0) std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(i0));
        if (i1 > i0)
          std::memcpy(dst + i0, inp + off + i0,
                      sizeof(T) * static_cast<std::size_t>(i1 - i0));
        if (i1 < nW)
          std::memset(dst + i1, 0, sizeof(T) * static_cast<std::size_t>(nW - i1));
        if (dx > 0) {
          for (std::int64_t y = ys; y < ye; ++y)
            std::memset(dst + (y - ys) * W + x1, 0,
                        sizeof(T) * static_cast<std::size_t>(W - x1));
        } else if (dx < 0) {
          for (std::int64_t y = ys; y < ye; ++y)
            std::memset(dst + (y - ys) * W, 0,
                        sizeof(T) * static_cast<std::size_t>(x0));
        }
      }
    }
  }
}

// Adjoint of im2row_fill: scatter-adds the column block back into gin.
template <class T>
void im2row_scatter(Tensor4<T>& gin, std::int64_t s, const ConvKernel<T>& k,
                    std::int64_t y0, std::int64_t y1, const T* buf,
                    std::int64_t P) {
  const std::int64_t H = gin.h(), W = gin.w();
  const std::int64_t ci = (k.kh - 1) / 2, cj = (k.kw - 1) / 2;
  const std::int64_t d = k.dilation;
  std::int64_t r = 0;
  for (std::int64_t c = 0; c < k.cin; ++c) {
    T* gp = gin.plane(s, c);
    for (std::int64_t i = 0; i < k.kh; ++i) {
      const std::int64_t dy = d * (i - ci);
      for (std::int64_t j = 0; j < k.kw; ++j, ++r) {
        const std::int64_t dx = d * (j - cj);
        const T* col = buf + r * P;
        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
        const std::int64_t x1 = std::min(W, W - dx);
        for (std::int64_t y = y0; y < y1; ++y) {
          const std::int64_t sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          const T* src = col + (y - y0) * W;
          T* grow = gp + sy * W + dx;
          for (std::int64_t x = x0; x < x1; ++x) grow[x] += src[x];
        }
      }
    }
  }
}

template <class T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatCM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
void conv2d_forward_gemm(const Tensor4<T>& in, const ConvKernel<T>& k,
                         Tensor4<T>& out) {
  const std::int64_t H = in.h(), W = in.w(), HW = H * W;
  const std::int64_t k2c = k.cin * k.kh * k.kw;
  Eigen::Map<const MatRM<T>> wmat(k.weights.data(), k.cout, k2c);
  Eigen::Map<const VecT<T>> bvec(k.bias.data(),
                                 static_cast<std::int64_t>(k.bias.size()));
  if (k.kh == 1 && k.kw == 1) {
    // 1x1: the channel planes already form the K x N operand
    for (std::int64_t s = 0; s < in.n(); ++s) {
      Eigen::Map<const MatRM<T>> inm(in.plane(s, 0), k.cin, HW);
      Eigen::Map<MatRM<T>> omat(out.plane(s, 0), k.cout, HW);
      omat.noalias() = wmat * inm;
      if (!k.bias.empty()) omat.colwise() += bvec;
    }
    return;
  }
  const std::int64_t rows = strip_rows<T>(W, k2c);
  T* const buf = conv_scratch<T>(
      static_cast<std::size_t>(std::min(rows, H) * W * k2c), 0);
  for (std::int64_t s = 0; s < in.n(); ++s) {
    for (std::int64_t y0 = 0; y0 < H; y0 += rows) {
      const std::int64_t y1 = std::min(H, y0 + rows);
      const std::int64_t P = (y1 - y0) * W;
      im2row_fill(in, s, k, y0, y1, buf, P);
      Eigen::Map<const MatCM<T>> col(buf, P, k2c);
      Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>> omat(
          out.plane(s, 0) + y0 * W, k.cout, P, Eigen::OuterStride<>(HW));
      omat.noalias() = wmat * col.transpose();
      if (!k.bias.empty()) omat.colwise() += bvec;
    }
  }
}

template <class T>
void conv2d_backward_gemm(const Tensor4<T>& in, const ConvKernel<T>& k,
                          const Tensor4<T>& gout, Tensor4<T>* gin,
                          std::vector<T>& gw, std::vector<T>& gb) {
  const std::int64_t H = in.h(), W = in.w(), HW = H * W;
  const std::int64_t k2c = k.cin * k.kh * k.kw;
  Eigen::Map<const MatRM<T>> wmat(k.weights.data(), k.cout, k2c);
  Eigen::Map<MatRM<T>> gwmat(gw.data(), k.cout, k2c);
  if (k.kh == 1 && k.kw == 1) {
    for (std::int64_t s = 0; s < in.n(); ++s) {
      Eigen::Map<const MatRM<T>> inm(in.plane(s, 0), k.cin, HW);
      Eigen::Map<const MatRM<T>> gmat(gout.plane(s, 0), k.cout, HW);
      gwmat.noalias() += gmat * inm.transpose();
      if (gin) {
        Eigen::Map<MatRM<T>> ginm(gin->plane(s, 0), k.cin, HW);
        ginm.noalias() = wmat.transpose() * gmat;
      }
      if (!gb.empty()) {
        for (std::int64_t o = 0; o < k.cout; ++o) {
          const T* gp = gout.plane(s, o);
          double acc = 0.0;
          for (std::int64_t p = 0; p < HW; ++p)
            acc += static_cast<double>(gp[p]);
          gb[o] += static_cast<T>(acc);
        }
      }
    }
    return;
  }
  const std::int64_t rows = strip_rows<T>(W, k2c);
  const std::size_t strip_elems =
      static_cast<std::size_t>(std::min(rows, H) * W * k2c);
  T* const buf = conv_scratch<T>(strip_elems, 0);   // filled before use
  T* const gbuf = conv_scratch<T>(strip_elems, 1);  // likewise
  for (std::int64_t s = 0; s < in.n(); ++s) {
    for (std::int64_t y0 = 0; y0 < H; y0 += rows) {
      const std::int64_t y1 = std::min(H, y0 + rows);
      const std::int64_t P = (y1 - y0) * W;
      Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>> gmat(
          gout.plane(s, 0) + y0 * W, k.cout, P, Eigen::OuterStride<>(HW));
      // weight gradient: G * col
      im2row_fill(in, s, k, y0, y1, buf, P);
      Eigen::Map<const MatCM<T>> col(buf, P, k2c);
      gwmat.noalias() += gmat * col;
      if (gin) {
        // input gradient: scatter(G^T * Wmat)
        Eigen::Map<MatCM<T>> gcol(gbuf, P, k2c);
        gcol.noalias() = gmat.transpose() * wmat;
        im2row_scatter(*gin, s, k, y0, y1, gbuf, P);
      }
    }
    if (!gb.empty()) {
      for (std::int64_t o = 0; o < k.cout; ++o) {
        const T* gp = gout.plane(s, o);
        double acc = 0.0;
        for (std::int64_t p = 0; p < HW; ++p)
          acc += static_cast<double>(gp[p]);
        gb[o] += static_cast<T>(acc);
      }
    }
  }
}

}  // namespace detail

// Stride-1 zero-same-padded 2D convolution; output is N x Cout x H x W.
template <class T>
Tensor4<T> conv2d_forward(const Tensor4<T>& in, const ConvKernel<T>& k,
                          ConvAlgo algo = ConvAlgo::auto_select) {
  detail::conv_check(in, k);
  Tensor4<T> out(in.n(), k.cout, in.h(), in.w());
  if (detail::resolve_algo<T>(algo) == ConvAlgo::direct)
    detail::conv2d_forward_direct(in, k, out);
  else
    detail::conv2d_forward_gemm(in, k, out);
  return out;
}

// Exact adjoints of conv2d_forward with respect to input, weights and bias.
// With need_input_grad false the input-gradient work may be skipped entirely
// and grad_input comes back empty; callers that pass false must not read it.
template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor4<T>& in, const ConvKernel<T>& k,
                               const Tensor4<T>& gout,
                               ConvAlgo algo = ConvAlgo::auto_select,
                               bool need_input_grad = true) {
  detail::conv_check(in, k);
  if (gout.n() != in.n() || gout.c() != k.cout || gout.h() != in.h() ||
      gout.w() != in.w())
    throw ShapeError("conv2d_backward: grad_out shape mismatch");
  Conv2dGrads<T> g;
  g.grad_weights.assign(k.weights.size(), T(0));
  g.grad_bias.assign(k.bias.size(), T(0));
  if (detail::resolve_algo<T>(algo) == ConvAlgo::direct) {
    g.grad_input = Tensor4<T>::zeros_like(in);
    detail::conv2d_backward_direct(in, k, gout, g.grad_input, g.grad_weights,
                                   g.grad_bias);
  } else {
    if (need_input_grad) g.grad_input = Tensor4<T>::zeros_like(in);
    detail::conv2d_backward_gemm(in, k, gout,
                                 need_input_grad ? &g.grad_input : nullptr,
                                 g.grad_weights, g.grad_bias);
  }
  return g;
}

// Zero-inflates a kernel to dilation 1: extent d*(K-1)+1 with the original
// taps at stride d. conv2d with the inflated kernel at dilation 1 equals the
// dilated conv bit for bit under the direct algorithm.
template <class T>
ConvKernel<T> inflate_kernel(const ConvKernel<T>& k) {
  const std::int64_t d = k.dilation;
  ConvKernel<T> out(k.cout, k.cin, d * (k.kh - 1) + 1, d * (k.kw - 1) + 1, 1,
                    !k.bias.empty());
  out.bias = k.bias;
  for (std::int64_t o = 0; o < k.cout; ++o)
    for (std::int64_t c = 0; c < k.cin; ++c)
      for (std::int64_t i = 0; i < k.kh; ++i)
        for (std::int64_t j = 0; j < k.kw; ++j)
          out.w(o, c, i * d, j * d) = k.w(o, c, i, j);
  return out;
}

}  // namespace ctseg
