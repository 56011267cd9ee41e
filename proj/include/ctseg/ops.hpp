#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctseg/tensor.hpp"

namespace ctseg {

enum class NetMode { train, infer };

// Per-channel batch statistics saved by a training-mode forward pass for the
// matching backward pass.
struct BnSaved {
  std::vector<double> mean;
  std::vector<double> var;  // population variance (divide by count)
};

template <class T>
struct BnGrads {
  Tensor4<T> grad_input;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

namespace detail {

template <class T>
void bn_check(const Tensor4<T>& x, std::size_t gamma_n, std::size_t beta_n,
              std::size_t rmean_n, std::size_t rvar_n) {
  const auto c = static_cast<std::size_t>(x.c());
  if (gamma_n != c || beta_n != c)
    throw ShapeError("batchnorm: gamma/beta length != channels");
  if (rmean_n != c || rvar_n != c)
    throw ShapeError("batchnorm: running stats length != channels");
}

// Double-precision reduction over one channel in a fixed 8-lane tree order:
// deterministic for a given shape, and wide enough to vectorize.
template <class T, class F>
double lane_sum(const Tensor4<T>& x, std::int64_t c, F&& f) {
  const std::int64_t N = x.n(), HW = x.h() * x.w();
  double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  for (std::int64_t n = 0; n < N; ++n) {
    const T* p = x.plane(n, c);
    std::int64_t i = 0;
    for (; i + 8 <= HW; i += 8)
      for (int l = 0; l < 8; ++l) lane[l] += f(p[i + l]);
    for (; i < HW; ++i) lane[i & 7] += f(p[i]);
  }
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
         ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

// Shared body of the batchnorm forward family. y may alias x (in-place):
// each channel's statistics are fully read before that channel is written.
template <class T>
void bn_forward_into(const Tensor4<T>& x, Tensor4<T>& y,
                     const std::vector<T>& gamma, const std::vector<T>& beta,
                     NetMode mode, std::vector<T>& running_mean,
                     std::vector<T>& running_var, double momentum, double eps,
                     BnSaved* saved, bool fuse_relu) {
  bn_check(x, gamma.size(), beta.size(), running_mean.size(),
           running_var.size());
  const std::int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
  if (saved) {
    saved->mean.assign(static_cast<std::size_t>(C), 0.0);
    saved->var.assign(static_cast<std::size_t>(C), 0.0);
  }
  const double M = static_cast<double>(N * HW);
  for (std::int64_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == NetMode::train) {
      mean = lane_sum(x, c, [](T v) { return static_cast<double>(v); }) / M;
      var = lane_sum(x, c,
                     [mean](T v) {
                       const double d = static_cast<double>(v) - mean;
                       return d * d;
                     }) /
            M;
      running_mean[c] = static_cast<T>(
          momentum * static_cast<double>(running_mean[c]) +
          (1.0 - momentum) * mean);
      running_var[c] = static_cast<T>(
          momentum * static_cast<double>(running_var[c]) +
          (1.0 - momentum) * var);
    } else {
      mean = static_cast<double>(running_mean[c]);
      var = static_cast<double>(running_var[c]);
    }
    if (saved) {
      saved->mean[static_cast<std::size_t>(c)] = mean;
      saved->var[static_cast<std::size_t>(c)] = var;
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    const double b = static_cast<double>(beta[c]);
    const double scale = static_cast<double>(gamma[c]) * inv;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      if (fuse_relu) {
        for (std::int64_t i = 0; i < HW; ++i) {
          const T v =
              static_cast<T>((static_cast<double>(p[i]) - mean) * scale + b);
          q[i] = v > T(0) ? v : T(0);
        }
      } else {
        for (std::int64_t i = 0; i < HW; ++i)
          q[i] = static_cast<T>((static_cast<double>(p[i]) - mean) * scale + b);
      }
    }
  }
}

}  // namespace detail

// Per-channel batch normalization over N x H x W. Training mode normalizes by
// batch statistics and folds them into the running stats with the given
// momentum (r = momentum * r + (1 - momentum) * batch); inference mode
// normalizes by the running stats alone. Accumulation runs in double in a
// fixed (n, y, x) order, so results do not depend on thread count.
template <class T>
Tensor4<T> batchnorm(const Tensor4<T>& x, const std::vector<T>& gamma,
                     const std::vector<T>& beta, NetMode mode,
                     std::vector<T>& running_mean, std::vector<T>& running_var,
                     double momentum = 0.9, double eps = 1e-5,
                     BnSaved* saved = nullptr) {
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  detail::bn_forward_into(x, y, gamma, beta, mode, running_mean, running_var,
                          momentum, eps, saved, false);
  return y;
}

// batchnorm followed by ReLU in one pass; bit-identical to
// relu(batchnorm(...)) including the running-stat update.
template <class T>
Tensor4<T> batchnorm_relu(const Tensor4<T>& x, const std::vector<T>& gamma,
                          const std::vector<T>& beta, NetMode mode,
                          std::vector<T>& running_mean,
                          std::vector<T>& running_var, double momentum = 0.9,
                          double eps = 1e-5, BnSaved* saved = nullptr) {
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  detail::bn_forward_into(x, y, gamma, beta, mode, running_mean, running_var,
                          momentum, eps, saved, true);
  return y;
}

// In-place overload for a consumed input.
template <class T>
Tensor4<T> batchnorm_relu(Tensor4<T>&& x, const std::vector<T>& gamma,
                          const std::vector<T>& beta, NetMode mode,
                          std::vector<T>& running_mean,
                          std::vector<T>& running_var, double momentum = 0.9,
                          double eps = 1e-5, BnSaved* saved = nullptr) {
  detail::bn_forward_into(x, x, gamma, beta, mode, running_mean, running_var,
                          momentum, eps, saved, true);
  return std::move(x);
}

// Normalizes with externally supplied statistics, touching nothing else.
// Arithmetic is identical to the training-mode forward pass, so recomputing
// an activation from saved statistics reproduces it bit for bit.
template <class T>
Tensor4<T> batchnorm_apply(const Tensor4<T>& x, const std::vector<T>& gamma,
                           const std::vector<T>& beta, const BnSaved& stats,
                           double eps = 1e-5) {
  const std::int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
  if (gamma.size() != static_cast<std::size_t>(C) ||
      beta.size() != static_cast<std::size_t>(C) ||
      stats.mean.size() != static_cast<std::size_t>(C))
    throw ShapeError("batchnorm_apply: channel mismatch");
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  for (std::int64_t c = 0; c < C; ++c) {
    const double mean = stats.mean[static_cast<std::size_t>(c)];
    const double inv =
        1.0 / std::sqrt(stats.var[static_cast<std::size_t>(c)] + eps);
    const double b = static_cast<double>(beta[c]);
    const double scale = static_cast<double>(gamma[c]) * inv;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      for (std::int64_t i = 0; i < HW; ++i)
        q[i] = static_cast<T>((static_cast<double>(p[i]) - mean) * scale + b);
    }
  }
  return y;
}

// batchnorm_apply followed by ReLU in one pass; bit-identical to
// relu(batchnorm_apply(...)).
template <class T>
Tensor4<T> batchnorm_apply_relu(const Tensor4<T>& x,
                                const std::vector<T>& gamma,
                                const std::vector<T>& beta,
                                const BnSaved& stats, double eps = 1e-5) {
  const std::int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
  if (gamma.size() != static_cast<std::size_t>(C) ||
      beta.size() != static_cast<std::size_t>(C) ||
      stats.mean.size() != static_cast<std::size_t>(C))
    throw ShapeError("batchnorm_apply: channel mismatch");
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  for (std::int64_t c = 0; c < C; ++c) {
    const double mean = stats.mean[static_cast<std::size_t>(c)];
    const double inv =
        1.0 / std::sqrt(stats.var[static_cast<std::size_t>(c)] + eps);
    const double b = static_cast<double>(beta[c]);
    const double scale = static_cast<double>(gamma[c]) * inv;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      for (std::int64_t i = 0; i < HW; ++i) {
        const T v =
            static_cast<T>((static_cast<double>(p[i]) - mean) * scale + b);
        q[i] = v > T(0) ? v : T(0);
      }
    }
  }
  return y;
}

namespace detail {

// Shared body of the batchnorm backward family. When mask is non-null the
// incoming gradient is first gated by mask > 0 (a fused ReLU backward: gives
// the same bits as relu_backward applied beforehand). grad_out may alias
// grad_y: every element of grad_y is read before it is overwritten.
template <class T>
void bn_backward_into(const Tensor4<T>& x, const std::vector<T>& gamma,
                      const BnSaved& saved, const Tensor4<T>& grad_y,
                      const Tensor4<T>* mask, double eps, Tensor4<T>& grad_out,
                      std::vector<T>& grad_gamma, std::vector<T>& grad_beta) {
  if (!x.same_shape(grad_y))
    throw ShapeError("batchnorm_backward: grad shape mismatch");
  const std::int64_t N = x.n(), C = x.c(), HW = x.h() * x.w();
  if (gamma.size() != static_cast<std::size_t>(C) ||
      saved.mean.size() != static_cast<std::size_t>(C))
    throw ShapeError("batchnorm_backward: channel mismatch");
  if (mask && !mask->same_shape(x))
    throw ShapeError("batchnorm_backward: mask shape mismatch");
  grad_gamma.assign(static_cast<std::size_t>(C), T(0));
  grad_beta.assign(static_cast<std::size_t>(C), T(0));
  const double M = static_cast<double>(N * HW);
  // The mask test is hoisted out of the element loops so each body is
  // branchless and vectorizes; `m > 0 ? g : 0` gives the same value as
  // gating with `!(m > 0)` for every input, NaN masks included.
  for (std::int64_t c = 0; c < C; ++c) {
    const double mean = saved.mean[static_cast<std::size_t>(c)];
    const double inv =
        1.0 / std::sqrt(saved.var[static_cast<std::size_t>(c)] + eps);
    // sum g and sum g * xhat in a fixed 8-lane tree order: lane l takes
    // elements i = l (mod 8) in increasing i. Gating and normalization are
    // staged block-wise through plain locals — that shape if-converts and
    // vectorizes, where a select feeding a reduction stays scalar — and the
    // lanes are then accumulated with explicit 8-wide adds.
    using Arr8d = Eigen::Array<double, 8, 1>;
    Arr8d L1 = Arr8d::Zero(), L2 = Arr8d::Zero();
    constexpr std::int64_t kBlkA = 512;
    double bg[kBlkA], bx[kBlkA];
    for (std::int64_t n = 0; n < N; ++n) {
      const T* px = x.plane(n, c);
      const T* pg = grad_y.plane(n, c);
      const T* pm = mask ? mask->plane(n, c) : nullptr;
      std::int64_t i = 0;
      while (i + 8 <= HW) {
        const std::int64_t nb =
            std::min<std::int64_t>(kBlkA, (HW - i) & ~std::int64_t(7));
        if (pm) {
          for (std::int64_t j = 0; j < nb; ++j) {
            const double gv = static_cast<double>(pg[i + j]);
            bg[j] = static_cast<double>(pm[i + j]) > 0.0 ? gv : 0.0;
          }
        } else {
          for (std::int64_t j = 0; j < nb; ++j)
            bg[j] = static_cast<double>(pg[i + j]);
        }
        for (std::int64_t j = 0; j < nb; ++j)
          bx[j] = (static_cast<double>(px[i + j]) - mean) * inv;
        for (std::int64_t j = 0; j < nb; j += 8) {
          L1 += Eigen::Map<const Arr8d>(bg + j);
          L2 += Eigen::Map<const Arr8d>(bg + j) * Eigen::Map<const Arr8d>(bx + j);
        }
        i += nb;
      }
      for (; i < HW; ++i) {
        const double gv = static_cast<double>(pg[i]);
        const double g =
            pm ? (static_cast<double>(pm[i]) > 0.0 ? gv : 0.0) : gv;
        const double xh = (static_cast<double>(px[i]) - mean) * inv;
        L1(i & 7) += g;
        L2(i & 7) += g * xh;
      }
    }
    const double s1 = ((L1(0) + L1(1)) + (L1(2) + L1(3))) +
                      ((L1(4) + L1(5)) + (L1(6) + L1(7)));
    const double s2 = ((L2(0) + L2(1)) + (L2(2) + L2(3))) +
                      ((L2(4) + L2(5)) + (L2(6) + L2(7)));
    grad_beta[c] = static_cast<T>(s1);
    grad_gamma[c] = static_cast<T>(s2);
    const double gscale = static_cast<double>(gamma[c]) * inv;
    const double a1 = s1 / M, a2 = s2 / M;
    // Output is produced block-wise through stack locals: the read phase
    // touches only the inputs and the write phase only grad_out, so the
    // blocks vectorize even when grad_out aliases grad_y.
    constexpr std::int64_t kBlk = 512;
    double gv[kBlk];
    for (std::int64_t n = 0; n < N; ++n) {
      const T* px = x.plane(n, c);
      const T* pg = grad_y.plane(n, c);
      const T* pm = mask ? mask->plane(n, c) : nullptr;
      T* po = grad_out.plane(n, c);
      for (std::int64_t i0 = 0; i0 < HW; i0 += kBlk) {
        const std::int64_t nb = std::min(kBlk, HW - i0);
        if (pm) {
          for (std::int64_t j = 0; j < nb; ++j) {
            const double gval = static_cast<double>(pg[i0 + j]);
            const double g = pm[i0 + j] > T(0) ? gval : 0.0;
            const double xh = (static_cast<double>(px[i0 + j]) - mean) * inv;
            gv[j] = gscale * (g - a1 - xh * a2);
          }
        } else {
          for (std::int64_t j = 0; j < nb; ++j) {
            const double g = static_cast<double>(pg[i0 + j]);
            const double xh = (static_cast<double>(px[i0 + j]) - mean) * inv;
            gv[j] = gscale * (g - a1 - xh * a2);
          }
        }
        for (std::int64_t j = 0; j < nb; ++j)
          po[i0 + j] = static_cast<T>(gv[j]);
      }
    }
  }
}

}  // namespace detail

// Backward of the training-mode batchnorm given the statistics it saved.
template <class T>
BnGrads<T> batchnorm_backward(const Tensor4<T>& x, const std::vector<T>& gamma,
                              const BnSaved& saved, const Tensor4<T>& grad_y,
                              double eps = 1e-5) {
  BnGrads<T> out;
  out.grad_input = Tensor4<T>::zeros_like(x);
  detail::bn_backward_into(x, gamma, saved, grad_y,
                           static_cast<const Tensor4<T>*>(nullptr), eps,
                           out.grad_input, out.grad_gamma, out.grad_beta);
  return out;
}

// Fused ReLU-then-batchnorm backward: equivalent to batchnorm_backward with
// relu_backward(mask, grad_y) as the incoming gradient, reusing the consumed
// grad_y buffer for grad_input. mask is the forward ReLU output (or input:
// they gate identically since ReLU keeps the sign of positives).
template <class T>
BnGrads<T> batchnorm_backward_masked(const Tensor4<T>& x,
                                     const std::vector<T>& gamma,
                                     const BnSaved& saved, Tensor4<T>&& grad_y,
                                     const Tensor4<T>& mask,
                                     double eps = 1e-5) {
  BnGrads<T> out;
  out.grad_input = std::move(grad_y);
  detail::bn_backward_into(x, gamma, saved, out.grad_input, &mask, eps,
                           out.grad_input, out.grad_gamma, out.grad_beta);
  return out;
}

template <class T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  for (std::size_t i = 0; i < x.data.size(); ++i)
    y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

// In-place overload for a consumed input.
template <class T>
Tensor4<T> relu(Tensor4<T>&& x) {
  for (T& v : x.data)
    if (!(v > T(0))) v = T(0);
  return std::move(x);
}

// Subgradient 0 at the kink.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_y) {
  if (!x.same_shape(grad_y))
    throw ShapeError("relu_backward: grad shape mismatch");
  Tensor4<T> g(x.n(), x.c(), x.h(), x.w());
  for (std::size_t i = 0; i < x.data.size(); ++i)
    g.data[i] = x.data[i] > T(0) ? grad_y.data[i] : T(0);
  return g;
}

namespace detail {

// Shared body of softmax_channels; p may alias logits (each location's
// logits are read into e before its probabilities are written).
template <class T>
void softmax_into(const Tensor4<T>& logits, Tensor4<T>& p) {
  const std::int64_t N = logits.n(), C = logits.c(),
                     HW = logits.h() * logits.w();
  if (C < 2) throw ShapeError("softmax_channels: needs at least 2 channels");
  std::vector<double> e(static_cast<std::size_t>(C));
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      double m = static_cast<double>(logits.plane(n, 0)[i]);
      for (std::int64_t c = 1; c < C; ++c)
        m = std::max(m, static_cast<double>(logits.plane(n, c)[i]));
      double sum = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        e[static_cast<std::size_t>(c)] =
            std::exp(static_cast<double>(logits.plane(n, c)[i]) - m);
        sum += e[static_cast<std::size_t>(c)];
      }
      for (std::int64_t c = 0; c < C; ++c)
        p.plane(n, c)[i] = static_cast<T>(e[static_cast<std::size_t>(c)] / sum);
    }
  }
}

}  // namespace detail

// Channel-wise softmax at each (n, y, x) location, max-shifted for stability.
template <class T>
Tensor4<T> softmax_channels(const Tensor4<T>& logits) {
  Tensor4<T> p(logits.n(), logits.c(), logits.h(), logits.w());
  detail::softmax_into(logits, p);
  return p;
}

// In-place overload for a consumed input.
template <class T>
Tensor4<T> softmax_channels(Tensor4<T>&& logits) {
  detail::softmax_into(logits, logits);
  return std::move(logits);
}

// Backward of softmax_channels given its output probabilities:
// g_logit[c] = p[c] * (g_p[c] - sum_k g_p[k] * p[k]).
template <class T>
Tensor4<T> softmax_backward(const Tensor4<T>& probs, const Tensor4<T>& grad_p) {
  if (!probs.same_shape(grad_p))
    throw ShapeError("softmax_backward: grad shape mismatch");
  const std::int64_t N = probs.n(), C = probs.c(), HW = probs.h() * probs.w();
  Tensor4<T> g(probs.n(), probs.c(), probs.h(), probs.w());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < C; ++c)
        dot += static_cast<double>(grad_p.plane(n, c)[i]) *
               static_cast<double>(probs.plane(n, c)[i]);
      for (std::int64_t c = 0; c < C; ++c)
        g.plane(n, c)[i] = static_cast<T>(
            static_cast<double>(probs.plane(n, c)[i]) *
            (static_cast<double>(grad_p.plane(n, c)[i]) - dot));
    }
  }
  return g;
}

// No-square Dice loss over batch-global per-class sums:
//   L = 1 - (1/C) * sum_c (2 * I_c + s) / (P_c + G_c + s),   s = 1e-5,
// with I = sum p*g, P = sum p, G = sum g accumulated over the whole batch.
// Lies in [0, 1] for probabilities in [0, 1]. When grad_probs is non-null it
// receives dL/dp.
template <class T>
double dice_ns_loss(const Tensor4<T>& probs, const Tensor4<T>& target,
                    Tensor4<T>* grad_probs = nullptr,
                    double smooth = 1e-5) {
  if (!probs.same_shape(target))
    throw ShapeError("dice_ns_loss: probs/target shape mismatch");
  const std::int64_t N = probs.n(), C = probs.c(), HW = probs.h() * probs.w();
  std::vector<double> inter(static_cast<std::size_t>(C), 0.0);
  std::vector<double> denom(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    double I = 0.0, P = 0.0, G = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const T* pp = probs.plane(n, c);
      const T* pt = target.plane(n, c);
      for (std::int64_t i = 0; i < HW; ++i) {
        const double p = static_cast<double>(pp[i]);
        const double g = static_cast<double>(pt[i]);
        I += p * g;
        P += p;
        G += g;
      }
    }
    inter[static_cast<std::size_t>(c)] = I;
    denom[static_cast<std::size_t>(c)] = P + G;
  }
  double acc = 0.0;
  for (std::int64_t c = 0; c < C; ++c)
    acc += (2.0 * inter[static_cast<std::size_t>(c)] + smooth) /
           (denom[static_cast<std::size_t>(c)] + smooth);
  const double loss = 1.0 - acc / static_cast<double>(C);
  if (grad_probs) {
    if (!grad_probs->same_shape(probs))
      *grad_probs = Tensor4<T>::zeros_like(probs);
    const double invC = 1.0 / static_cast<double>(C);
    for (std::int64_t c = 0; c < C; ++c) {
      const double D = denom[static_cast<std::size_t>(c)] + smooth;
      const double num = 2.0 * inter[static_cast<std::size_t>(c)] + smooth;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* pt = target.plane(n, c);
        T* pg = grad_probs->plane(n, c);
        for (std::int64_t i = 0; i < HW; ++i)
          pg[i] = static_cast<T>(
              -invC * (2.0 * static_cast<double>(pt[i]) * D - num) / (D * D));
      }
    }
  }
  return loss;
}

// Adam optimizer state over a fixed list of parameter vectors. Weight decay
// is the coupled form: the decay term is added to the gradient before the
// moment updates.
template <class T>
struct AdamState {
  double lr = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void init(const std::vector<std::size_t>& sizes) {
    m.clear();
    v.clear();
    for (const std::size_t s : sizes) {
      m.emplace_back(s, T(0));
      v.emplace_back(s, T(0));
    }
    step = 0;
  }
};

// One Adam update across all parameter vectors. Every gradient is checked
// finite before any parameter is touched; a bad gradient raises NumericsError
// naming the parameter and leaves both parameters and state unchanged.
template <class T>
void adam_step(AdamState<T>& st, const std::vector<std::vector<T>*>& params,
               const std::vector<const std::vector<T>*>& grads,
               const std::vector<std::string>* names = nullptr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->size() != grads[k]->size() ||
        params[k]->size() != st.m[k].size())
      throw ShapeError("adam_step: size mismatch at parameter " +
                       std::to_string(k));
    for (const T g : *grads[k]) {
      if (!std::isfinite(static_cast<double>(g))) {
        const std::string who =
            names && k < names->size() ? (*names)[k] : std::to_string(k);
        throw NumericsError("adam_step: non-finite gradient in parameter " +
                            who);
      }
    }
  }
  st.step += 1;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(st.beta1, t);
  const double bc2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::vector<T>& p = *params[k];
    const std::vector<T>& gr = *grads[k];
    std::vector<T>& m = st.m[k];
    std::vector<T>& v = st.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = static_cast<double>(gr[i]) +
                       st.weight_decay * static_cast<double>(p[i]);
      const double mi =
          st.beta1 * static_cast<double>(m[i]) + (1.0 - st.beta1) * g;
      const double vi =
          st.beta2 * static_cast<double>(v[i]) + (1.0 - st.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) -
                            st.lr * mhat / (std::sqrt(vhat) + st.epsilon));
    }
  }
}

}  // namespace ctseg
