#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctseg/conv.hpp"
#include "ctseg/ops.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

// Dilated residual segmentation network: stem conv, three groups of two-conv
// residual blocks at dilations 1/2/4, and a 1x1 softmax classification head.
// Defaults give exactly 20 convolution layers:
//   1 (stem) + 3 groups * 3 blocks * 2 convs + 1 (head).
struct NetConfig {
  int in_channels = 1;
  int num_classes = 2;  // background, lung
  std::array<int, 3> group_channels{16, 32, 64};
  int blocks_per_group = 3;
  int kernel = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (in_channels < 1) throw ConfigError("NetConfig: in_channels < 1");
    if (num_classes < 2) throw ConfigError("NetConfig: num_classes < 2");
    for (const int c : group_channels)
      if (c < 1) throw ConfigError("NetConfig: group channel < 1");
    if (group_channels[0] > group_channels[1] ||
        group_channels[1] > group_channels[2])
      throw ConfigError(
          "NetConfig: group channels must be non-decreasing (skip "
          "connections widen by zero-padding only)");
    if (blocks_per_group < 1)
      throw ConfigError("NetConfig: blocks_per_group < 1");
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("NetConfig: kernel must be odd and positive");
  }

  int conv_layers() const { return 1 + 2 * 3 * blocks_per_group + 1; }

  bool operator==(const NetConfig&) const = default;
};

inline constexpr std::array<int, 3> kGroupDilations{1, 2, 4};

template <class T>
struct BnParams {
  std::vector<T> gamma, beta, running_mean, running_var;

  explicit BnParams(std::int64_t channels = 0)
      : gamma(static_cast<std::size_t>(channels), T(1)),
        beta(static_cast<std::size_t>(channels), T(0)),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

// Pre-activation residual block: BN -> ReLU -> conv -> BN -> ReLU -> conv,
// plus an identity skip (zero-padded on the channel axis when widening).
template <class T>
struct ResBlock {
  std::int64_t cin = 0, cout = 0;
  BnParams<T> bn1, bn2;
  ConvKernel<T> conv1, conv2;
};

// Saved activations from one training-mode forward pass. Block inputs, the
// first conv's output and batch statistics are kept; the cheap normalize+ReLU
// activations are recomputed during the backward pass to bound peak memory.
template <class T>
struct BlockActs {
  Tensor4<T> x;   // block input (skip source, bn1 input)
  Tensor4<T> c1;  // first conv output (bn2 input)
  BnSaved s1, s2;
};

template <class T>
struct Activations {
  Tensor4<T> input;
  std::vector<BlockActs<T>> blocks;
  Tensor4<T> feat;  // last block output = head input
  BnSaved head_s;
  Tensor4<T> probs;
};

// Ordered view over parameter vectors; names are stable across runs and act
// as the serialization key.
template <class T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<std::vector<T>*> values;
};

template <class T>
struct Grads {
  std::vector<std::vector<T>> values;  // aligned with params(false)
};

namespace detail {

// dst[:, 0:src_channels] += src — the widening identity skip (forward) and,
// with the arguments' roles flipped, its adjoint (backward).
template <class T>
void add_planes(Tensor4<T>& dst, const Tensor4<T>& src,
                std::int64_t channels) {
  const std::int64_t HW = dst.h() * dst.w();
  for (std::int64_t n = 0; n < dst.n(); ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      T* d = dst.plane(n, c);
      const T* s = src.plane(n, c);
      for (std::int64_t i = 0; i < HW; ++i) d[i] += s[i];
    }
}

}  // namespace detail

template <class T>
class SegNet {
 public:
  NetConfig cfg;
  ConvKernel<T> stem;
  std::vector<ResBlock<T>> blocks;  // 3 * blocks_per_group, group-major
  BnParams<T> head_bn;
  ConvKernel<T> head;
  ConvAlgo algo = ConvAlgo::auto_select;

  // Builds the layer plan and applies seeded He-normal fan-in weight init
  // (biases 0, gamma 1, beta 0, running stats at identity).
  static SegNet build(const NetConfig& cfg) {
    cfg.validate();
    SegNet net;
    net.cfg = cfg;
    const int k = cfg.kernel;
    net.stem = ConvKernel<T>(cfg.group_channels[0], cfg.in_channels, k, k, 1);
    std::int64_t prev = cfg.group_channels[0];
    for (int g = 0; g < 3; ++g) {
      const std::int64_t ch = cfg.group_channels[static_cast<std::size_t>(g)];
      const int dil = kGroupDilations[static_cast<std::size_t>(g)];
      for (int b = 0; b < cfg.blocks_per_group; ++b) {
        ResBlock<T> blk;
        blk.cin = prev;
        blk.cout = ch;
        blk.bn1 = BnParams<T>(prev);
        blk.conv1 = ConvKernel<T>(ch, prev, k, k, dil);
        blk.bn2 = BnParams<T>(ch);
        blk.conv2 = ConvKernel<T>(ch, ch, k, k, dil);
        net.blocks.push_back(std::move(blk));
        prev = ch;
      }
    }
    net.head_bn = BnParams<T>(prev);
    net.head = ConvKernel<T>(cfg.num_classes, prev, 1, 1, 1);
    Rng rng(cfg.seed);
    net.init_weights(rng);
    return net;
  }

  std::string block_name(std::size_t i) const {
    const std::size_t bpg = static_cast<std::size_t>(cfg.blocks_per_group);
    return "g" + std::to_string(i / bpg + 1) + "b" + std::to_string(i % bpg);
  }

  // Enumerates every parameter vector in a fixed order. Running statistics
  // are included only when with_running is set; their names carry a
  // ".running_" segment, which is how deserialization tells them apart.
  template <class Fn>
  void for_each_param(bool with_running, Fn&& fn) {
    const auto visit_bn = [&](const std::string& p, BnParams<T>& bn) {
      fn(p + ".gamma", bn.gamma);
      fn(p + ".beta", bn.beta);
      if (with_running) {
        fn(p + ".running_mean", bn.running_mean);
        fn(p + ".running_var", bn.running_var);
      }
    };
    fn("stem.weight", stem.weights);
    fn("stem.bias", stem.bias);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = block_name(i);
      ResBlock<T>& b = blocks[i];
      visit_bn(p + ".bn1", b.bn1);
      fn(p + ".conv1.weight", b.conv1.weights);
      fn(p + ".conv1.bias", b.conv1.bias);
      visit_bn(p + ".bn2", b.bn2);
      fn(p + ".conv2.weight", b.conv2.weights);
      fn(p + ".conv2.bias", b.conv2.bias);
    }
    visit_bn("head.bn", head_bn);
    fn("head.conv.weight", head.weights);
    fn("head.conv.bias", head.bias);
  }

  ParamSet<T> params(bool with_running) {
    ParamSet<T> out;
    for_each_param(with_running,
                   [&](const std::string& name, std::vector<T>& v) {
                     out.names.push_back(name);
                     out.values.push_back(&v);
                   });
    return out;
  }

  std::int64_t param_count(bool with_running) {
    std::int64_t n = 0;
    for_each_param(with_running, [&](const std::string&, std::vector<T>& v) {
      n += static_cast<std::int64_t>(v.size());
    });
    return n;
  }

  // Probability maps N x num_classes x H x W; spatial size preserved. Train
  // mode updates BN running stats and, when acts is given, saves what the
  // backward pass needs.
  Tensor4<T> forward(const Tensor4<T>& batch, NetMode mode,
                     Activations<T>* acts = nullptr) {
    if (batch.c() != cfg.in_channels)
      throw ShapeError("forward: batch has " + std::to_string(batch.c()) +
                       " channels, net expects " +
                       std::to_string(cfg.in_channels));
    if (batch.h() < 9 || batch.w() < 9)
      throw ShapeError("forward: spatial extent must be at least 9x9");
    if (acts) {
      acts->blocks.clear();
      acts->blocks.reserve(blocks.size());
      acts->input = batch;
    }
    Tensor4<T> f = conv2d_forward(batch, stem, algo);
    for (ResBlock<T>& b : blocks) {
      BlockActs<T> ba;
      Tensor4<T> r1 = batchnorm_relu(f, b.bn1.gamma, b.bn1.beta, mode,
                                     b.bn1.running_mean, b.bn1.running_var,
                                     0.9, 1e-5, acts ? &ba.s1 : nullptr);
      Tensor4<T> c1 = conv2d_forward(r1, b.conv1, algo);
      r1 = Tensor4<T>();
      Tensor4<T> r2;
      if (acts) {
        r2 = batchnorm_relu(c1, b.bn2.gamma, b.bn2.beta, mode,
                            b.bn2.running_mean, b.bn2.running_var, 0.9, 1e-5,
                            &ba.s2);
        ba.c1 = std::move(c1);
      } else {
        r2 = batchnorm_relu(std::move(c1), b.bn2.gamma, b.bn2.beta, mode,
                            b.bn2.running_mean, b.bn2.running_var);
      }
      c1 = Tensor4<T>();
      Tensor4<T> out = conv2d_forward(r2, b.conv2, algo);
      r2 = Tensor4<T>();
      detail::add_planes(out, f, b.cin);
      if (acts) {
        ba.x = std::move(f);
        acts->blocks.push_back(std::move(ba));
      }
      f = std::move(out);
    }
    Tensor4<T> rh;
    if (acts) {
      acts->feat = std::move(f);
      rh = batchnorm_relu(acts->feat, head_bn.gamma, head_bn.beta, mode,
                          head_bn.running_mean, head_bn.running_var, 0.9, 1e-5,
                          &acts->head_s);
    } else {
      rh = batchnorm_relu(std::move(f), head_bn.gamma, head_bn.beta, mode,
                          head_bn.running_mean, head_bn.running_var);
    }
    f = Tensor4<T>();
    Tensor4<T> probs = softmax_channels(conv2d_forward(rh, head, algo));
    if (acts) acts->probs = probs;
    return probs;
  }

  // Backward from dL/dprobs through the whole net; consumes the activations
  // (buffers are released as the sweep passes them) and returns gradients
  // aligned with params(false).
  Grads<T> backward(const Tensor4<T>& grad_probs, Activations<T>& acts) {
    Grads<T> gr;
    for_each_param(false, [&](const std::string&, std::vector<T>& v) {
      gr.values.emplace_back(v.size(), T(0));
    });
    const std::size_t nb = blocks.size();
    const auto blk_base = [](std::size_t i) { return 2 + 8 * i; };
    const std::size_t head_base = 2 + 8 * nb;

    // head: softmax -> 1x1 conv -> ReLU -> BN
    Tensor4<T> g_logits = softmax_backward(acts.probs, grad_probs);
    acts.probs = Tensor4<T>();
    Tensor4<T> flow;
    {
      Tensor4<T> rh = batchnorm_apply_relu(acts.feat, head_bn.gamma,
                                           head_bn.beta, acts.head_s);
      Conv2dGrads<T> cg = conv2d_backward(rh, head, g_logits, algo);
      g_logits = Tensor4<T>();
      gr.values[head_base + 2] = std::move(cg.grad_weights);
      gr.values[head_base + 3] = std::move(cg.grad_bias);
      BnGrads<T> bg = batchnorm_backward_masked(
          acts.feat, head_bn.gamma, acts.head_s, std::move(cg.grad_input), rh);
      rh = Tensor4<T>();
      acts.feat = Tensor4<T>();
      gr.values[head_base + 0] = std::move(bg.grad_gamma);
      gr.values[head_base + 1] = std::move(bg.grad_beta);
      flow = std::move(bg.grad_input);
    }

    for (std::size_t ri = nb; ri-- > 0;) {
      ResBlock<T>& b = blocks[ri];
      BlockActs<T>& ba = acts.blocks[ri];
      const std::size_t base = blk_base(ri);
      Tensor4<T> r2 =
          batchnorm_apply_relu(ba.c1, b.bn2.gamma, b.bn2.beta, ba.s2);
      Conv2dGrads<T> cg2 = conv2d_backward(r2, b.conv2, flow, algo);
      gr.values[base + 6] = std::move(cg2.grad_weights);
      gr.values[base + 7] = std::move(cg2.grad_bias);
      BnGrads<T> bg2 = batchnorm_backward_masked(
          ba.c1, b.bn2.gamma, ba.s2, std::move(cg2.grad_input), r2);
      r2 = Tensor4<T>();
      ba.c1 = Tensor4<T>();
      gr.values[base + 4] = std::move(bg2.grad_gamma);
      gr.values[base + 5] = std::move(bg2.grad_beta);
      Tensor4<T> r1 =
          batchnorm_apply_relu(ba.x, b.bn1.gamma, b.bn1.beta, ba.s1);
      Conv2dGrads<T> cg1 = conv2d_backward(r1, b.conv1, bg2.grad_input, algo);
      bg2.grad_input = Tensor4<T>();
      gr.values[base + 2] = std::move(cg1.grad_weights);
      gr.values[base + 3] = std::move(cg1.grad_bias);
      BnGrads<T> bg1 = batchnorm_backward_masked(
          ba.x, b.bn1.gamma, ba.s1, std::move(cg1.grad_input), r1);
      r1 = Tensor4<T>();
      ba.x = Tensor4<T>();
      gr.values[base + 0] = std::move(bg1.grad_gamma);
      gr.values[base + 1] = std::move(bg1.grad_beta);
      // identity-skip adjoint: the first cin channels of the block-output
      // gradient flow straight through
      detail::add_planes(bg1.grad_input, flow, b.cin);
      flow = std::move(bg1.grad_input);
    }

    // the stem is the first layer: nothing consumes its input gradient
    Conv2dGrads<T> cg = conv2d_backward(acts.input, stem, flow, algo,
                                        /*need_input_grad=*/false);
    acts.input = Tensor4<T>();
    gr.values[0] = std::move(cg.grad_weights);
    gr.values[1] = std::move(cg.grad_bias);
    return gr;
  }

 private:
  void init_weights(Rng& rng) {
    const auto he_fill = [&](ConvKernel<T>& k) {
      const double stddev =
          std::sqrt(2.0 / static_cast<double>(k.cin * k.kh * k.kw));
      for (T& w : k.weights) w = static_cast<T>(rng.normal() * stddev);
    };
    he_fill(stem);
    for (ResBlock<T>& b : blocks) {
      he_fill(b.conv1);
      he_fill(b.conv2);
    }
    he_fill(head);
  }
};

// Binary lung map from class probabilities: lung iff p_lung > 0.5 (an exact
// tie is background). Output is N x 1 x H x W with values {0, 1}.
template <class T>
Tensor4<std::uint8_t> predict_mask(const Tensor4<T>& probs) {
  if (probs.c() != 2)
    throw ShapeError("predict_mask: expects 2-class probabilities");
  Tensor4<std::uint8_t> m(probs.n(), 1, probs.h(), probs.w());
  const std::int64_t HW = probs.h() * probs.w();
  for (std::int64_t n = 0; n < probs.n(); ++n) {
    const T* p = probs.plane(n, 1);
    std::uint8_t* q = m.plane(n, 0);
    for (std::int64_t i = 0; i < HW; ++i) q[i] = p[i] > T(0.5) ? 1 : 0;
  }
  return m;
}

// Checkpoint container: magic "CTSEG1\0", config block, then every parameter
// in enumeration order as (name, shape, 32-bit little-endian reals).
template <class T>
void save_checkpoint(const std::string& path, SegNet<T>& net);
template <class T>
SegNet<T> load_checkpoint(const std::string& path);
NetConfig checkpoint_config(const std::string& path);

}  // namespace ctseg
