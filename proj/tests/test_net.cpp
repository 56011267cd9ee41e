#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "ctseg/net.hpp"
#include "gradcheck.hpp"

using namespace ctseg;
using gradcheck::random_tensor;
using gradcheck::rel_err;

namespace {

// Applies one residual block in infer mode, mirroring SegNet::forward.
template <class T>
Tensor4<T> infer_block(ResBlock<T>& b, const Tensor4<T>& x, ConvAlgo algo) {
  Tensor4<T> r1 = relu(batchnorm(x, b.bn1.gamma, b.bn1.beta, NetMode::infer,
                                 b.bn1.running_mean, b.bn1.running_var));
  Tensor4<T> c1 = conv2d_forward(r1, b.conv1, algo);
  Tensor4<T> r2 = relu(batchnorm(c1, b.bn2.gamma, b.bn2.beta, NetMode::infer,
                                 b.bn2.running_mean, b.bn2.running_var));
  Tensor4<T> out = conv2d_forward(r2, b.conv2, algo);
  detail::add_planes(out, x, b.cin);
  return out;
}

template <class T>
bool params_equal(SegNet<T>& a, SegNet<T>& b) {
  const ParamSet<T> pa = a.params(true), pb = b.params(true);
  if (pa.names != pb.names) return false;
  for (std::size_t i = 0; i < pa.values.size(); ++i)
    if (*pa.values[i] != *pb.values[i]) return false;
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_SUITE("net-build") {
  TEST_CASE("default config yields exactly 20 conv layers") {
    NetConfig cfg;
    CHECK(cfg.conv_layers() == 20);
    auto net = SegNet<double>::build(cfg);
    int conv_weights = 0;
    net.for_each_param(false, [&](const std::string& name,
                                  std::vector<double>&) {
      if (name.size() >= 7 &&
          name.compare(name.size() - 7, 7, ".weight") == 0)
        ++conv_weights;
    });
    CHECK(conv_weights == 20);
  }

  TEST_CASE("default parameter counts match the frozen constants") {
    auto net = SegNet<double>::build(NetConfig{});
    CHECK(net.param_count(false) == 269602);  // trainable
    CHECK(net.param_count(true) == 270978);   // + BN running stats
  }

  TEST_CASE("identical seeds build bitwise-identical parameters") {
    NetConfig cfg;
    cfg.seed = 123456789;
    auto a = SegNet<double>::build(cfg);
    auto b = SegNet<double>::build(cfg);
    CHECK(params_equal(a, b));
    cfg.seed = 987654321;
    auto c = SegNet<double>::build(cfg);
    CHECK_FALSE(params_equal(a, c));
  }

  TEST_CASE("invalid configs are rejected") {
    NetConfig narrow;
    narrow.group_channels = {16, 8, 4};
    CHECK_THROWS_AS(SegNet<double>::build(narrow), ConfigError);
    NetConfig even;
    even.kernel = 4;
    CHECK_THROWS_AS(SegNet<double>::build(even), ConfigError);
    NetConfig one_class;
    one_class.num_classes = 1;
    CHECK_THROWS_AS(SegNet<double>::build(one_class), ConfigError);
  }
}

TEST_SUITE("net-forward") {
  TEST_CASE("1x1x32x32 input gives 1x2x32x32 probability maps") {
    NetConfig cfg;
    cfg.seed = 7;
    auto net = SegNet<double>::build(cfg);
    Rng rng(31);
    const Tensor4<double> x =
        random_tensor<double>(rng, 1, 1, 32, 32, 0.0, 1.0);
    const Tensor4<double> p = net.forward(x, NetMode::infer);
    REQUIRE(p.n() == 1);
    REQUIRE(p.c() == 2);
    REQUIRE(p.h() == 32);
    REQUIRE(p.w() == 32);
    for (std::int64_t i = 0; i < 32 * 32; ++i)
      CHECK(std::fabs(p.plane(0, 0)[i] + p.plane(0, 1)[i] - 1.0) < 1e-6);
  }

  TEST_CASE("spatial size is preserved for assorted extents >= 9") {
    NetConfig cfg;
    cfg.group_channels = {4, 4, 4};
    cfg.blocks_per_group = 1;
    cfg.seed = 9;
    auto net = SegNet<double>::build(cfg);
    Rng rng(42);
    for (const auto [h, w] :
         {std::pair{9, 9}, std::pair{13, 17}, std::pair{21, 10}}) {
      const Tensor4<double> x =
          random_tensor<double>(rng, 1, 1, h, w, 0.0, 1.0);
      const Tensor4<double> p = net.forward(x, NetMode::infer);
      CHECK(p.h() == h);
      CHECK(p.w() == w);
    }
  }

  TEST_CASE("identical samples in one infer batch get identical maps") {
    NetConfig cfg;
    cfg.group_channels = {4, 6, 8};
    cfg.blocks_per_group = 1;
    cfg.seed = 11;
    auto net = SegNet<double>::build(cfg);
    Rng rng(52);
    Tensor4<double> x(2, 1, 12, 12);
    for (std::int64_t i = 0; i < 144; ++i) {
      x.plane(0, 0)[i] = rng.uniform();
      x.plane(1, 0)[i] = x.plane(0, 0)[i];
    }
    const Tensor4<double> p = net.forward(x, NetMode::infer);
    CHECK(std::memcmp(p.plane(0, 0), p.plane(1, 0),
                      sizeof(double) * 144) == 0);
    CHECK(std::memcmp(p.plane(0, 1), p.plane(1, 1),
                      sizeof(double) * 144) == 0);
  }

  TEST_CASE("infer forward is deterministic and leaves the net unchanged") {
    NetConfig cfg;
    cfg.group_channels = {4, 6, 8};
    cfg.blocks_per_group = 2;
    cfg.seed = 13;
    auto net = SegNet<double>::build(cfg);
    Rng rng(62);
    const Tensor4<double> x =
        random_tensor<double>(rng, 1, 1, 16, 16, 0.0, 1.0);
    const Tensor4<double> p1 = net.forward(x, NetMode::infer);
    const Tensor4<double> p2 = net.forward(x, NetMode::infer);
    CHECK(std::memcmp(p1.data.data(), p2.data.data(),
                      p1.data.size() * sizeof(double)) == 0);
  }

  TEST_CASE("zero-initialized head conv gives uniform 0.5 everywhere") {
    NetConfig cfg;
    cfg.group_channels = {4, 4, 4};
    cfg.blocks_per_group = 1;
    cfg.seed = 17;
    auto net = SegNet<double>::build(cfg);
    std::fill(net.head.weights.begin(), net.head.weights.end(), 0.0);
    std::fill(net.head.bias.begin(), net.head.bias.end(), 0.0);
    Rng rng(72);
    const Tensor4<double> x =
        random_tensor<double>(rng, 1, 1, 10, 10, 0.0, 1.0);
    const Tensor4<double> p = net.forward(x, NetMode::infer);
    for (const double v : p.data)
      CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("wrong channel count or tiny extent raises ShapeError") {
    auto net = SegNet<double>::build(NetConfig{});
    CHECK_THROWS_AS(net.forward(Tensor4<double>(1, 2, 16, 16), NetMode::infer),
                    ShapeError);
    CHECK_THROWS_AS(net.forward(Tensor4<double>(1, 1, 8, 16), NetMode::infer),
                    ShapeError);
  }

  TEST_CASE("zeroing a block's convs turns it into the identity map") {
    NetConfig cfg;
    cfg.group_channels = {4, 4, 4};
    cfg.blocks_per_group = 2;
    cfg.seed = 19;
    auto net = SegNet<double>::build(cfg);
    const std::size_t victim = 2;  // a 4->4 block
    auto& blk = net.blocks[victim];
    std::fill(blk.conv2.weights.begin(), blk.conv2.weights.end(), 0.0);
    std::fill(blk.conv2.bias.begin(), blk.conv2.bias.end(), 0.0);
    Rng rng(82);
    const Tensor4<double> x =
        random_tensor<double>(rng, 1, 1, 12, 12, 0.0, 1.0);
    const Tensor4<double> p = net.forward(x, NetMode::infer);
    // Hand-compose the same forward with the victim block skipped entirely.
    Tensor4<double> f = conv2d_forward(x, net.stem, net.algo);
    for (std::size_t i = 0; i < net.blocks.size(); ++i)
      if (i != victim) f = infer_block(net.blocks[i], f, net.algo);
    Tensor4<double> rh =
        relu(batchnorm(f, net.head_bn.gamma, net.head_bn.beta, NetMode::infer,
                       net.head_bn.running_mean, net.head_bn.running_var));
    const Tensor4<double> ref =
        softmax_channels(conv2d_forward(rh, net.head, net.algo));
    REQUIRE(p.same_shape(ref));
    CHECK(std::memcmp(p.data.data(), ref.data.data(),
                      p.data.size() * sizeof(double)) == 0);
  }
}

TEST_SUITE("net-backward") {
  TEST_CASE("end-to-end gradient matches finite differences") {
    NetConfig cfg;
    cfg.group_channels = {2, 3, 4};
    cfg.blocks_per_group = 1;
    cfg.seed = 23;
    auto net = SegNet<double>::build(cfg);
    Rng rng(92);
    const Tensor4<double> x = random_tensor<double>(rng, 1, 1, 9, 9, 0.0, 1.0);
    Tensor4<double> target(1, 2, 9, 9, 0.0);
    for (std::int64_t i = 0; i < 81; ++i) {
      const std::int64_t on = rng.uniform_int(0, 1);
      target.plane(0, on)[i] = 1.0;
    }
    Activations<double> acts;
    Tensor4<double> probs = net.forward(x, NetMode::train, &acts);
    Tensor4<double> gp(1, 2, 9, 9);
    dice_ns_loss(probs, target, &gp);
    const Grads<double> g = net.backward(gp, acts);
    const ParamSet<double> ps = net.params(false);
    const auto loss = [&] {
      SegNet<double> probe = net;  // keep running-stat updates out of f
      return dice_ns_loss(probe.forward(x, NetMode::train), target);
    };
    int checked = 0;
    for (int trial = 0; trial < 24; ++trial) {
      const std::size_t k = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(ps.values.size()) - 1));
      if (ps.values[k]->empty()) continue;
      const std::size_t i = static_cast<std::size_t>(rng.uniform_int(
          0, static_cast<std::int64_t>(ps.values[k]->size()) - 1));
      const double fd =
          gradcheck::central_diff(&(*ps.values[k])[i], loss);
      CHECK_MESSAGE(rel_err(g.values[k][i], fd) < 1e-4,
                    ps.names[k] << "[" << i << "]");
      ++checked;
    }
    CHECK(checked >= 10);
  }

  TEST_CASE("a few optimizer steps reduce the training loss") {
    NetConfig cfg;
    cfg.group_channels = {4, 6, 8};
    cfg.blocks_per_group = 1;
    cfg.seed = 29;
    auto net = SegNet<double>::build(cfg);
    Rng rng(102);
    const Tensor4<double> x =
        random_tensor<double>(rng, 2, 1, 16, 16, 0.0, 1.0);
    Tensor4<double> target(2, 2, 16, 16, 0.0);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < 256; ++i) {
        const bool lung = (i % 16) < 8;  // left half is foreground
        target.plane(n, lung ? 1 : 0)[i] = 1.0;
      }
    ParamSet<double> ps = net.params(false);
    AdamState<double> adam;
    adam.lr = 0.02;
    std::vector<std::size_t> sizes;
    for (const auto* v : ps.values) sizes.push_back(v->size());
    adam.init(sizes);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 30; ++step) {
      Activations<double> acts;
      Tensor4<double> probs = net.forward(x, NetMode::train, &acts);
      Tensor4<double> gp(2, 2, 16, 16);
      const double L = dice_ns_loss(probs, target, &gp);
      if (step == 0) first = L;
      last = L;
      Grads<double> g = net.backward(gp, acts);
      std::vector<const std::vector<double>*> gptr;
      for (const auto& v : g.values) gptr.push_back(&v);
      adam_step(adam, ps.values, gptr, &ps.names);
    }
    CHECK(last < first);
    CHECK(last < 0.45);  // should be well below the 0.5 chance level
  }
}

TEST_SUITE("net-mask") {
  TEST_CASE("thresholds at 0.5 with ties to background") {
    Tensor4<double> p(1, 2, 1, 3);
    p.at(0, 1, 0, 0) = 0.9;
    p.at(0, 0, 0, 0) = 0.1;
    p.at(0, 1, 0, 1) = 0.5;
    p.at(0, 0, 0, 1) = 0.5;
    p.at(0, 1, 0, 2) = 0.0;
    p.at(0, 0, 0, 2) = 1.0;
    const Tensor4<std::uint8_t> m = predict_mask(p);
    CHECK(m.at(0, 0, 0, 0) == 1);
    CHECK(m.at(0, 0, 0, 1) == 0);  // exact tie -> background
    CHECK(m.at(0, 0, 0, 2) == 0);
    const Tensor4<double> all_bg(1, 2, 4, 4, 0.0);
    const Tensor4<std::uint8_t> empty = predict_mask(all_bg);
    for (const std::uint8_t v : empty.data) CHECK(v == 0);
  }
}

TEST_SUITE("net-checkpoint") {
  TEST_CASE("save/load round-trips parameters bit for bit") {
    NetConfig cfg;
    cfg.group_channels = {4, 6, 8};
    cfg.blocks_per_group = 2;
    cfg.seed = 31;
    auto net = SegNet<float>::build(cfg);
    // make running stats nontrivial so they are exercised too
    Rng rng(112);
    net.forward(random_tensor<float>(rng, 2, 1, 12, 12, 0.0, 1.0),
                NetMode::train);
    const std::string path = "test_ckpt_roundtrip.bin";
    save_checkpoint(path, net);
    auto loaded = load_checkpoint<float>(path);
    CHECK(loaded.cfg == net.cfg);
    CHECK(params_equal(net, loaded));
    // a second save of the loaded net must produce identical bytes
    const std::string path2 = "test_ckpt_roundtrip2.bin";
    save_checkpoint(path2, loaded);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
  }

  TEST_CASE("64-bit nets round-trip through the 32-bit container stably") {
    NetConfig cfg;
    cfg.group_channels = {4, 4, 4};
    cfg.blocks_per_group = 1;
    cfg.seed = 37;
    auto net = SegNet<double>::build(cfg);
    const std::string a = "test_ckpt_f64_a.bin";
    const std::string b = "test_ckpt_f64_b.bin";
    save_checkpoint(a, net);
    auto loaded = load_checkpoint<double>(a);
    save_checkpoint(b, loaded);
    CHECK(slurp(a) == slurp(b));  // f32 values are a fixed point
    std::remove(a.c_str());
    std::remove(b.c_str());
  }

  TEST_CASE("config readback and bad files") {
    NetConfig cfg;
    cfg.group_channels = {4, 6, 8};
    cfg.blocks_per_group = 1;
    cfg.seed = 41;
    auto net = SegNet<float>::build(cfg);
    const std::string path = "test_ckpt_cfg.bin";
    save_checkpoint(path, net);
    CHECK(checkpoint_config(path) == cfg);
    std::remove(path.c_str());
    std::ofstream("test_ckpt_junk.bin") << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint<float>("test_ckpt_junk.bin"), FormatError);
    std::remove("test_ckpt_junk.bin");
    CHECK_THROWS_AS(load_checkpoint<float>("test_ckpt_missing.bin"), IoError);
  }
}
