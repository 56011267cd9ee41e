#include "ctseg/net.hpp"

#include <fstream>

#include "ctseg/binio.hpp"

namespace ctseg {

namespace {

constexpr char kMagic[7] = {'C', 'T', 'S', 'E', 'G', '1', '\0'};

// Walks every parameter entry in the same order as
// SegNet::for_each_param(true), but with shape information attached.
template <class T, class Fn>
void walk_entries(SegNet<T>& net, Fn&& fn) {
  using Dims = std::vector<std::uint32_t>;
  const auto u = [](std::int64_t v) { return static_cast<std::uint32_t>(v); };
  const auto conv = [&](const std::string& p, ConvKernel<T>& k) {
    fn(p + ".weight", k.weights, Dims{u(k.cout), u(k.cin), u(k.kh), u(k.kw)});
    fn(p + ".bias", k.bias, Dims{u(k.cout)});
  };
  const auto bn = [&](const std::string& p, BnParams<T>& b) {
    const Dims d{u(static_cast<std::int64_t>(b.gamma.size()))};
    fn(p + ".gamma", b.gamma, d);
    fn(p + ".beta", b.beta, d);
    fn(p + ".running_mean", b.running_mean, d);
    fn(p + ".running_var", b.running_var, d);
  };
  conv("stem", net.stem);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const std::string p = net.block_name(i);
    bn(p + ".bn1", net.blocks[i].bn1);
    conv(p + ".conv1", net.blocks[i].conv1);
    bn(p + ".bn2", net.blocks[i].bn2);
    conv(p + ".conv2", net.blocks[i].conv2);
  }
  bn("head.bn", net.head_bn);
  conv("head.conv", net.head);
}

void write_config(std::ostream& os, const NetConfig& c) {
  binio::write_pod<std::int32_t>(os, c.in_channels);
  binio::write_pod<std::int32_t>(os, c.num_classes);
  for (const int g : c.group_channels) binio::write_pod<std::int32_t>(os, g);
  binio::write_pod<std::int32_t>(os, c.blocks_per_group);
  binio::write_pod<std::int32_t>(os, c.kernel);
  binio::write_pod<std::uint64_t>(os, c.seed);
}

NetConfig read_config(std::istream& is) {
  NetConfig c;
  c.in_channels = binio::read_pod<std::int32_t>(is);
  c.num_classes = binio::read_pod<std::int32_t>(is);
  for (int& g : c.group_channels) g = binio::read_pod<std::int32_t>(is);
  c.blocks_per_group = binio::read_pod<std::int32_t>(is);
  c.kernel = binio::read_pod<std::int32_t>(is);
  c.seed = binio::read_pod<std::uint64_t>(is);
  return c;
}

void check_magic(std::istream& is, const std::string& path) {
  char m[sizeof(kMagic)];
  binio::read_raw(is, m, sizeof(m));
  if (std::memcmp(m, kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path + ": not a model checkpoint (bad magic)");
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, SegNet<T>& net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  binio::write_raw(os, kMagic, sizeof(kMagic));
  write_config(os, net.cfg);
  std::uint32_t count = 0;
  walk_entries(net, [&](const std::string&, std::vector<T>&,
                        const std::vector<std::uint32_t>&) { ++count; });
  binio::write_pod<std::uint32_t>(os, count);
  walk_entries(net, [&](const std::string& name, std::vector<T>& v,
                        const std::vector<std::uint32_t>& dims) {
    binio::write_string(os, name);
    binio::write_pod<std::uint32_t>(
        os, static_cast<std::uint32_t>(dims.size()));
    for (const std::uint32_t d : dims) binio::write_pod<std::uint32_t>(os, d);
    binio::write_f32v(os, v);
  });
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

NetConfig checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  check_magic(is, path);
  return read_config(is);
}

template <class T>
SegNet<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  check_magic(is, path);
  const NetConfig cfg = read_config(is);
  cfg.validate();
  SegNet<T> net = SegNet<T>::build(cfg);
  const std::uint32_t count = binio::read_pod<std::uint32_t>(is);
  std::uint32_t seen = 0;
  walk_entries(net, [&](const std::string& name, std::vector<T>& v,
                        const std::vector<std::uint32_t>& dims) {
    const std::string got = binio::read_string(is);
    if (got != name)
      throw FormatError(path + ": expected parameter '" + name + "', found '" +
                        got + "'");
    const std::uint32_t ndim = binio::read_pod<std::uint32_t>(is);
    if (ndim != dims.size())
      throw FormatError(path + ": rank mismatch for " + name);
    std::uint64_t total = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const std::uint32_t d = binio::read_pod<std::uint32_t>(is);
      if (d != dims[i]) throw FormatError(path + ": shape mismatch for " + name);
      total *= d;
    }
    if (total != v.size())
      throw FormatError(path + ": size mismatch for " + name);
    binio::read_f32v(is, v);
    ++seen;
  });
  if (seen != count)
    throw FormatError(path + ": parameter count mismatch");
  return net;
}

template void save_checkpoint<float>(const std::string&, SegNet<float>&);
template void save_checkpoint<double>(const std::string&, SegNet<double>&);
template SegNet<float> load_checkpoint<float>(const std::string&);
template SegNet<double> load_checkpoint<double>(const std::string&);

template class SegNet<float>;
template class SegNet<double>;

}  // namespace ctseg
