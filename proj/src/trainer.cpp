#include "ctseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ctseg/binio.hpp"
#include "ctseg/errors.hpp"
#include "ctseg/ops.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/textio.hpp"
#include "ctseg/tuning.hpp"

namespace ctseg {

namespace {

// Substream tag for the train/val split so it never collides with the
// per-epoch shuffle streams (which use the epoch number).
constexpr std::uint64_t kSplitStream = 0x53504C4954ULL;

constexpr char kStateMagic[8] = {'C', 'T', 'S', 'E', 'G', 'T', 'S', '1'};

std::string join_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw ConfigError("TrainConfig: lr must be positive");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (max_epochs < 0) throw ConfigError("TrainConfig: max_epochs must be >= 0");
  if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
    throw ConfigError("TrainConfig: val_fraction must lie in (0, 1)");
  if (checkpoint_every < 0)
    throw ConfigError("TrainConfig: checkpoint_every must be >= 0");
  if (early_stop_patience < 0)
    throw ConfigError("TrainConfig: early_stop_patience must be >= 0");
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg;
  for (const auto& [key, value] : textio::read_kv(path)) {
    if (key == "lr")
      cfg.lr = textio::parse_double(value);
    else if (key == "batch_size")
      cfg.batch_size = static_cast<int>(textio::parse_int(value));
    else if (key == "weight_decay")
      cfg.weight_decay = textio::parse_double(value);
    else if (key == "max_epochs")
      cfg.max_epochs = static_cast<int>(textio::parse_int(value));
    else if (key == "val_fraction")
      cfg.val_fraction = textio::parse_double(value);
    else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(textio::parse_int(value));
    else if (key == "checkpoint_every")
      cfg.checkpoint_every = static_cast<int>(textio::parse_int(value));
    else if (key == "early_stop_patience")
      cfg.early_stop_patience = static_cast<int>(textio::parse_int(value));
    else
      throw ConfigError("unknown training key: " + key);
  }
  cfg.validate();
  return cfg;
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  textio::write_kv(
      path,
      {{"lr", textio::fmt_full(cfg.lr)},
       {"batch_size", std::to_string(cfg.batch_size)},
       {"weight_decay", textio::fmt_full(cfg.weight_decay)},
       {"max_epochs", std::to_string(cfg.max_epochs)},
       {"val_fraction", textio::fmt_full(cfg.val_fraction)},
       {"seed", std::to_string(static_cast<std::int64_t>(cfg.seed))},
       {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
       {"early_stop_patience", std::to_string(cfg.early_stop_patience)}});
}

SubjectSplit split_subjects(std::size_t n_subjects, double val_fraction,
                            std::uint64_t seed) {
  if (n_subjects < 2)
    throw DataError("split_subjects: need at least 2 subjects, have " +
                    std::to_string(n_subjects));
  if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
    throw ConfigError("split_subjects: val_fraction must lie in (0, 1)");
  const auto n = static_cast<std::int64_t>(n_subjects);
  std::int64_t n_val =
      std::max<std::int64_t>(1, std::llround(val_fraction * double(n)));
  n_val = std::min(n_val, n - 1);  // keep at least one training subject

  std::vector<std::size_t> order(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) order[i] = i;
  Rng rng(mix_seed(seed, kSplitStream));
  rng.shuffle(order.begin(), order.end());

  SubjectSplit split;
  split.val.assign(order.begin(), order.begin() + n_val);
  split.train.assign(order.begin() + n_val, order.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

namespace {

// All subjects must agree on the in-plane grid and carry matching masks.
void check_subjects(const std::vector<TrainSubject>& subjects,
                    const std::vector<std::size_t>& chosen) {
  if (chosen.empty()) throw DataError("no subjects selected");
  const TrainSubject& first = subjects.at(chosen.front());
  for (const std::size_t idx : chosen) {
    const TrainSubject& s = subjects.at(idx);
    if (s.image.shape != s.mask.shape)
      throw DataError("subject " + s.id + ": image and mask grids differ");
    if (s.image.nx() != first.image.nx() || s.image.ny() != first.image.ny())
      throw DataError("subject " + s.id +
                      ": slice extent differs from the rest of the cohort");
  }
}

}  // namespace

std::vector<SliceRef> fixed_slice_order(
    const std::vector<TrainSubject>& subjects,
    const std::vector<std::size_t>& chosen) {
  check_subjects(subjects, chosen);
  std::vector<SliceRef> order;
  for (const std::size_t idx : chosen)
    for (std::int64_t z = 0; z < subjects[idx].image.nz(); ++z)
      order.push_back({idx, z});
  return order;
}

std::vector<SliceRef> epoch_slice_order(
    const std::vector<TrainSubject>& subjects,
    const std::vector<std::size_t>& chosen, std::uint64_t seed,
    std::int64_t epoch) {
  std::vector<SliceRef> order = fixed_slice_order(subjects, chosen);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  return order;
}

template <class T>
SliceBatch<T> make_batch(const std::vector<TrainSubject>& subjects,
                         const std::vector<SliceRef>& order, std::size_t first,
                         std::size_t count) {
  if (count == 0 || first + count > order.size())
    throw ShapeError("make_batch: slice range out of bounds");
  const TrainSubject& lead = subjects.at(order[first].subject);
  const std::int64_t H = lead.image.ny(), W = lead.image.nx(), HW = H * W;

  SliceBatch<T> batch;
  batch.images = Tensor4<T>(static_cast<std::int64_t>(count), 1, H, W);
  batch.targets = Tensor4<T>(static_cast<std::int64_t>(count), 2, H, W);
  batch.slices.assign(order.begin() + static_cast<std::ptrdiff_t>(first),
                      order.begin() + static_cast<std::ptrdiff_t>(first + count));

  for (std::size_t b = 0; b < count; ++b) {
    const SliceRef ref = batch.slices[b];
    const TrainSubject& s = subjects.at(ref.subject);
    if (s.image.shape != s.mask.shape)
      throw DataError("subject " + s.id + ": image and mask grids differ");
    if (s.image.ny() != H || s.image.nx() != W)
      throw DataError("subject " + s.id + ": inconsistent slice shape");
    if (ref.z < 0 || ref.z >= s.image.nz())
      throw ShapeError("make_batch: slice index out of range");
    const float* img = s.image.slice(ref.z);
    const std::uint8_t* msk = s.mask.slice(ref.z);
    T* di = batch.images.plane(static_cast<std::int64_t>(b), 0);
    T* bg = batch.targets.plane(static_cast<std::int64_t>(b), 0);
    T* fg = batch.targets.plane(static_cast<std::int64_t>(b), 1);
    for (std::int64_t i = 0; i < HW; ++i) {
      di[i] = static_cast<T>(img[i]);
      const T m = static_cast<T>(msk[i]);
      fg[i] = m;
      bg[i] = T(1) - m;
    }
  }
  return batch;
}

void write_train_report(const TrainReport& report, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const EpochRecord& r : report.epochs)
    rows.push_back({std::to_string(r.epoch), textio::fmt_full(r.train_loss),
                    textio::fmt_full(r.val_loss),
                    textio::fmt_full(r.seconds)});
  textio::write_csv(path, {"epoch", "train_loss", "val_loss", "seconds"},
                    rows);
}

namespace {

// Everything the loop must carry across an interruption. Parameters and
// optimizer moments are stored as 64-bit reals so resuming reproduces the
// uninterrupted run bitwise in either precision.
template <class T>
struct LoopState {
  std::int64_t epochs_done = 0;
  std::int64_t best_epoch = 0;
  double best_val = 0.0;
  std::int64_t since_best = 0;
  AdamState<T> adam;
  std::vector<std::vector<T>> best_params;  // aligned with params(true)
  std::vector<EpochRecord> history;
};

template <class T>
std::vector<std::vector<T>> snapshot_params(SegNet<T>& net) {
  std::vector<std::vector<T>> out;
  for (std::vector<T>* v : net.params(true).values) out.push_back(*v);
  return out;
}

template <class T>
void restore_params(SegNet<T>& net, const std::vector<std::vector<T>>& snap) {
  ParamSet<T> ps = net.params(true);
  if (snap.size() != ps.values.size())
    throw ShapeError("restore_params: snapshot/network mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i) {
    if (snap[i].size() != ps.values[i]->size())
      throw ShapeError("restore_params: size mismatch at " + ps.names[i]);
    *ps.values[i] = snap[i];
  }
}

template <class T>
void save_state(const std::string& path, SegNet<T>& net,
                const LoopState<T>& st, const TrainConfig& cfg,
                std::size_t n_subjects) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    binio::write_raw(os, kStateMagic, sizeof(kStateMagic));
    binio::write_pod<double>(os, cfg.lr);
    binio::write_pod<std::int64_t>(os, cfg.batch_size);
    binio::write_pod<double>(os, cfg.weight_decay);
    binio::write_pod<double>(os, cfg.val_fraction);
    binio::write_pod<std::uint64_t>(os, cfg.seed);
    binio::write_pod<std::int64_t>(os, static_cast<std::int64_t>(n_subjects));
    binio::write_pod<std::int64_t>(os, st.epochs_done);
    binio::write_pod<std::int64_t>(os, st.best_epoch);
    binio::write_pod<double>(os, st.best_val);
    binio::write_pod<std::int64_t>(os, st.since_best);

    ParamSet<T> ps = net.params(true);
    binio::write_pod<std::int64_t>(os,
                                   static_cast<std::int64_t>(ps.values.size()));
    for (const std::vector<T>* v : ps.values) {
      binio::write_pod<std::int64_t>(os, static_cast<std::int64_t>(v->size()));
      binio::write_f64v(os, *v);
    }

    binio::write_pod<std::int64_t>(os, st.adam.step);
    binio::write_pod<std::int64_t>(os,
                                   static_cast<std::int64_t>(st.adam.m.size()));
    for (std::size_t k = 0; k < st.adam.m.size(); ++k) {
      binio::write_pod<std::int64_t>(
          os, static_cast<std::int64_t>(st.adam.m[k].size()));
      binio::write_f64v(os, st.adam.m[k]);
      binio::write_f64v(os, st.adam.v[k]);
    }

    binio::write_pod<std::uint8_t>(os, st.best_params.empty() ? 0 : 1);
    for (const std::vector<T>& v : st.best_params) {
      binio::write_pod<std::int64_t>(os, static_cast<std::int64_t>(v.size()));
      binio::write_f64v(os, v);
    }

    binio::write_pod<std::int64_t>(os,
                                   static_cast<std::int64_t>(st.history.size()));
    for (const EpochRecord& r : st.history) {
      binio::write_pod<std::int64_t>(os, r.epoch);
      binio::write_pod<double>(os, r.train_loss);
      binio::write_pod<double>(os, r.val_loss);
      binio::write_pod<double>(os, r.seconds);
    }
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
LoopState<T> load_state(const std::string& path, SegNet<T>& net,
                        const TrainConfig& cfg, std::size_t n_subjects) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  binio::read_raw(is, magic, sizeof(magic));
  if (std::memcmp(magic, kStateMagic, sizeof(magic)) != 0)
    throw FormatError(path + ": not a training-state file");

  const auto check_d = [&](const char* field, double want) {
    const double got = binio::read_pod<double>(is);
    if (got != want)
      throw ConfigError("resume state disagrees with config: " +
                        std::string(field));
  };
  check_d("lr", cfg.lr);
  if (binio::read_pod<std::int64_t>(is) != cfg.batch_size)
    throw ConfigError("resume state disagrees with config: batch_size");
  check_d("weight_decay", cfg.weight_decay);
  check_d("val_fraction", cfg.val_fraction);
  if (binio::read_pod<std::uint64_t>(is) != cfg.seed)
    throw ConfigError("resume state disagrees with config: seed");
  if (binio::read_pod<std::int64_t>(is) !=
      static_cast<std::int64_t>(n_subjects))
    throw ConfigError("resume state was written for a different subject count");

  LoopState<T> st;
  st.epochs_done = binio::read_pod<std::int64_t>(is);
  st.best_epoch = binio::read_pod<std::int64_t>(is);
  st.best_val = binio::read_pod<double>(is);
  st.since_best = binio::read_pod<std::int64_t>(is);

  ParamSet<T> ps = net.params(true);
  const auto n_params = binio::read_pod<std::int64_t>(is);
  if (n_params != static_cast<std::int64_t>(ps.values.size()))
    throw ShapeError(path + ": parameter count does not match the network");
  for (std::vector<T>* v : ps.values) {
    const auto n = binio::read_pod<std::int64_t>(is);
    if (n != static_cast<std::int64_t>(v->size()))
      throw ShapeError(path + ": parameter size does not match the network");
    binio::read_f64v(is, *v);
  }

  st.adam.lr = cfg.lr;
  st.adam.weight_decay = cfg.weight_decay;
  st.adam.step = binio::read_pod<std::int64_t>(is);
  const auto n_opt = binio::read_pod<std::int64_t>(is);
  st.adam.m.resize(static_cast<std::size_t>(n_opt));
  st.adam.v.resize(static_cast<std::size_t>(n_opt));
  for (std::size_t k = 0; k < st.adam.m.size(); ++k) {
    const auto n = binio::read_pod<std::int64_t>(is);
    st.adam.m[k].resize(static_cast<std::size_t>(n));
    st.adam.v[k].resize(static_cast<std::size_t>(n));
    binio::read_f64v(is, st.adam.m[k]);
    binio::read_f64v(is, st.adam.v[k]);
  }

  if (binio::read_pod<std::uint8_t>(is) != 0) {
    st.best_params.resize(ps.values.size());
    for (std::size_t i = 0; i < st.best_params.size(); ++i) {
      const auto n = binio::read_pod<std::int64_t>(is);
      st.best_params[i].resize(static_cast<std::size_t>(n));
      binio::read_f64v(is, st.best_params[i]);
    }
  }

  const auto n_hist = binio::read_pod<std::int64_t>(is);
  for (std::int64_t i = 0; i < n_hist; ++i) {
    EpochRecord r;
    r.epoch = binio::read_pod<std::int64_t>(is);
    r.train_loss = binio::read_pod<double>(is);
    r.val_loss = binio::read_pod<double>(is);
    r.seconds = binio::read_pod<double>(is);
    st.history.push_back(r);
  }
  return st;
}

// Slice-weighted mean Dice_NS loss over the given slices without touching
// the network (inference-mode forward, no gradients).
template <class T>
double eval_loss(SegNet<T>& net, const std::vector<TrainSubject>& subjects,
                 const std::vector<SliceRef>& order, int batch_size) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::size_t first = 0; first < order.size();
       first += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(
        static_cast<std::size_t>(batch_size), order.size() - first);
    SliceBatch<T> b = make_batch<T>(subjects, order, first, count);
    const Tensor4<T> probs = net.forward(b.images, NetMode::infer);
    sum += dice_ns_loss(probs, b.targets) * static_cast<double>(count);
    n += static_cast<std::int64_t>(count);
  }
  return sum / static_cast<double>(n);
}

}  // namespace

template <class T>
TrainReport train(SegNet<T>& net, const std::vector<TrainSubject>& subjects,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& resume_from, const TrainHooks* hooks) {
  tune_allocator();
  cfg.validate();
  if (out_dir.empty()) throw ConfigError("train: output directory required");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  const SubjectSplit split =
      split_subjects(subjects.size(), cfg.val_fraction, cfg.seed);
  std::vector<std::size_t> everyone(subjects.size());
  for (std::size_t i = 0; i < everyone.size(); ++i) everyone[i] = i;
  check_subjects(subjects, everyone);
  const std::vector<SliceRef> val_order = fixed_slice_order(subjects, split.val);

  const std::string ckpt_path = join_path(out_dir, "checkpoint.ctseg");
  const std::string state_path = join_path(out_dir, "train_state.bin");

  ParamSet<T> ps = net.params(false);
  LoopState<T> st;
  if (!resume_from.empty()) {
    st = load_state(resume_from, net, cfg, subjects.size());
  } else {
    std::vector<std::size_t> sizes;
    for (const std::vector<T>* v : ps.values) sizes.push_back(v->size());
    st.adam.init(sizes);
  }
  st.adam.lr = cfg.lr;
  st.adam.weight_decay = cfg.weight_decay;

  using clock = std::chrono::steady_clock;
  for (std::int64_t e = st.epochs_done; e < cfg.max_epochs; ++e) {
    const auto t0 = clock::now();
    const std::vector<SliceRef> order =
        epoch_slice_order(subjects, split.train, cfg.seed, e);
    double loss_sum = 0.0;
    std::int64_t n_slices = 0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size();
         first += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t count = std::min<std::size_t>(
          static_cast<std::size_t>(cfg.batch_size), order.size() - first);
      SliceBatch<T> b = make_batch<T>(subjects, order, first, count);
      Activations<T> acts;
      Tensor4<T> probs = net.forward(b.images, NetMode::train, &acts);
      Tensor4<T> grad_probs;
      const double loss = dice_ns_loss(probs, b.targets, &grad_probs);
      if (!std::isfinite(loss))
        throw NumericsError("train: non-finite loss at epoch " +
                            std::to_string(e + 1) + ", batch " +
                            std::to_string(batch_index));
      probs = Tensor4<T>();
      Grads<T> grads = net.backward(grad_probs, acts);
      std::vector<const std::vector<T>*> gptrs;
      gptrs.reserve(grads.values.size());
      for (const std::vector<T>& g : grads.values) gptrs.push_back(&g);
      try {
        adam_step(st.adam, ps.values, gptrs, &ps.names);
      } catch (const NumericsError& err) {
        throw NumericsError(std::string(err.what()) + " (epoch " +
                            std::to_string(e + 1) + ", batch " +
                            std::to_string(batch_index) + ")");
      }
      loss_sum += loss * static_cast<double>(count);
      n_slices += static_cast<std::int64_t>(count);
      if (hooks && hooks->on_train_batch)
        hooks->on_train_batch(e + 1, batch_index, b.slices, loss);
    }

    EpochRecord rec;
    rec.epoch = e + 1;
    rec.train_loss = loss_sum / static_cast<double>(n_slices);
    rec.val_loss = eval_loss(net, subjects, val_order, cfg.batch_size);
    if (!std::isfinite(rec.val_loss))
      throw NumericsError("train: non-finite validation loss at epoch " +
                          std::to_string(e + 1));
    rec.seconds =
        std::chrono::duration<double>(clock::now() - t0).count();
    st.history.push_back(rec);
    st.epochs_done = e + 1;

    if (st.best_epoch == 0 || rec.val_loss < st.best_val) {
      st.best_val = rec.val_loss;
      st.best_epoch = e + 1;
      st.since_best = 0;
      st.best_params = snapshot_params(net);
      save_checkpoint(ckpt_path, net);
    } else {
      st.since_best += 1;
    }

    if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0)
      save_state(state_path, net, st, cfg, subjects.size());
    if (hooks && hooks->on_epoch) hooks->on_epoch(rec);
    if (cfg.early_stop_patience > 0 &&
        st.since_best >= cfg.early_stop_patience)
      break;
  }

  if (!st.best_params.empty())
    restore_params(net, st.best_params);
  else
    st.best_params = snapshot_params(net);  // zero-epoch run: initial weights
  save_checkpoint(ckpt_path, net);
  save_state(state_path, net, st, cfg, subjects.size());

  TrainReport report;
  report.epochs = st.history;
  report.split = split;
  report.checkpoint_path = ckpt_path;
  report.best_epoch = st.best_epoch;
  report.best_val_loss = st.best_epoch > 0 ? st.best_val : 0.0;
  return report;
}

template TrainReport train<float>(SegNet<float>&,
                                  const std::vector<TrainSubject>&,
                                  const TrainConfig&, const std::string&,
                                  const std::string&, const TrainHooks*);
template TrainReport train<double>(SegNet<double>&,
                                   const std::vector<TrainSubject>&,
                                   const TrainConfig&, const std::string&,
                                   const std::string&, const TrainHooks*);
template SliceBatch<float> make_batch<float>(const std::vector<TrainSubject>&,
                                             const std::vector<SliceRef>&,
                                             std::size_t, std::size_t);
template SliceBatch<double> make_batch<double>(
    const std::vector<TrainSubject>&, const std::vector<SliceRef>&,
    std::size_t, std::size_t);

}  // namespace ctseg
