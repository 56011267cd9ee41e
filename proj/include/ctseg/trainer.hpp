#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctseg/net.hpp"
#include "ctseg/tensor.hpp"
#include "ctseg/volume.hpp"

namespace ctseg {

// Hyperparameters of one training run. The learning-rate / batch / decay
// defaults are the published operating point; the loop mechanics (epoch count,
// early stopping, checkpoint cadence) are ours.
struct TrainConfig {
  double lr = 0.02;
  int batch_size = 17;
  double weight_decay = 1e-4;
  int max_epochs = 12;
  double val_fraction = 0.05;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;     // save resumable state every k epochs (0 = off)
  int early_stop_patience = 0;  // epochs without val improvement (0 = off)

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Line-based `key = value` file whose keys are exactly the field names above.
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& cfg, const std::string& path);

// One training subject: preprocessed slices with the matching binary mask on
// the same grid.
struct TrainSubject {
  std::string id;
  Volume image;     // intensities in [0, 1], float32
  BinaryMask mask;  // {0, 1} lung labels
};

// Subject-level split; both lists are ascending indices into the subject
// vector. |val| = max(1, round(val_fraction * n)), capped so at least one
// training subject remains.
struct SubjectSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

SubjectSplit split_subjects(std::size_t n_subjects, double val_fraction,
                            std::uint64_t seed);

// One axial slice of one subject.
struct SliceRef {
  std::size_t subject = 0;
  std::int64_t z = 0;

  bool operator==(const SliceRef&) const = default;
  bool operator<(const SliceRef& o) const {
    return subject != o.subject ? subject < o.subject : z < o.z;
  }
};

// Every slice of the chosen subjects, permuted deterministically by
// (seed, epoch); epochs of one run draw distinct permutations.
std::vector<SliceRef> epoch_slice_order(
    const std::vector<TrainSubject>& subjects,
    const std::vector<std::size_t>& chosen, std::uint64_t seed,
    std::int64_t epoch);

// The same slices in fixed subject-major order (used for validation).
std::vector<SliceRef> fixed_slice_order(
    const std::vector<TrainSubject>& subjects,
    const std::vector<std::size_t>& chosen);

// A batch assembled from `count` consecutive entries of a slice order:
// images B x 1 x H x W, targets one-hot B x 2 x H x W (background, lung).
template <class T>
struct SliceBatch {
  Tensor4<T> images;
  Tensor4<T> targets;
  std::vector<SliceRef> slices;
};

template <class T>
SliceBatch<T> make_batch(const std::vector<TrainSubject>& subjects,
                         const std::vector<SliceRef>& order, std::size_t first,
                         std::size_t count);

struct EpochRecord {
  std::int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  SubjectSplit split;
  std::string checkpoint_path;
  std::int64_t best_epoch = 0;  // 1-based; 0 = no epoch ran
  double best_val_loss = 0.0;
};

// CSV with header epoch,train_loss,val_loss,seconds.
void write_train_report(const TrainReport& report, const std::string& path);

// Observation points for tests and progress logging; never influences the
// computation.
struct TrainHooks {
  std::function<void(std::int64_t epoch, std::size_t batch_index,
                     const std::vector<SliceRef>& slices, double loss)>
      on_train_batch;
  std::function<void(const EpochRecord& rec)> on_epoch;
};

// Runs the training loop: Dice_NS loss, Adam with coupled L2 decay, slice
// batches reshuffled each epoch, per-epoch validation in inference mode.
// The best-validation parameters are written to out_dir/checkpoint.ctseg as
// they occur (so an abort keeps the last good model) and restored into `net`
// before returning; resumable full-precision state goes to
// out_dir/train_state.bin. Passing resume_from continues a previous run
// bitwise-identically to one that never stopped.
template <class T>
TrainReport train(SegNet<T>& net, const std::vector<TrainSubject>& subjects,
                  const TrainConfig& cfg, const std::string& out_dir,
                  const std::string& resume_from = "",
                  const TrainHooks* hooks = nullptr);

extern template TrainReport train<float>(SegNet<float>&,
                                         const std::vector<TrainSubject>&,
                                         const TrainConfig&, const std::string&,
                                         const std::string&,
                                         const TrainHooks*);
extern template TrainReport train<double>(SegNet<double>&,
                                          const std::vector<TrainSubject>&,
                                          const TrainConfig&,
                                          const std::string&,
                                          const std::string&,
                                          const TrainHooks*);
extern template SliceBatch<float> make_batch<float>(
    const std::vector<TrainSubject>&, const std::vector<SliceRef>&,
    std::size_t, std::size_t);
extern template SliceBatch<double> make_batch<double>(
    const std::vector<TrainSubject>&, const std::vector<SliceRef>&,
    std::size_t, std::size_t);

}  // namespace ctseg
