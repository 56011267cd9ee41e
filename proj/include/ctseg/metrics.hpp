#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctseg/volume.hpp"

namespace ctseg {

// Voxel-level confusion counts over an explicit evaluation domain.
struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t domain_size() const { return tp + fp + fn + tn; }
};

// Counts restricted to voxels where domain = 1; the usual domain is the
// full preprocessed grid (an all-ones mask).
ConfusionCounts confusion(const BinaryMask& ref, const BinaryMask& pred,
                          const BinaryMask& domain);

// Overlap scores. Both undefined when ref and pred are empty in the domain.
double dsc(const ConfusionCounts& c);  // 2 TP / (2 TP + FP + FN)
double jc(const ConfusionCounts& c);   // TP / (TP + FP + FN)

// Mean signed / absolute intensity error between the ref- and pred-masked
// normalized volume, averaged over the |ref OR pred| voxels of the union.
std::pair<double, double> me_mae(const BinaryMask& ref, const BinaryMask& pred,
                                 const Volume& normalized);

// (FP/(FP+TN), FN/(FN+TP)); throws when either denominator is zero.
std::pair<double, double> fp_fn_ratios(const ConfusionCounts& c);

// Relative differences of mean HU and of physical mask volume, in percent,
// signed against the reference (no absolute value in the denominator).
struct HuVolumeDiffs {
  std::optional<double> rel_mean_hu_pct;
  std::optional<double> abs_rel_mean_hu_pct;
  std::optional<double> rel_vol_pct;
  std::optional<double> abs_rel_vol_pct;
};

HuVolumeDiffs hu_volume_diffs(const BinaryMask& ref, const BinaryMask& pred,
                              const Volume& hu,
                              const std::array<double, 3>& spacing);

// One evaluated case. Metrics that were undefined for this case are absent
// and the case is flagged.
struct CaseMetrics {
  std::string case_id;
  std::string cohort;
  std::optional<double> dsc, jc, me, mae, fpr, fnr;
  std::optional<double> rel_mean_hu_pct, abs_rel_mean_hu_pct;
  std::optional<double> rel_vol_pct, abs_rel_vol_pct;
  bool flagged = false;

  bool operator==(const CaseMetrics&) const = default;
};

CaseMetrics evaluate_case(const std::string& case_id,
                          const std::string& cohort, const BinaryMask& ref,
                          const BinaryMask& pred, const Volume& hu,
                          const Volume& normalized, const BinaryMask& domain);

// Per-case CSV in Table-1 parameter order; missing metrics are empty cells.
extern const std::vector<std::string> kCaseMetricsHeader;
void write_case_metrics_csv(const std::string& path,
                            const std::vector<CaseMetrics>& cases);
std::vector<CaseMetrics> read_case_metrics_csv(const std::string& path);

}  // namespace ctseg
