#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/volume.hpp"

namespace ctseg {

enum class Cohort { normal, covid };

std::string cohort_name(Cohort c);
Cohort parse_cohort(const std::string& s);

// Synthetic chest phantom: an elliptic soft-tissue body holding two lung
// ellipsoids, spine and sternum bone, and a central airway tube. The covid
// cohort adds peripheral lesion blobs inside the lungs. All intensity ranges
// are in Hounsfield units.
struct PhantomSpec {
  std::array<std::int64_t, 3> shape{128, 128, 24};
  std::array<double, 3> spacing{1.5, 1.5, 5.0};  // mm
  Cohort cohort = Cohort::normal;
  int lesion_count_min = 1;  // covid cohort only
  int lesion_count_max = 6;

  double air_hu = -1000.0;
  double parenchyma_hu_lo = -880.0, parenchyma_hu_hi = -700.0;
  double soft_hu_lo = 20.0, soft_hu_hi = 60.0;
  double bone_hu_lo = 300.0, bone_hu_hi = 700.0;
  double ggo_hu_lo = -500.0, ggo_hu_hi = -300.0;
  double consolidation_hu_lo = -20.0, consolidation_hu_hi = 60.0;

  double noise_sigma = 15.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// A generated case: HU volume plus its analytically derived reference mask
// (lung ellipsoids minus the airway tube; lesions are part of the mask).
struct PhantomCase {
  Volume volume;
  BinaryMask mask;
  Cohort cohort = Cohort::normal;
  std::uint64_t seed = 0;
};

// Analytic shape parameters actually used for a given grid, in voxel units.
struct PhantomGeometry {
  std::array<double, 2> body_center{};  // (x, y); the body is an elliptic
  std::array<double, 2> body_semi{};    // cylinder spanning all slices
  std::array<std::array<double, 3>, 2> lung_center{};
  std::array<double, 3> lung_semi{};
  std::array<double, 2> tube_center{};
  double tube_radius = 0.0;
};

struct LesionInfo {
  std::array<double, 3> centroid{};  // voxel coordinates of the seed sphere
  int lung_index = 0;
  bool ggo = true;  // false: consolidation
  std::int64_t voxel_count = 0;
};

// Introspection channel for tests: the noise-free volume, the analytic
// voxel sets, and the placed-lesion records.
struct PhantomDebug {
  Volume pre_noise;
  std::vector<std::uint8_t> lung;  // full lung set, before the airway carve
  std::vector<std::uint8_t> tube;
  std::vector<std::int64_t> lesion_voxels;  // sorted, unique
  std::vector<LesionInfo> lesions;
  PhantomGeometry geom;
};

// Deterministic in the seed: three decoupled RNG substreams (tissue texture,
// lesion placement, noise) keep the normal and covid cohorts voxel-identical
// outside the lesion set at equal seeds.
PhantomCase generate(const PhantomSpec& spec, PhantomDebug* debug = nullptr);

struct CorpusEntry {
  std::string case_id;
  Cohort cohort = Cohort::normal;
  std::uint64_t seed = 0;
  std::string volume_file;  // relative to the corpus directory
  std::string mask_file;
};

// Writes volume/mask NIfTI pairs for a training cohort (covid) plus normal
// and covid test cohorts, with per-case seeds base_seed + index, and a
// manifest.csv of `case_id,cohort,seed,volume_path,mask_path`.
std::vector<CorpusEntry> generate_corpus(const std::string& dir, int n_train,
                                         int n_test_normal, int n_test_covid,
                                         std::uint64_t base_seed,
                                         const PhantomSpec& proto);

}  // namespace ctseg
