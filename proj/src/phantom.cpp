#include "ctseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ctseg/errors.hpp"
#include "ctseg/nifti.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/textio.hpp"

namespace ctseg {

std::string cohort_name(Cohort c) {
  return c == Cohort::normal ? "normal" : "covid";
}

Cohort parse_cohort(const std::string& s) {
  if (s == "normal") return Cohort::normal;
  if (s == "covid") return Cohort::covid;
  throw DataError("unknown cohort '" + s + "'");
}

void PhantomSpec::validate() const {
  if (shape[0] < 32 || shape[1] < 32 || shape[2] < 8)
    throw ConfigError("phantom grid too small to place the lungs");
  for (const double s : spacing)
    if (!(s > 0.0)) throw ConfigError("phantom spacing must be positive");
  if (lesion_count_min < 1 || lesion_count_max < lesion_count_min)
    throw ConfigError("phantom lesion count range is invalid");
  if (!(noise_sigma >= 0.0))
    throw ConfigError("phantom noise sigma must be non-negative");
  const double ranges[][2] = {{parenchyma_hu_lo, parenchyma_hu_hi},
                              {soft_hu_lo, soft_hu_hi},
                              {bone_hu_lo, bone_hu_hi},
                              {ggo_hu_lo, ggo_hu_hi},
                              {consolidation_hu_lo, consolidation_hu_hi}};
  for (const auto& r : ranges)
    if (!(r[0] <= r[1])) throw ConfigError("phantom HU range is inverted");
}

namespace {

// RNG substream tags; normal and covid cases share the tissue and noise
// streams, so equal seeds differ only at lesion voxels.
constexpr std::uint64_t kTissueStream = 0;
constexpr std::uint64_t kLesionStream = 1;
constexpr std::uint64_t kNoiseStream = 2;

// Shape fractions of the grid extents. The airway tube deliberately bites
// into each lung's medial tip, so the mask genuinely excludes airway voxels.
PhantomGeometry make_geometry(const std::array<std::int64_t, 3>& shape) {
  const double nx = static_cast<double>(shape[0]);
  const double ny = static_cast<double>(shape[1]);
  const double nz = static_cast<double>(shape[2]);
  PhantomGeometry g;
  g.body_center = {(nx - 1.0) / 2.0, (ny - 1.0) / 2.0};
  g.body_semi = {0.42 * nx, 0.40 * ny};
  g.lung_semi = {0.145 * nx, 0.28 * ny, 0.48 * nz};
  for (int i = 0; i < 2; ++i)
    g.lung_center[static_cast<std::size_t>(i)] = {
        g.body_center[0] + (i == 0 ? -0.16 : 0.16) * nx, g.body_center[1],
        (nz - 1.0) / 2.0};
  g.tube_center = g.body_center;
  g.tube_radius = 0.04 * nx;
  return g;
}

bool in_body(const PhantomGeometry& g, double x, double y) {
  const double u = (x - g.body_center[0]) / g.body_semi[0];
  const double v = (y - g.body_center[1]) / g.body_semi[1];
  return u * u + v * v <= 1.0;
}

bool in_tube(const PhantomGeometry& g, double x, double y) {
  const double dx = x - g.tube_center[0];
  const double dy = y - g.tube_center[1];
  return dx * dx + dy * dy <= g.tube_radius * g.tube_radius;
}

// Normalized ellipsoid radius of a point with respect to one lung: <= 1
// inside, with 1 the boundary.
double lung_rho(const PhantomGeometry& g, int lung, double x, double y,
                double z) {
  const auto& c = g.lung_center[static_cast<std::size_t>(lung)];
  const double u = (x - c[0]) / g.lung_semi[0];
  const double v = (y - c[1]) / g.lung_semi[1];
  const double w = (z - c[2]) / g.lung_semi[2];
  return std::sqrt(u * u + v * v + w * w);
}

bool in_lung(const PhantomGeometry& g, double x, double y, double z) {
  return lung_rho(g, 0, x, y, z) <= 1.0 || lung_rho(g, 1, x, y, z) <= 1.0;
}

bool in_ellipse(double x, double y, double cx, double cy, double sx,
                double sy) {
  const double u = (x - cx) / sx;
  const double v = (y - cy) / sy;
  return u * u + v * v <= 1.0;
}

bool in_bone(const std::array<std::int64_t, 3>& shape,
             const PhantomGeometry& g, double x, double y) {
  const double nx = static_cast<double>(shape[0]);
  const double ny = static_cast<double>(shape[1]);
  // posterior spine and anterior sternum, both inside the body ellipse
  return in_ellipse(x, y, g.body_center[0], g.body_center[1] + 0.33 * ny,
                    0.06 * nx, 0.05 * ny) ||
         in_ellipse(x, y, g.body_center[0], g.body_center[1] - 0.345 * ny,
                    0.09 * nx, 0.035 * ny);
}

struct Sphere {
  std::array<double, 3> center;  // voxel coordinates
  double radius_mm;
};

}  // namespace

PhantomCase generate(const PhantomSpec& spec, PhantomDebug* debug) {
  spec.validate();
  const std::int64_t nx = spec.shape[0], ny = spec.shape[1],
                     nz = spec.shape[2];
  const std::int64_t n = nx * ny * nz;
  const PhantomGeometry geom = make_geometry(spec.shape);

  std::vector<std::uint8_t> lung_set(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> tube_set(static_cast<std::size_t>(n));

  Volume pre(nx, ny, nz);
  pre.spacing = spec.spacing;
  BinaryMask mask(nx, ny, nz);
  mask.spacing = spec.spacing;

  // Tissue pass: paint precedence airway > lung > bone > soft > air, one
  // uniform draw per textured voxel in fixed index order.
  Rng tissue(mix_seed(spec.seed, kTissueStream));
  std::int64_t idx = 0;
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x, ++idx) {
        const double fx = static_cast<double>(x);
        const double fy = static_cast<double>(y);
        const double fz = static_cast<double>(z);
        const bool lung = in_lung(geom, fx, fy, fz);
        const bool tube = in_tube(geom, fx, fy);
        lung_set[static_cast<std::size_t>(idx)] = lung ? 1 : 0;
        tube_set[static_cast<std::size_t>(idx)] = tube ? 1 : 0;
        mask.data[static_cast<std::size_t>(idx)] = (lung && !tube) ? 1 : 0;
        double hu = spec.air_hu;
        if (tube) {
          hu = spec.air_hu;
        } else if (lung) {
          hu = tissue.uniform(spec.parenchyma_hu_lo, spec.parenchyma_hu_hi);
        } else if (in_bone(spec.shape, geom, fx, fy)) {
          hu = tissue.uniform(spec.bone_hu_lo, spec.bone_hu_hi);
        } else if (in_body(geom, fx, fy)) {
          hu = tissue.uniform(spec.soft_hu_lo, spec.soft_hu_hi);
        }
        pre.data[static_cast<std::size_t>(idx)] = static_cast<float>(hu);
      }

  // Lesion pass (covid only): unions of spheres seeded in the peripheral
  // shell of one lung, clipped to the mask, painted over the parenchyma.
  std::vector<std::int64_t> all_lesion_voxels;
  std::vector<LesionInfo> lesions;
  if (spec.cohort == Cohort::covid) {
    Rng lrng(mix_seed(spec.seed, kLesionStream));
    const std::int64_t count =
        lrng.uniform_int(spec.lesion_count_min, spec.lesion_count_max);
    for (std::int64_t li = 0; li < count; ++li) {
      const int lung_idx = static_cast<int>(lrng.uniform_int(0, 1));
      double dir[3] = {lrng.normal(), lrng.normal(), lrng.normal()};
      const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] +
                                    dir[2] * dir[2]);
      if (norm < 1e-12) dir[0] = 1.0;
      const double inv = norm < 1e-12 ? 1.0 : 1.0 / norm;
      const double rho = lrng.uniform(0.86, 0.94);
      const auto& lc = geom.lung_center[static_cast<std::size_t>(lung_idx)];
      const std::array<double, 3> centroid = {
          lc[0] + rho * dir[0] * inv * geom.lung_semi[0],
          lc[1] + rho * dir[1] * inv * geom.lung_semi[1],
          lc[2] + rho * dir[2] * inv * geom.lung_semi[2]};
      const double r0 = lrng.uniform(3.0, 7.0);  // mm
      const std::int64_t extra = lrng.uniform_int(1, 4);
      std::vector<Sphere> spheres{{centroid, r0}};
      for (std::int64_t s = 0; s < extra; ++s) {
        std::array<double, 3> c = centroid;
        for (int a = 0; a < 3; ++a)
          c[static_cast<std::size_t>(a)] +=
              lrng.uniform(-0.6, 0.6) * r0 /
              spec.spacing[static_cast<std::size_t>(a)];
        spheres.push_back({c, lrng.uniform(0.5, 1.0) * r0});
      }
      const bool ggo = lrng.uniform() < 0.5;

      std::vector<std::int64_t> voxels;
      for (const Sphere& sp : spheres) {
        std::int64_t lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
          const double r_vox =
              sp.radius_mm / spec.spacing[static_cast<std::size_t>(a)];
          lo[a] = std::max<std::int64_t>(
              0, static_cast<std::int64_t>(
                     std::ceil(sp.center[static_cast<std::size_t>(a)] -
                               r_vox)));
          hi[a] = std::min(spec.shape[static_cast<std::size_t>(a)] - 1,
                           static_cast<std::int64_t>(
                               std::floor(sp.center[static_cast<std::size_t>(
                                              a)] +
                                          r_vox)));
        }
        const double r2 = sp.radius_mm * sp.radius_mm;
        for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
          for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
            for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
              const double dx = (static_cast<double>(x) - sp.center[0]) *
                                spec.spacing[0];
              const double dy = (static_cast<double>(y) - sp.center[1]) *
                                spec.spacing[1];
              const double dz = (static_cast<double>(z) - sp.center[2]) *
                                spec.spacing[2];
              if (dx * dx + dy * dy + dz * dz > r2) continue;
              const std::int64_t v = mask.index(x, y, z);
              if (mask.data[static_cast<std::size_t>(v)]) voxels.push_back(v);
            }
      }
      std::sort(voxels.begin(), voxels.end());
      voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());

      const double hu_lo = ggo ? spec.ggo_hu_lo : spec.consolidation_hu_lo;
      const double hu_hi = ggo ? spec.ggo_hu_hi : spec.consolidation_hu_hi;
      for (const std::int64_t v : voxels)
        pre.data[static_cast<std::size_t>(v)] =
            static_cast<float>(lrng.uniform(hu_lo, hu_hi));

      lesions.push_back({centroid, lung_idx, ggo,
                         static_cast<std::int64_t>(voxels.size())});
      all_lesion_voxels.insert(all_lesion_voxels.end(), voxels.begin(),
                              voxels.end());
    }
    std::sort(all_lesion_voxels.begin(), all_lesion_voxels.end());
    all_lesion_voxels.erase(
        std::unique(all_lesion_voxels.begin(), all_lesion_voxels.end()),
        all_lesion_voxels.end());
  }

  PhantomCase out;
  out.cohort = spec.cohort;
  out.seed = spec.seed;
  out.volume = pre;
  out.volume.dtype = VoxelType::int16;
  out.mask = std::move(mask);

  // Noise pass: additive Gaussian on every voxel, one draw per voxel.
  Rng noise(mix_seed(spec.seed, kNoiseStream));
  for (float& v : out.volume.data)
    v = static_cast<float>(static_cast<double>(v) +
                           noise.normal(0.0, spec.noise_sigma));

  if (debug) {
    debug->pre_noise = std::move(pre);
    debug->lung = std::move(lung_set);
    debug->tube = std::move(tube_set);
    debug->lesion_voxels = std::move(all_lesion_voxels);
    debug->lesions = std::move(lesions);
    debug->geom = geom;
  }
  return out;
}

std::vector<CorpusEntry> generate_corpus(const std::string& dir, int n_train,
                                         int n_test_normal, int n_test_covid,
                                         std::uint64_t base_seed,
                                         const PhantomSpec& proto) {
  if (n_train < 1 || n_test_normal < 1 || n_test_covid < 1)
    throw ConfigError("corpus cohort counts must all be at least 1");
  proto.validate();
  namespace fs = std::filesystem;
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create corpus directory: ") + e.what());
  }

  const struct {
    const char* prefix;
    Cohort cohort;
    int count;
  } groups[] = {{"train", Cohort::covid, n_train},
                {"test_normal", Cohort::normal, n_test_normal},
                {"test_covid", Cohort::covid, n_test_covid}};

  std::vector<CorpusEntry> entries;
  std::vector<std::vector<std::string>> rows;
  std::uint64_t index = 0;
  for (const auto& grp : groups) {
    for (int i = 0; i < grp.count; ++i, ++index) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%03d", grp.prefix, i);
      PhantomSpec spec = proto;
      spec.cohort = grp.cohort;
      spec.seed = base_seed + index;
      const PhantomCase pc = generate(spec);

      CorpusEntry e;
      e.case_id = id;
      e.cohort = grp.cohort;
      e.seed = spec.seed;
      e.volume_file = std::string(id) + "_vol.nii";
      e.mask_file = std::string(id) + "_mask.nii";
      write_volume(pc.volume, (fs::path(dir) / e.volume_file).string());
      write_mask(pc.mask, (fs::path(dir) / e.mask_file).string());
      rows.push_back({e.case_id, cohort_name(e.cohort),
                      std::to_string(e.seed), e.volume_file, e.mask_file});
      entries.push_back(std::move(e));
    }
  }
  textio::write_csv((fs::path(dir) / "manifest.csv").string(),
                    {"case_id", "cohort", "seed", "volume_path", "mask_path"},
                    rows);
  return entries;
}

}  // namespace ctseg
