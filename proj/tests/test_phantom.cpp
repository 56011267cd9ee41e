#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ctseg/nifti.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/textio.hpp"

using namespace ctseg;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

bool point_in_body(const PhantomGeometry& g, double x, double y) {
  const double u = (x - g.body_center[0]) / g.body_semi[0];
  const double v = (y - g.body_center[1]) / g.body_semi[1];
  return u * u + v * v <= 1.0;
}

double centroid_rho(const PhantomGeometry& g, const LesionInfo& l) {
  const auto& c = g.lung_center[static_cast<std::size_t>(l.lung_index)];
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (l.centroid[static_cast<std::size_t>(a)] -
                      c[static_cast<std::size_t>(a)]) /
                     g.lung_semi[static_cast<std::size_t>(a)];
    s += d * d;
  }
  return std::sqrt(s);
}

bool in_closed(double v, double lo, double hi) {
  return v >= lo - 1e-3 && v <= hi + 1e-3;  // slack for float storage
}

void remove_tree(const std::string& dir) {
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("spec validation rejects impossible setups") {
    PhantomSpec spec;
    spec.shape = {31, 32, 8};
    CHECK_THROWS_AS(generate(spec), ConfigError);
    spec.shape = {32, 32, 7};
    CHECK_THROWS_AS(generate(spec), ConfigError);
    spec.shape = {32, 32, 8};
    CHECK_NOTHROW(generate(spec));

    spec = PhantomSpec{};
    spec.lesion_count_min = 4;
    spec.lesion_count_max = 2;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = PhantomSpec{};
    spec.noise_sigma = -1.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = PhantomSpec{};
    spec.spacing = {1.5, 0.0, 5.0};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = PhantomSpec{};
    spec.ggo_hu_lo = -200.0;
    spec.ggo_hu_hi = -400.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }

  TEST_CASE("same seed is bitwise reproducible, different seed is not") {
    PhantomSpec spec;
    spec.cohort = Cohort::covid;
    spec.seed = 1234;
    const PhantomCase a = generate(spec);
    const PhantomCase b = generate(spec);
    CHECK(a.volume.data == b.volume.data);
    CHECK(a.mask.data == b.mask.data);

    spec.seed = 1235;
    const PhantomCase c = generate(spec);
    CHECK(a.volume.data != c.volume.data);
  }

  TEST_CASE("geometry and metadata propagate to the case") {
    PhantomSpec spec;
    spec.seed = 3;
    const PhantomCase pc = generate(spec);
    CHECK(pc.volume.shape == spec.shape);
    CHECK(pc.mask.shape == spec.shape);
    CHECK(pc.volume.spacing == spec.spacing);
    CHECK(pc.volume.dtype == VoxelType::int16);
    CHECK(pc.cohort == Cohort::normal);
    CHECK(pc.seed == 3);
    CHECK(pc.mask.count() > 0);
  }

  TEST_CASE("background stays at air level up to noise statistics") {
    for (const std::uint64_t seed : {11ull, 57ull, 2026ull}) {
      PhantomSpec spec;
      spec.seed = seed;
      PhantomDebug dbg;
      const PhantomCase pc = generate(spec, &dbg);
      double sum = 0.0;
      std::int64_t n = 0;
      std::int64_t idx = 0;
      for (std::int64_t z = 0; z < pc.volume.nz(); ++z)
        for (std::int64_t y = 0; y < pc.volume.ny(); ++y)
          for (std::int64_t x = 0; x < pc.volume.nx(); ++x, ++idx) {
            if (point_in_body(dbg.geom, static_cast<double>(x),
                              static_cast<double>(y)))
              continue;
            sum += pc.volume.data[static_cast<std::size_t>(idx)];
            ++n;
          }
      REQUIRE(n > 0);
      const double mean = sum / static_cast<double>(n);
      const double tol =
          3.0 * spec.noise_sigma / std::sqrt(static_cast<double>(n));
      CHECK(std::abs(mean - spec.air_hu) < tol);
    }
  }

  TEST_CASE("normal cohort has no lesion voxels anywhere") {
    PhantomSpec spec;
    spec.seed = 21;
    PhantomDebug dbg;
    generate(spec, &dbg);
    CHECK(dbg.lesions.empty());
    CHECK(dbg.lesion_voxels.empty());
    // the GGO band is untouched by any normal-cohort tissue
    for (const float v : dbg.pre_noise.data)
      CHECK(!(v > -500.0f && v < -300.0f));
  }

  TEST_CASE("mask is exactly the lung set minus the airway tube") {
    PhantomSpec spec;
    spec.cohort = Cohort::covid;
    spec.seed = 77;
    PhantomDebug dbg;
    const PhantomCase pc = generate(spec, &dbg);

    std::int64_t tube_in_lung = 0;
    for (std::size_t i = 0; i < pc.mask.data.size(); ++i) {
      const bool expect = dbg.lung[i] && !dbg.tube[i];
      CHECK(pc.mask.data[i] == (expect ? 1 : 0));
      if (dbg.lung[i] && dbg.tube[i]) ++tube_in_lung;
      if (pc.mask.data[i]) CHECK(dbg.tube[i] == 0);
    }
    // the tube really bites into the lungs, so the exclusion is substantive
    CHECK(tube_in_lung > 0);

    // every mask voxel sits inside the body ellipse
    std::int64_t idx = 0;
    for (std::int64_t z = 0; z < pc.mask.nz(); ++z)
      for (std::int64_t y = 0; y < pc.mask.ny(); ++y)
        for (std::int64_t x = 0; x < pc.mask.nx(); ++x, ++idx)
          if (pc.mask.data[static_cast<std::size_t>(idx)])
            CHECK(point_in_body(dbg.geom, static_cast<double>(x),
                                static_cast<double>(y)));
  }

  TEST_CASE("pre-noise intensities respect the analytic labels") {
    PhantomSpec spec;
    spec.cohort = Cohort::covid;
    spec.seed = 99;
    PhantomDebug dbg;
    const PhantomCase pc = generate(spec, &dbg);
    const std::set<std::int64_t> lesion(dbg.lesion_voxels.begin(),
                                        dbg.lesion_voxels.end());
    for (std::size_t i = 0; i < pc.mask.data.size(); ++i) {
      const double v = dbg.pre_noise.data[i];
      if (pc.mask.data[i]) {
        const bool parenchyma =
            in_closed(v, spec.parenchyma_hu_lo, spec.parenchyma_hu_hi);
        const bool ggo = in_closed(v, spec.ggo_hu_lo, spec.ggo_hu_hi);
        const bool consolidation = in_closed(v, spec.consolidation_hu_lo,
                                             spec.consolidation_hu_hi);
        CHECK((parenchyma || ggo || consolidation));
        if (!lesion.count(static_cast<std::int64_t>(i))) CHECK(parenchyma);
      } else {
        // label noise is zero by construction: parenchyma HU only in mask
        CHECK(!(v > spec.parenchyma_hu_lo + 1e-3 &&
                v < spec.parenchyma_hu_hi - 1e-3));
      }
    }
  }

  TEST_CASE("equal seeds: covid differs from normal only at lesion voxels") {
    PhantomSpec spec;
    spec.seed = 4242;
    spec.cohort = Cohort::normal;
    const PhantomCase normal = generate(spec);
    spec.cohort = Cohort::covid;
    PhantomDebug dbg;
    const PhantomCase covid = generate(spec, &dbg);

    CHECK(normal.mask.data == covid.mask.data);
    REQUIRE(!dbg.lesion_voxels.empty());

    const std::set<std::int64_t> lesion(dbg.lesion_voxels.begin(),
                                        dbg.lesion_voxels.end());
    for (std::size_t i = 0; i < normal.volume.data.size(); ++i) {
      const bool differs = normal.volume.data[i] != covid.volume.data[i];
      CHECK(differs == (lesion.count(static_cast<std::int64_t>(i)) != 0));
    }

    // infection raises the mean intensity inside the mask
    double sum_n = 0.0, sum_c = 0.0;
    std::int64_t m = 0;
    for (std::size_t i = 0; i < normal.mask.data.size(); ++i) {
      if (!normal.mask.data[i]) continue;
      sum_n += normal.volume.data[i];
      sum_c += covid.volume.data[i];
      ++m;
    }
    REQUIRE(m > 0);
    CHECK(sum_c / static_cast<double>(m) > sum_n / static_cast<double>(m));
  }

  TEST_CASE("lesions land in the peripheral shell, one to six per case") {
    for (const std::uint64_t seed : {5ull, 6ull, 7ull, 8ull}) {
      PhantomSpec spec;
      spec.cohort = Cohort::covid;
      spec.seed = seed;
      PhantomDebug dbg;
      generate(spec, &dbg);
      REQUIRE(dbg.lesions.size() >= 1);
      REQUIRE(dbg.lesions.size() <= 6);
      std::int64_t total = 0;
      for (const LesionInfo& l : dbg.lesions) {
        const double rho = centroid_rho(dbg.geom, l);
        CHECK(rho >= 0.85);  // within 15% of the boundary along the ray
        CHECK(rho <= 1.0);
        CHECK((l.lung_index == 0 || l.lung_index == 1));
        total += l.voxel_count;
      }
      CHECK(total > 0);
    }
  }
}

TEST_SUITE("phantom-corpus") {
  TEST_CASE("corpus layout, manifest, and regeneration determinism") {
    PhantomSpec proto;
    proto.shape = {48, 48, 10};
    const std::string dir_a = "test_corpus_a";
    const std::string dir_b = "test_corpus_b";
    remove_tree(dir_a);
    remove_tree(dir_b);

    const auto entries = generate_corpus(dir_a, 2, 1, 1, 500, proto);
    REQUIRE(entries.size() == 4);
    CHECK(entries[0].case_id == "train_000");
    CHECK(entries[1].case_id == "train_001");
    CHECK(entries[2].case_id == "test_normal_000");
    CHECK(entries[3].case_id == "test_covid_000");
    CHECK(entries[0].cohort == Cohort::covid);  // training set is infected
    CHECK(entries[2].cohort == Cohort::normal);
    CHECK(entries[3].cohort == Cohort::covid);
    for (std::size_t i = 0; i < entries.size(); ++i)
      CHECK(entries[i].seed == 500 + i);

    namespace fs = std::filesystem;
    for (const auto& e : entries) {
      CHECK(fs::exists(fs::path(dir_a) / e.volume_file));
      CHECK(fs::exists(fs::path(dir_a) / e.mask_file));
    }

    const auto manifest =
        textio::read_csv((fs::path(dir_a) / "manifest.csv").string());
    REQUIRE(manifest.size() == 5);  // header + 4 cases
    const std::vector<std::string> header = {"case_id", "cohort", "seed",
                                             "volume_path", "mask_path"};
    CHECK(manifest[0] == header);
    CHECK(manifest[1][1] == "covid");
    CHECK(manifest[3][1] == "normal");
    CHECK(manifest[2][2] == "501");

    // a written pair loads back consistently
    const Volume vol =
        read_volume((fs::path(dir_a) / entries[0].volume_file).string());
    const BinaryMask mask =
        read_mask((fs::path(dir_a) / entries[0].mask_file).string());
    CHECK(vol.shape == proto.shape);
    CHECK(mask.shape == proto.shape);
    CHECK(mask.count() > 0);

    // same base seed, fresh directory: byte-identical artifacts
    generate_corpus(dir_b, 2, 1, 1, 500, proto);
    CHECK(slurp((fs::path(dir_a) / "manifest.csv").string()) ==
          slurp((fs::path(dir_b) / "manifest.csv").string()));
    for (const auto& e : entries) {
      CHECK(slurp((fs::path(dir_a) / e.volume_file).string()) ==
            slurp((fs::path(dir_b) / e.volume_file).string()));
      CHECK(slurp((fs::path(dir_a) / e.mask_file).string()) ==
            slurp((fs::path(dir_b) / e.mask_file).string()));
    }
    remove_tree(dir_a);
    remove_tree(dir_b);
  }

  TEST_CASE("cohort counts below one are rejected") {
    PhantomSpec proto;
    proto.shape = {48, 48, 10};
    CHECK_THROWS_AS(generate_corpus("test_corpus_bad", 0, 1, 1, 1, proto),
                    ConfigError);
    CHECK_THROWS_AS(generate_corpus("test_corpus_bad", 1, 1, 0, 1, proto),
                    ConfigError);
    remove_tree("test_corpus_bad");
  }
}
