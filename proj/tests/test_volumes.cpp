#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ctseg/nifti.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/rng.hpp"
#include "ctseg/volume.hpp"

using namespace ctseg;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

void spew(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
T field_at(const std::string& bytes, std::size_t offset) {
  REQUIRE(bytes.size() >= offset + sizeof(T));
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

// Write vol, mutate one header field, reload from a scratch file.
template <typename T>
std::string corrupted_header(const Volume& vol, std::size_t offset, T value) {
  const std::string path = "test_nii_corrupt_src.nii";
  write_volume(vol, path);
  std::string bytes = slurp(path);
  std::remove(path.c_str());
  std::memcpy(bytes.data() + offset, &value, sizeof(T));
  const std::string out = "test_nii_corrupt.nii";
  spew(out, bytes);
  return out;
}

Volume sample_volume() {
  Volume vol(3, 2, 2);
  vol.dtype = VoxelType::int16;
  vol.spacing = {0.7, 0.8, 5.0};
  vol.origin = {-100.0, -120.5, 40.0};
  for (std::size_t i = 0; i < vol.data.size(); ++i)
    vol.data[i] = static_cast<float>(static_cast<int>(i) * 37 - 1024);
  return vol;
}

}  // namespace

TEST_SUITE("nifti") {
  TEST_CASE("int16 volume round-trips voxels and geometry exactly") {
    const Volume vol = sample_volume();
    const std::string path = "test_nii_i16.nii";
    write_volume(vol, path);
    const Volume back = read_volume(path);
    std::remove(path.c_str());

    CHECK(back.shape == vol.shape);
    CHECK(back.dtype == VoxelType::int16);
    CHECK(back.data == vol.data);  // integer HU values are exact in float
    // geometry is stored in float32 header fields
    for (int a = 0; a < 3; ++a) {
      CHECK(back.spacing[static_cast<std::size_t>(a)] ==
            static_cast<double>(static_cast<float>(
                vol.spacing[static_cast<std::size_t>(a)])));
      CHECK(back.origin[static_cast<std::size_t>(a)] ==
            static_cast<double>(static_cast<float>(
                vol.origin[static_cast<std::size_t>(a)])));
    }
  }

  TEST_CASE("float32 volume round-trips bit-exactly") {
    Volume vol(4, 3, 2);
    vol.dtype = VoxelType::float32;
    Rng rng(99);
    for (float& v : vol.data)
      v = static_cast<float>(rng.uniform(-1024.0, 400.0));
    vol.data[0] = -1000.25f;
    const std::string path = "test_nii_f32.nii";
    write_volume(vol, path);
    const Volume back = read_volume(path);
    std::remove(path.c_str());
    CHECK(back.dtype == VoxelType::float32);
    REQUIRE(back.data.size() == vol.data.size());
    CHECK(std::memcmp(back.data.data(), vol.data.data(),
                      vol.data.size() * sizeof(float)) == 0);
    CHECK(back.data[0] == -1000.25f);
  }

  TEST_CASE("written header carries the fixed layout constants") {
    const Volume vol = sample_volume();
    const std::string path = "test_nii_hdr.nii";
    write_volume(vol, path);
    const std::string bytes = slurp(path);
    std::remove(path.c_str());

    CHECK(bytes.size() == 352 + 12 * sizeof(std::int16_t));
    CHECK(field_at<std::int32_t>(bytes, 0) == 348);   // sizeof_hdr
    CHECK(field_at<std::int16_t>(bytes, 40) == 3);    // dim[0]
    CHECK(field_at<std::int16_t>(bytes, 42) == 3);    // dim[1] = nx
    CHECK(field_at<std::int16_t>(bytes, 44) == 2);    // dim[2] = ny
    CHECK(field_at<std::int16_t>(bytes, 46) == 2);    // dim[3] = nz
    CHECK(field_at<std::int16_t>(bytes, 70) == 4);    // datatype int16
    CHECK(field_at<std::int16_t>(bytes, 72) == 16);   // bitpix
    CHECK(field_at<float>(bytes, 108) == 352.0f);     // vox_offset
    CHECK(field_at<float>(bytes, 112) == 1.0f);       // scl_slope
    CHECK(field_at<float>(bytes, 116) == 0.0f);       // scl_inter
    CHECK(field_at<std::int16_t>(bytes, 254) == 1);   // sform_code
    CHECK(std::memcmp(bytes.data() + 344, "n+1\0", 4) == 0);
  }

  TEST_CASE("int16 writing rounds to nearest and range-checks") {
    Volume vol(2, 2, 1);
    vol.dtype = VoxelType::int16;
    vol.data = {100.6f, -999.4f, 0.0f, 3071.0f};
    const std::string path = "test_nii_round.nii";
    write_volume(vol, path);
    const Volume back = read_volume(path);
    std::remove(path.c_str());
    CHECK(back.data[0] == 101.0f);
    CHECK(back.data[1] == -999.0f);

    vol.data[2] = 40000.0f;  // exceeds int16
    CHECK_THROWS_AS(write_volume(vol, path), DataError);
    vol.data[2] = -40000.0f;
    CHECK_THROWS_AS(write_volume(vol, path), DataError);
    std::remove(path.c_str());
  }

  TEST_CASE("malformed and unsupported files are rejected") {
    const Volume vol = sample_volume();

    SUBCASE("bad magic") {
      const std::string p =
          corrupted_header(vol, 344, std::uint32_t{0x00636261});  // "abc\0"
      CHECK_THROWS_AS(read_volume(p), FormatError);
      std::remove(p.c_str());
    }
    SUBCASE("byte-swapped header") {
      const std::string p =
          corrupted_header(vol, 0, std::int32_t{0x5C010000});
      CHECK_THROWS_AS(read_volume(p), UnsupportedError);
      std::remove(p.c_str());
    }
    SUBCASE("unsupported datatype") {
      const std::string p = corrupted_header(vol, 70, std::int16_t{8});
      CHECK_THROWS_AS(read_volume(p), UnsupportedError);
      std::remove(p.c_str());
    }
    SUBCASE("non-3D image") {
      const std::string p = corrupted_header(vol, 40, std::int16_t{4});
      CHECK_THROWS_AS(read_volume(p), UnsupportedError);
      std::remove(p.c_str());
    }
    SUBCASE("rescaled intensities") {
      const std::string p = corrupted_header(vol, 112, 2.0f);
      CHECK_THROWS_AS(read_volume(p), UnsupportedError);
      std::remove(p.c_str());
    }
    SUBCASE("truncated file") {
      const std::string path = "test_nii_trunc.nii";
      write_volume(vol, path);
      const std::string bytes = slurp(path);
      spew(path, bytes.substr(0, 100));
      CHECK_THROWS_AS(read_volume(path), FormatError);
      std::remove(path.c_str());
    }
    SUBCASE("missing file") {
      CHECK_THROWS_AS(read_volume("no_such_file.nii"), IoError);
    }
  }

  TEST_CASE("mask round-trip and binary validation") {
    BinaryMask mask(4, 3, 2);
    mask.spacing = {1.5, 1.5, 3.0};
    Rng rng(7);
    for (auto& v : mask.data)
      v = rng.uniform() < 0.4 ? std::uint8_t{1} : std::uint8_t{0};
    mask.at(0, 0, 0) = 1;
    const std::string path = "test_nii_mask.nii";
    write_mask(mask, path);

    // stored as plain int16 {0,1}: the generic reader sees the same values
    const Volume as_vol = read_volume(path);
    CHECK(as_vol.dtype == VoxelType::int16);
    for (std::size_t i = 0; i < mask.data.size(); ++i)
      CHECK(as_vol.data[i] == static_cast<float>(mask.data[i]));

    const BinaryMask back = read_mask(path);
    CHECK(back.shape == mask.shape);
    CHECK(back.data == mask.data);
    std::remove(path.c_str());

    // a stray label value is not a mask
    Volume bad(2, 2, 1);
    bad.dtype = VoxelType::int16;
    bad.data = {0.0f, 1.0f, 2.0f, 1.0f};
    const std::string badpath = "test_nii_badmask.nii";
    write_volume(bad, badpath);
    CHECK_THROWS_AS(read_mask(badpath), DataError);
    std::remove(badpath.c_str());
  }
}

TEST_SUITE("body-bbox") {
  TEST_CASE("block of tissue in air: box is block plus clipped margin") {
    Volume vol(20, 18, 8, -1000.0f);
    for (std::int64_t z = 2; z < 6; ++z)
      for (std::int64_t y = 3; y < 13; ++y)
        for (std::int64_t x = 4; x < 14; ++x) vol.at(x, y, z) = 40.0f;

    const BBox tight = body_bbox(vol, 0);
    CHECK(tight.lo == std::array<std::int64_t, 3>{4, 3, 2});
    CHECK(tight.hi == std::array<std::int64_t, 3>{14, 13, 6});

    const BBox padded = body_bbox(vol, 2);
    CHECK(padded.lo == std::array<std::int64_t, 3>{2, 1, 0});
    CHECK(padded.hi == std::array<std::int64_t, 3>{16, 15, 8});

    // margin clips at the grid boundary
    const BBox big = body_bbox(vol, 100);
    CHECK(big.lo == std::array<std::int64_t, 3>{0, 0, 0});
    CHECK(big.hi == std::array<std::int64_t, 3>{20, 18, 8});
  }

  TEST_CASE("smaller disconnected blob does not win") {
    Volume vol(20, 18, 8, -1000.0f);
    for (std::int64_t z = 2; z < 6; ++z)
      for (std::int64_t y = 3; y < 13; ++y)
        for (std::int64_t x = 4; x < 14; ++x) vol.at(x, y, z) = 40.0f;
    // 2x2x2 satellite in the far corner, separated by air
    for (std::int64_t z = 6; z < 8; ++z)
      for (std::int64_t y = 16; y < 18; ++y)
        for (std::int64_t x = 18; x < 20; ++x) vol.at(x, y, z) = 100.0f;

    const BBox box = body_bbox(vol, 0);
    CHECK(box.lo == std::array<std::int64_t, 3>{4, 3, 2});
    CHECK(box.hi == std::array<std::int64_t, 3>{14, 13, 6});
  }

  TEST_CASE("extra air padding leaves the box unchanged") {
    Volume vol(12, 12, 4, -1000.0f);
    for (std::int64_t z = 1; z < 3; ++z)
      for (std::int64_t y = 2; y < 9; ++y)
        for (std::int64_t x = 3; x < 10; ++x) vol.at(x, y, z) = 20.0f;
    const BBox base = body_bbox(vol, 1);

    Volume padded(18, 12, 4, -1000.0f);  // same content, wider in x
    for (std::int64_t z = 0; z < 4; ++z)
      for (std::int64_t y = 0; y < 12; ++y)
        for (std::int64_t x = 0; x < 12; ++x)
          padded.at(x, y, z) = vol.at(x, y, z);
    CHECK(body_bbox(padded, 1) == base);
  }

  TEST_CASE("threshold is strict: -500 HU is still air") {
    Volume vol(4, 4, 4, -500.0f);
    CHECK_THROWS_AS(body_bbox(vol, 0), NoBodyFound);
    vol.at(2, 1, 3) = -499.5f;
    const BBox box = body_bbox(vol, 0);
    CHECK(box.lo == std::array<std::int64_t, 3>{2, 1, 3});
    CHECK(box.hi == std::array<std::int64_t, 3>{3, 2, 4});
  }

  TEST_CASE("all-air volume has no body") {
    Volume vol(6, 6, 3, -1000.0f);
    CHECK_THROWS_AS(body_bbox(vol, 5), NoBodyFound);
  }
}

TEST_SUITE("resize") {
  TEST_CASE("2x2 ramp to 2x3: midpoint appears at the new center column") {
    const std::vector<float> src = {0.f, 1.f, 0.f, 1.f};
    const std::vector<float> out = resize_slice(src.data(), 2, 2, 2, 3);
    const std::vector<float> want = {0.f, 0.5f, 1.f, 0.f, 0.5f, 1.f};
    CHECK(out == want);
  }

  TEST_CASE("2x2 ramp to 3x2: same mapping along the row axis") {
    const std::vector<float> src = {0.f, 0.f, 1.f, 1.f};
    const std::vector<float> out = resize_slice(src.data(), 2, 2, 3, 2);
    const std::vector<float> want = {0.f, 0.f, 0.5f, 0.5f, 1.f, 1.f};
    CHECK(out == want);
  }

  TEST_CASE("same-shape resize is the identity") {
    Rng rng(11);
    std::vector<float> src(7 * 5);
    for (float& v : src) v = static_cast<float>(rng.uniform(-1000.0, 400.0));
    CHECK(resize_slice(src.data(), 7, 5, 7, 5) == src);
  }

  TEST_CASE("constant input stays constant at any target size") {
    const std::vector<float> src(6 * 4, -612.5f);
    for (const float v : resize_slice(src.data(), 6, 4, 13, 3))
      CHECK(v == -612.5f);
  }

  TEST_CASE("interpolation stays inside the source range") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
      const auto sr = static_cast<std::int64_t>(rng.uniform_int(2, 12));
      const auto sc = static_cast<std::int64_t>(rng.uniform_int(2, 12));
      const auto dr = static_cast<std::int64_t>(rng.uniform_int(1, 20));
      const auto dc = static_cast<std::int64_t>(rng.uniform_int(1, 20));
      std::vector<float> src(static_cast<std::size_t>(sr * sc));
      float lo = 1e30f, hi = -1e30f;
      for (float& v : src) {
        v = static_cast<float>(rng.uniform(-1024.0, 400.0));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      for (const float v : resize_slice(src.data(), sr, sc, dr, dc)) {
        CHECK(v >= lo - 1e-3f);
        CHECK(v <= hi + 1e-3f);
      }
    }
  }

  TEST_CASE("adding a constant commutes with resizing") {
    Rng rng(31);
    std::vector<float> src(9 * 6), shifted(9 * 6);
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = static_cast<float>(rng.uniform(0.0, 1.0));
      shifted[i] = src[i] + 7.25f;
    }
    const auto a = resize_slice(src.data(), 9, 6, 5, 14);
    const auto b = resize_slice(shifted.data(), 9, 6, 5, 14);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs((a[i] + 7.25f) - b[i]) < 1e-5f);
  }

  TEST_CASE("mask checkerboard 2x2 to 2x3: nearest neighbor, ties go up") {
    const std::vector<std::uint8_t> src = {1, 0, 0, 1};
    const std::vector<std::uint8_t> out =
        resize_mask_slice(src.data(), 2, 2, 2, 3);
    const std::vector<std::uint8_t> want = {1, 0, 0, 0, 1, 1};
    CHECK(out == want);
  }

  TEST_CASE("mask resize keeps values binary and all-true stays all-true") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
      const auto sr = static_cast<std::int64_t>(rng.uniform_int(2, 10));
      const auto sc = static_cast<std::int64_t>(rng.uniform_int(2, 10));
      const auto dr = static_cast<std::int64_t>(rng.uniform_int(1, 25));
      const auto dc = static_cast<std::int64_t>(rng.uniform_int(1, 25));
      std::vector<std::uint8_t> src(static_cast<std::size_t>(sr * sc));
      for (auto& v : src) v = rng.uniform() < 0.5 ? 1 : 0;
      for (const auto v : resize_mask_slice(src.data(), sr, sc, dr, dc))
        CHECK((v == 0 || v == 1));

      const std::vector<std::uint8_t> ones(static_cast<std::size_t>(sr * sc),
                                           1);
      for (const auto v : resize_mask_slice(ones.data(), sr, sc, dr, dc))
        CHECK(v == 1);
    }
  }

  TEST_CASE("same-shape mask resize is the identity") {
    Rng rng(43);
    std::vector<std::uint8_t> src(6 * 8);
    for (auto& v : src) v = rng.uniform() < 0.5 ? 1 : 0;
    CHECK(resize_mask_slice(src.data(), 6, 8, 6, 8) == src);
  }

  TEST_CASE("degenerate shapes are rejected") {
    const std::vector<float> src(4, 0.f);
    CHECK_THROWS_AS(resize_slice(src.data(), 2, 2, 0, 3), ConfigError);
    CHECK_THROWS_AS(resize_slice(src.data(), 1, 4, 2, 2), ShapeError);
    const std::vector<std::uint8_t> msrc(4, 0);
    CHECK_THROWS_AS(resize_mask_slice(msrc.data(), 2, 2, 3, 0), ConfigError);
    CHECK_THROWS_AS(resize_mask_slice(msrc.data(), 4, 1, 2, 2), ShapeError);
  }
}

TEST_SUITE("normalize") {
  TEST_CASE("window endpoints and midpoint land on 0, 1, 0.5") {
    Volume vol(5, 1, 1);
    vol.dtype = VoxelType::int16;
    vol.data = {-1024.f, 400.f, -312.f, 1000.f, -2000.f};
    const Volume out = normalize_hu(vol, -1024.0, 400.0);
    CHECK(out.dtype == VoxelType::float32);
    CHECK(out.data[0] == 0.0f);
    CHECK(out.data[1] == 1.0f);
    CHECK(out.data[2] == 0.5f);  // (-312 + 1024) / 1424
    CHECK(out.data[3] == 1.0f);  // clipped above
    CHECK(out.data[4] == 0.0f);  // clipped below
    CHECK(vol.data[0] == -1024.f);  // input untouched
  }

  TEST_CASE("every output lies in [0, 1]") {
    Volume vol(8, 8, 2);
    Rng rng(17);
    for (float& v : vol.data)
      v = static_cast<float>(rng.uniform(-3000.0, 4000.0));
    for (const float v : normalize_hu(vol, -1024.0, 400.0).data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("inverted window is rejected") {
    Volume vol(2, 2, 1);
    CHECK_THROWS_AS(normalize_hu(vol, 400.0, -1024.0), ConfigError);
  }
}

namespace {

// Air-filled chest stand-in: a soft-tissue slab holding two low-HU cavities.
struct Scene {
  Volume vol;
  BinaryMask mask;
};

Scene make_scene() {
  Scene s{Volume(40, 36, 6, -1000.0f), BinaryMask(40, 36, 6)};
  s.vol.spacing = {0.7, 0.8, 5.0};
  s.vol.origin = {-100.0, -120.5, 40.0};
  s.mask.spacing = s.vol.spacing;
  s.mask.origin = s.vol.origin;
  for (std::int64_t z = 0; z < 6; ++z)
    for (std::int64_t y = 5; y < 31; ++y)
      for (std::int64_t x = 6; x < 34; ++x) s.vol.at(x, y, z) = 40.0f;
  const auto carve = [&](std::int64_t x0, std::int64_t x1) {
    for (std::int64_t z = 1; z < 5; ++z)
      for (std::int64_t y = 10; y < 26; ++y)
        for (std::int64_t x = x0; x < x1; ++x) {
          s.vol.at(x, y, z) = -850.0f;
          s.mask.at(x, y, z) = 1;
        }
  };
  carve(10, 18);
  carve(22, 30);
  return s;
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("with reference mask: crop follows the mask, grid hits target") {
    const Scene s = make_scene();
    PreprocSpec spec;  // defaults: 296x216, margin 5
    const PreprocResult res = preprocess_case(s.vol, &s.mask, spec);

    // mask bbox (10,10,1)-(30,26,5) plus margin 5, clipped to the grid
    CHECK(res.crop.box.lo == std::array<std::int64_t, 3>{5, 5, 0});
    CHECK(res.crop.box.hi == std::array<std::int64_t, 3>{35, 31, 6});
    CHECK(res.crop.orig_shape == s.vol.shape);
    CHECK(res.crop.target_rows == 296);
    CHECK(res.crop.target_cols == 216);

    CHECK(res.image.shape == std::array<std::int64_t, 3>{216, 296, 6});
    CHECK(res.hu.shape == res.image.shape);
    REQUIRE(res.mask.has_value());
    CHECK(res.mask->shape == res.image.shape);
    CHECK(res.mask->count() > 0);

    for (const float v : res.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    // resized HU values are convex combinations of the originals
    for (const float v : res.hu.data) {
      CHECK(v >= -1000.0f - 1e-3f);
      CHECK(v <= 40.0f + 1e-3f);
    }

    // voxel sizes shrink by the crop-to-target ratio
    CHECK(res.hu.spacing[0] == doctest::Approx(0.7 * 30.0 / 216.0));
    CHECK(res.hu.spacing[1] == doctest::Approx(0.8 * 26.0 / 296.0));
    CHECK(res.hu.spacing[2] == 5.0);
    CHECK(res.image.spacing == res.hu.spacing);

    // origin sits at the center of the first resized pixel
    const double sx0 = 0.5 * 30.0 / 216.0 - 0.5;
    const double sy0 = 0.5 * 26.0 / 296.0 - 0.5;
    CHECK(res.hu.origin[0] == doctest::Approx(-100.0 + 0.7 * (5.0 + sx0)));
    CHECK(res.hu.origin[1] == doctest::Approx(-120.5 + 0.8 * (5.0 + sy0)));
    CHECK(res.hu.origin[2] == 40.0);
  }

  TEST_CASE("without a mask the crop comes from the body box") {
    const Scene s = make_scene();
    PreprocSpec spec;
    const PreprocResult res = preprocess_case(s.vol, nullptr, spec);
    CHECK(!res.mask.has_value());
    // body is the soft-tissue slab (6,5,0)-(34,31,6) plus margin 5
    CHECK(res.crop.box.lo == std::array<std::int64_t, 3>{1, 0, 0});
    CHECK(res.crop.box.hi == std::array<std::int64_t, 3>{39, 36, 6});
    CHECK(res.image.shape == std::array<std::int64_t, 3>{216, 296, 6});
  }

  TEST_CASE("target shape is reached from a differently sized input") {
    Volume vol(30, 30, 3, -1000.0f);
    for (std::int64_t z = 0; z < 3; ++z)
      for (std::int64_t y = 8; y < 22; ++y)
        for (std::int64_t x = 8; x < 22; ++x) vol.at(x, y, z) = 30.0f;
    PreprocSpec spec;
    const PreprocResult res = preprocess_case(vol, nullptr, spec);
    CHECK(res.image.shape == std::array<std::int64_t, 3>{216, 296, 3});
  }

  TEST_CASE("prediction maps back onto the original grid") {
    const Scene s = make_scene();
    PreprocSpec spec;
    const PreprocResult res = preprocess_case(s.vol, &s.mask, spec);
    REQUIRE(res.mask.has_value());

    const BinaryMask back = mask_to_original(*res.mask, res.crop);
    CHECK(back.shape == s.mask.shape);
    CHECK(back.spacing == s.mask.spacing);

    // nothing may appear outside the crop box
    for (std::int64_t z = 0; z < back.nz(); ++z)
      for (std::int64_t y = 0; y < back.ny(); ++y)
        for (std::int64_t x = 0; x < back.nx(); ++x) {
          const bool inside = x >= res.crop.box.lo[0] &&
                              x < res.crop.box.hi[0] &&
                              y >= res.crop.box.lo[1] &&
                              y < res.crop.box.hi[1] &&
                              z >= res.crop.box.lo[2] && z < res.crop.box.hi[2];
          if (!inside) CHECK(back.at(x, y, z) == 0);
        }

    // upsample + map-back is near-lossless on a blocky mask
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < back.data.size(); ++i) {
      inter += back.data[i] & s.mask.data[i];
      uni += back.data[i] | s.mask.data[i];
    }
    REQUIRE(uni > 0);
    const double jaccard =
        static_cast<double>(inter) / static_cast<double>(uni);
    CHECK(jaccard >= 0.98);

    // deep-interior voxels survive exactly
    CHECK(back.at(14, 18, 3) == 1);
    CHECK(back.at(26, 18, 3) == 1);
    CHECK(back.at(20, 18, 3) == 0);  // the gap between the cavities
    CHECK(back.at(2, 2, 0) == 0);
  }

  TEST_CASE("crop record survives the file round trip unchanged") {
    const Scene s = make_scene();
    PreprocSpec spec;
    const PreprocResult res = preprocess_case(s.vol, &s.mask, spec);
    const std::string path = "test_crop_record.txt";
    write_crop_record(path, res.crop);
    const CropRecord back = read_crop_record(path);
    std::remove(path.c_str());
    CHECK(back == res.crop);
  }

  TEST_CASE("input contract violations are named errors") {
    const Scene s = make_scene();
    PreprocSpec spec;

    BinaryMask wrong(10, 10, 2);
    CHECK_THROWS_AS(preprocess_case(s.vol, &wrong, spec), ShapeError);

    BinaryMask empty(40, 36, 6);
    CHECK_THROWS_AS(preprocess_case(s.vol, &empty, spec), DataError);

    Volume air(16, 16, 3, -1000.0f);
    CHECK_THROWS_AS(preprocess_case(air, nullptr, spec), NoBodyFound);

    // single-voxel crop cannot feed a bilinear resize
    BinaryMask dot(40, 36, 6);
    dot.at(20, 20, 2) = 1;
    PreprocSpec tight = spec;
    tight.crop_margin_vox = 0;
    CHECK_THROWS_AS(preprocess_case(s.vol, &dot, tight), ShapeError);

    // map-back rejects a prediction on the wrong grid
    const PreprocResult res = preprocess_case(s.vol, &s.mask, spec);
    BinaryMask small(10, 10, 2);
    CHECK_THROWS_AS(mask_to_original(small, res.crop), ShapeError);
  }
}
