#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ctseg/errors.hpp"

namespace ctseg {

// On-disk voxel types supported by the NIfTI subset.
enum class VoxelType : std::int16_t { int16 = 4, float32 = 16 };

// 3D CT volume in Hounsfield units. Axes are (x, y, z) with x fastest in
// memory and z the axial slice index; an axial slice is therefore an
// ny-row by nx-column matrix.
struct Volume {
  std::array<std::int64_t, 3> shape{0, 0, 0};  // nx, ny, nz
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
  std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm
  VoxelType dtype = VoxelType::float32;  // remembered for lossless round-trip
  std::vector<float> data;

  Volume() = default;
  Volume(std::int64_t nx, std::int64_t ny, std::int64_t nz, float fill = 0.f)
      : shape{nx, ny, nz} {
    if (nx <= 0 || ny <= 0 || nz <= 0)
      throw ShapeError("Volume: dimensions must be positive");
    data.assign(static_cast<std::size_t>(nx * ny * nz), fill);
  }

  std::int64_t nx() const { return shape[0]; }
  std::int64_t ny() const { return shape[1]; }
  std::int64_t nz() const { return shape[2]; }
  std::int64_t size() const { return shape[0] * shape[1] * shape[2]; }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + shape[0] * (y + shape[1] * z);
  }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data[static_cast<std::size_t>(index(x, y, z))];
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data[static_cast<std::size_t>(index(x, y, z))];
  }
  // start of axial slice z (ny rows of nx values)
  float* slice(std::int64_t z) {
    return data.data() + z * shape[0] * shape[1];
  }
  const float* slice(std::int64_t z) const {
    return data.data() + z * shape[0] * shape[1];
  }
};

// Binary label volume on the same grid/geometry layout as Volume.
struct BinaryMask {
  std::array<std::int64_t, 3> shape{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::int64_t nx, std::int64_t ny, std::int64_t nz,
             std::uint8_t fill = 0)
      : shape{nx, ny, nz} {
    if (nx <= 0 || ny <= 0 || nz <= 0)
      throw ShapeError("BinaryMask: dimensions must be positive");
    data.assign(static_cast<std::size_t>(nx * ny * nz), fill);
  }

  std::int64_t nx() const { return shape[0]; }
  std::int64_t ny() const { return shape[1]; }
  std::int64_t nz() const { return shape[2]; }
  std::int64_t size() const { return shape[0] * shape[1] * shape[2]; }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + shape[0] * (y + shape[1] * z);
  }
  std::uint8_t& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data[static_cast<std::size_t>(index(x, y, z))];
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data[static_cast<std::size_t>(index(x, y, z))];
  }
  std::uint8_t* slice(std::int64_t z) {
    return data.data() + z * shape[0] * shape[1];
  }
  const std::uint8_t* slice(std::int64_t z) const {
    return data.data() + z * shape[0] * shape[1];
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const std::uint8_t v : data) n += v;
    return n;
  }
};

}  // namespace ctseg
