#pragma once

#include <string>

#include "ctseg/volume.hpp"

namespace ctseg {

// Single-file uncompressed NIfTI-1 (.nii), little-endian, datatype int16 or
// float32, 3D only, axis-aligned geometry (diagonal positive sform, no
// shear). Round-trips are lossless: voxel data bit-exact, spacing within
// float precision.
Volume read_volume(const std::string& path);
void write_volume(const Volume& vol, const std::string& path);

// Masks are volumes whose voxels are exactly {0, 1}; written as int16.
BinaryMask read_mask(const std::string& path);
void write_mask(const BinaryMask& mask, const std::string& path);

}  // namespace ctseg
