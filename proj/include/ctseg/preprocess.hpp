#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/volume.hpp"

namespace ctseg {

// Target geometry and intensity window for the preprocessing chain:
// crop to the lung region, per-slice bilinear resize, HU windowing to [0,1].
struct PreprocSpec {
  int target_rows = 296;  // slice rows (y)
  int target_cols = 216;  // slice cols (x)
  double hu_low = -1024.0;
  double hu_high = 400.0;
  int crop_margin_vox = 5;

  void validate() const {
    if (target_rows < 1 || target_cols < 1)
      throw ConfigError("PreprocSpec: target extent must be positive");
    if (!(hu_low < hu_high))
      throw ConfigError("PreprocSpec: HU window low must be below high");
    if (crop_margin_vox < 0)
      throw ConfigError("PreprocSpec: crop margin must be non-negative");
  }
};

// Axis-aligned voxel box, inclusive lo, exclusive hi.
struct BBox {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{0, 0, 0};

  std::int64_t extent(int axis) const {
    return hi[static_cast<std::size_t>(axis)] -
           lo[static_cast<std::size_t>(axis)];
  }
  bool operator==(const BBox&) const = default;
};

// Everything needed to map a mask in preprocessed space back onto the
// original volume grid.
struct CropRecord {
  std::array<std::int64_t, 3> orig_shape{0, 0, 0};
  std::array<double, 3> orig_spacing{1.0, 1.0, 1.0};
  std::array<double, 3> orig_origin{0.0, 0.0, 0.0};
  BBox box;
  int target_rows = 0;
  int target_cols = 0;

  bool operator==(const CropRecord&) const = default;
};

struct PreprocResult {
  Volume image;   // normalized intensities in [0,1], float32
  Volume hu;      // same grid, original HU values (resized, unnormalized)
  std::optional<BinaryMask> mask;
  CropRecord crop;
};

// Body bounding box: threshold at HU > -500 (strict), keep the largest
// 6-connected 3D component, dilate its box by margin voxels, clip to grid.
BBox body_bbox(const Volume& vol, int margin_vox);

// Bilinear resize with half-pixel center alignment and edge clamping.
// src is rows x cols, row-major.
std::vector<float> resize_slice(const float* src, std::int64_t src_rows,
                                std::int64_t src_cols, std::int64_t dst_rows,
                                std::int64_t dst_cols);

// Nearest-neighbor resize under the same coordinate mapping; values {0,1}.
std::vector<std::uint8_t> resize_mask_slice(const std::uint8_t* src,
                                            std::int64_t src_rows,
                                            std::int64_t src_cols,
                                            std::int64_t dst_rows,
                                            std::int64_t dst_cols);

// Clip to [low, high], then map linearly onto [0, 1].
Volume normalize_hu(const Volume& vol, double low, double high);

// Full chain. With a reference mask the crop box comes from the mask's own
// bounding box plus margin (training data); without one it comes from
// body_bbox (inference on unseen volumes).
PreprocResult preprocess_case(const Volume& vol, const BinaryMask* mask,
                              const PreprocSpec& spec);

// Inverse mapping: nearest-neighbor resample of a preprocessed-space mask
// back into the original grid (zero outside the crop box).
BinaryMask mask_to_original(const BinaryMask& pred, const CropRecord& crop);

void write_crop_record(const std::string& path, const CropRecord& crop);
CropRecord read_crop_record(const std::string& path);

}  // namespace ctseg
