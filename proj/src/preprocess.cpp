#include "ctseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ctseg/textio.hpp"

namespace ctseg {

namespace {

constexpr double kBodyThresholdHu = -500.0;

std::int64_t clamp_idx(std::int64_t v, std::int64_t n) {
  return std::max<std::int64_t>(0, std::min(v, n - 1));
}

// Half-pixel center alignment: destination index -> source coordinate.
double src_coord(std::int64_t dst, std::int64_t src_n, std::int64_t dst_n) {
  return (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) /
             static_cast<double>(dst_n) -
         0.5;
}

void check_resize_args(std::int64_t src_rows, std::int64_t src_cols,
                       std::int64_t dst_rows, std::int64_t dst_cols) {
  if (dst_rows < 1 || dst_cols < 1)
    throw ConfigError("resize: target extent must be at least 1");
  if (src_rows < 2 || src_cols < 2)
    throw ShapeError("resize: source slice must be at least 2x2");
}

}  // namespace

BBox body_bbox(const Volume& vol, int margin_vox) {
  const std::int64_t nx = vol.nx(), ny = vol.ny(), nz = vol.nz();
  const std::int64_t n = vol.size();
  std::vector<std::uint8_t> body(static_cast<std::size_t>(n));
  bool any = false;
  for (std::int64_t i = 0; i < n; ++i) {
    body[static_cast<std::size_t>(i)] =
        vol.data[static_cast<std::size_t>(i)] > kBodyThresholdHu ? 1 : 0;
    any |= body[static_cast<std::size_t>(i)] != 0;
  }
  if (!any) throw NoBodyFound("no voxel above -500 HU");

  // Largest 6-connected component by breadth-first flood fill.
  std::vector<std::int32_t> label(static_cast<std::size_t>(n), -1);
  std::vector<std::int64_t> queue;
  std::int32_t best_label = -1;
  std::int64_t best_count = 0;
  std::int32_t next_label = 0;
  for (std::int64_t seed = 0; seed < n; ++seed) {
    if (!body[static_cast<std::size_t>(seed)] ||
        label[static_cast<std::size_t>(seed)] >= 0)
      continue;
    const std::int32_t lab = next_label++;
    std::int64_t count = 0;
    queue.clear();
    queue.push_back(seed);
    label[static_cast<std::size_t>(seed)] = lab;
    while (!queue.empty()) {
      const std::int64_t cur = queue.back();
      queue.pop_back();
      ++count;
      const std::int64_t x = cur % nx;
      const std::int64_t y = (cur / nx) % ny;
      const std::int64_t z = cur / (nx * ny);
      const std::int64_t nbr[6] = {x > 0 ? cur - 1 : -1,
                                   x + 1 < nx ? cur + 1 : -1,
                                   y > 0 ? cur - nx : -1,
                                   y + 1 < ny ? cur + nx : -1,
                                   z > 0 ? cur - nx * ny : -1,
                                   z + 1 < nz ? cur + nx * ny : -1};
      for (const std::int64_t nb : nbr) {
        if (nb < 0 || !body[static_cast<std::size_t>(nb)] ||
            label[static_cast<std::size_t>(nb)] >= 0)
          continue;
        label[static_cast<std::size_t>(nb)] = lab;
        queue.push_back(nb);
      }
    }
    if (count > best_count) {
      best_count = count;
      best_label = lab;
    }
  }

  BBox box;
  box.lo = {nx, ny, nz};
  box.hi = {0, 0, 0};
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        if (label[static_cast<std::size_t>(vol.index(x, y, z))] != best_label)
          continue;
        box.lo[0] = std::min(box.lo[0], x);
        box.lo[1] = std::min(box.lo[1], y);
        box.lo[2] = std::min(box.lo[2], z);
        box.hi[0] = std::max(box.hi[0], x + 1);
        box.hi[1] = std::max(box.hi[1], y + 1);
        box.hi[2] = std::max(box.hi[2], z + 1);
      }
  for (int a = 0; a < 3; ++a) {
    box.lo[static_cast<std::size_t>(a)] = std::max<std::int64_t>(
        0, box.lo[static_cast<std::size_t>(a)] - margin_vox);
    box.hi[static_cast<std::size_t>(a)] =
        std::min(vol.shape[static_cast<std::size_t>(a)],
                 box.hi[static_cast<std::size_t>(a)] + margin_vox);
  }
  return box;
}

std::vector<float> resize_slice(const float* src, std::int64_t src_rows,
                                std::int64_t src_cols, std::int64_t dst_rows,
                                std::int64_t dst_cols) {
  check_resize_args(src_rows, src_cols, dst_rows, dst_cols);
  std::vector<float> out(static_cast<std::size_t>(dst_rows * dst_cols));
  for (std::int64_t r = 0; r < dst_rows; ++r) {
    const double sy = src_coord(r, src_rows, dst_rows);
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
    const double fy = sy - static_cast<double>(y0);
    const std::int64_t ya = clamp_idx(y0, src_rows);
    const std::int64_t yb = clamp_idx(y0 + 1, src_rows);
    for (std::int64_t c = 0; c < dst_cols; ++c) {
      const double sx = src_coord(c, src_cols, dst_cols);
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
      const double fx = sx - static_cast<double>(x0);
      const std::int64_t xa = clamp_idx(x0, src_cols);
      const std::int64_t xb = clamp_idx(x0 + 1, src_cols);
      const double v00 = src[ya * src_cols + xa];
      const double v01 = src[ya * src_cols + xb];
      const double v10 = src[yb * src_cols + xa];
      const double v11 = src[yb * src_cols + xb];
      const double top = v00 + (v01 - v00) * fx;
      const double bot = v10 + (v11 - v10) * fx;
      out[static_cast<std::size_t>(r * dst_cols + c)] =
          static_cast<float>(top + (bot - top) * fy);
    }
  }
  return out;
}

std::vector<std::uint8_t> resize_mask_slice(const std::uint8_t* src,
                                            std::int64_t src_rows,
                                            std::int64_t src_cols,
                                            std::int64_t dst_rows,
                                            std::int64_t dst_cols) {
  check_resize_args(src_rows, src_cols, dst_rows, dst_cols);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(dst_rows * dst_cols));
  for (std::int64_t r = 0; r < dst_rows; ++r) {
    const std::int64_t y = clamp_idx(
        static_cast<std::int64_t>(
            std::floor(src_coord(r, src_rows, dst_rows) + 0.5)),
        src_rows);
    for (std::int64_t c = 0; c < dst_cols; ++c) {
      const std::int64_t x = clamp_idx(
          static_cast<std::int64_t>(
              std::floor(src_coord(c, src_cols, dst_cols) + 0.5)),
          src_cols);
      out[static_cast<std::size_t>(r * dst_cols + c)] =
          src[y * src_cols + x] ? 1 : 0;
    }
  }
  return out;
}

Volume normalize_hu(const Volume& vol, double low, double high) {
  if (!(low < high)) throw ConfigError("normalize_hu: window low >= high");
  Volume out = vol;
  out.dtype = VoxelType::float32;
  const double scale = 1.0 / (high - low);
  for (float& v : out.data) {
    const double c = std::clamp(static_cast<double>(v), low, high);
    v = static_cast<float>((c - low) * scale);
  }
  return out;
}

namespace {

BBox mask_bbox(const BinaryMask& mask, int margin_vox) {
  BBox box;
  box.lo = {mask.nx(), mask.ny(), mask.nz()};
  box.hi = {0, 0, 0};
  bool any = false;
  for (std::int64_t z = 0; z < mask.nz(); ++z)
    for (std::int64_t y = 0; y < mask.ny(); ++y)
      for (std::int64_t x = 0; x < mask.nx(); ++x) {
        if (!mask.at(x, y, z)) continue;
        any = true;
        box.lo[0] = std::min(box.lo[0], x);
        box.lo[1] = std::min(box.lo[1], y);
        box.lo[2] = std::min(box.lo[2], z);
        box.hi[0] = std::max(box.hi[0], x + 1);
        box.hi[1] = std::max(box.hi[1], y + 1);
        box.hi[2] = std::max(box.hi[2], z + 1);
      }
  if (!any) throw DataError("reference mask is empty");
  for (int a = 0; a < 3; ++a) {
    box.lo[static_cast<std::size_t>(a)] = std::max<std::int64_t>(
        0, box.lo[static_cast<std::size_t>(a)] - margin_vox);
    box.hi[static_cast<std::size_t>(a)] =
        std::min(mask.shape[static_cast<std::size_t>(a)],
                 box.hi[static_cast<std::size_t>(a)] + margin_vox);
  }
  return box;
}

}  // namespace

PreprocResult preprocess_case(const Volume& vol, const BinaryMask* mask,
                              const PreprocSpec& spec) {
  spec.validate();
  if (mask && mask->shape != vol.shape)
    throw ShapeError("preprocess_case: mask grid differs from volume grid");
  const BBox box = mask ? mask_bbox(*mask, spec.crop_margin_vox)
                        : body_bbox(vol, spec.crop_margin_vox);
  const std::int64_t bw = box.extent(0);  // cols (x)
  const std::int64_t bh = box.extent(1);  // rows (y)
  const std::int64_t bz = box.extent(2);
  const std::int64_t rows = spec.target_rows, cols = spec.target_cols;

  PreprocResult out;
  out.crop.orig_shape = vol.shape;
  out.crop.orig_spacing = vol.spacing;
  out.crop.orig_origin = vol.origin;
  out.crop.box = box;
  out.crop.target_rows = spec.target_rows;
  out.crop.target_cols = spec.target_cols;

  out.hu = Volume(cols, rows, bz);
  out.hu.spacing = {vol.spacing[0] * static_cast<double>(bw) /
                        static_cast<double>(cols),
                    vol.spacing[1] * static_cast<double>(bh) /
                        static_cast<double>(rows),
                    vol.spacing[2]};
  // Origin shifts to the center of the first resized pixel.
  out.hu.origin = {
      vol.origin[0] +
          vol.spacing[0] * (static_cast<double>(box.lo[0]) +
                            src_coord(0, bw, cols)),
      vol.origin[1] +
          vol.spacing[1] * (static_cast<double>(box.lo[1]) +
                            src_coord(0, bh, rows)),
      vol.origin[2] + vol.spacing[2] * static_cast<double>(box.lo[2])};

  std::vector<float> crop_slice(static_cast<std::size_t>(bh * bw));
  for (std::int64_t k = 0; k < bz; ++k) {
    const std::int64_t z = box.lo[2] + k;
    for (std::int64_t y = 0; y < bh; ++y)
      for (std::int64_t x = 0; x < bw; ++x)
        crop_slice[static_cast<std::size_t>(y * bw + x)] =
            vol.at(box.lo[0] + x, box.lo[1] + y, z);
    const std::vector<float> rs =
        resize_slice(crop_slice.data(), bh, bw, rows, cols);
    // slice pixel (r, c) lands at volume voxel (x = c, y = r)
    std::copy(rs.begin(), rs.end(), out.hu.slice(k));
  }

  out.image = normalize_hu(out.hu, spec.hu_low, spec.hu_high);

  if (mask) {
    BinaryMask m(cols, rows, bz);
    m.spacing = out.hu.spacing;
    m.origin = out.hu.origin;
    std::vector<std::uint8_t> mslice(static_cast<std::size_t>(bh * bw));
    for (std::int64_t k = 0; k < bz; ++k) {
      const std::int64_t z = box.lo[2] + k;
      for (std::int64_t y = 0; y < bh; ++y)
        for (std::int64_t x = 0; x < bw; ++x)
          mslice[static_cast<std::size_t>(y * bw + x)] =
              mask->at(box.lo[0] + x, box.lo[1] + y, z);
      const std::vector<std::uint8_t> rm =
          resize_mask_slice(mslice.data(), bh, bw, rows, cols);
      std::copy(rm.begin(), rm.end(), m.slice(k));
    }
    out.mask = std::move(m);
  }
  return out;
}

BinaryMask mask_to_original(const BinaryMask& pred, const CropRecord& crop) {
  const std::int64_t bw = crop.box.extent(0);
  const std::int64_t bh = crop.box.extent(1);
  const std::int64_t bz = crop.box.extent(2);
  if (pred.nx() != crop.target_cols || pred.ny() != crop.target_rows ||
      pred.nz() != bz)
    throw ShapeError("mask_to_original: prediction grid does not match crop");
  BinaryMask out(crop.orig_shape[0], crop.orig_shape[1], crop.orig_shape[2]);
  out.spacing = crop.orig_spacing;
  out.origin = crop.orig_origin;
  for (std::int64_t k = 0; k < bz; ++k) {
    const std::int64_t z = crop.box.lo[2] + k;
    for (std::int64_t y = 0; y < bh; ++y) {
      const std::int64_t r = clamp_idx(
          static_cast<std::int64_t>(std::floor(
              src_coord(y, crop.target_rows, bh) + 0.5)),
          crop.target_rows);
      for (std::int64_t x = 0; x < bw; ++x) {
        const std::int64_t c = clamp_idx(
            static_cast<std::int64_t>(std::floor(
                src_coord(x, crop.target_cols, bw) + 0.5)),
            crop.target_cols);
        out.at(crop.box.lo[0] + x, crop.box.lo[1] + y, z) =
            pred.at(c, r, k);
      }
    }
  }
  return out;
}

void write_crop_record(const std::string& path, const CropRecord& crop) {
  using textio::fmt_full;
  std::vector<std::pair<std::string, std::string>> kv;
  const char* ax[3] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a)
    kv.emplace_back(std::string("orig_n") + ax[a],
                    std::to_string(crop.orig_shape[static_cast<std::size_t>(a)]));
  for (int a = 0; a < 3; ++a)
    kv.emplace_back(std::string("orig_spacing_") + ax[a],
                    fmt_full(crop.orig_spacing[static_cast<std::size_t>(a)]));
  for (int a = 0; a < 3; ++a)
    kv.emplace_back(std::string("orig_origin_") + ax[a],
                    fmt_full(crop.orig_origin[static_cast<std::size_t>(a)]));
  for (int a = 0; a < 3; ++a)
    kv.emplace_back(std::string("crop_lo_") + ax[a],
                    std::to_string(crop.box.lo[static_cast<std::size_t>(a)]));
  for (int a = 0; a < 3; ++a)
    kv.emplace_back(std::string("crop_hi_") + ax[a],
                    std::to_string(crop.box.hi[static_cast<std::size_t>(a)]));
  kv.emplace_back("target_rows", std::to_string(crop.target_rows));
  kv.emplace_back("target_cols", std::to_string(crop.target_cols));
  textio::write_kv(path, kv);
}

CropRecord read_crop_record(const std::string& path) {
  const auto kv = textio::read_kv(path);
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end())
      throw DataError(path + ": missing crop record key '" + key + "'");
    return it->second;
  };
  CropRecord crop;
  const char* ax[3] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a) {
    crop.orig_shape[static_cast<std::size_t>(a)] =
        textio::parse_int(get(std::string("orig_n") + ax[a]));
    crop.orig_spacing[static_cast<std::size_t>(a)] =
        textio::parse_double(get(std::string("orig_spacing_") + ax[a]));
    crop.orig_origin[static_cast<std::size_t>(a)] =
        textio::parse_double(get(std::string("orig_origin_") + ax[a]));
    crop.box.lo[static_cast<std::size_t>(a)] =
        textio::parse_int(get(std::string("crop_lo_") + ax[a]));
    crop.box.hi[static_cast<std::size_t>(a)] =
        textio::parse_int(get(std::string("crop_hi_") + ax[a]));
  }
  crop.target_rows = static_cast<int>(textio::parse_int(get("target_rows")));
  crop.target_cols = static_cast<int>(textio::parse_int(get("target_cols")));
  return crop;
}

}  // namespace ctseg
