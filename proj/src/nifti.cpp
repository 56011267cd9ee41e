#include "ctseg/nifti.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "ctseg/binio.hpp"

namespace ctseg {

namespace {

// NIfTI-1 header, standard 348-byte layout.
struct Nifti1Header {
  std::int32_t sizeof_hdr;   //   0
  char data_type[10];        //   4
  char db_name[18];          //  14
  std::int32_t extents;      //  32
  std::int16_t session_error;  // 36
  char regular;              //  38
  char dim_info;             //  39
  std::int16_t dim[8];       //  40
  float intent_p1;           //  56
  float intent_p2;           //  60
  float intent_p3;           //  64
  std::int16_t intent_code;  //  68
  std::int16_t datatype;     //  70
  std::int16_t bitpix;       //  72
  std::int16_t slice_start;  //  74
  float pixdim[8];           //  76
  float vox_offset;          // 108
  float scl_slope;           // 112
  float scl_inter;           // 116
  std::int16_t slice_end;    // 120
  char slice_code;           // 122
  char xyzt_units;           // 123
  float cal_max;             // 124
  float cal_min;             // 128
  float slice_duration;      // 132
  float toffset;             // 136
  std::int32_t glmax;        // 140
  std::int32_t glmin;        // 144
  char descrip[80];          // 148
  char aux_file[24];         // 228
  std::int16_t qform_code;   // 252
  std::int16_t sform_code;   // 254
  float quatern_b;           // 256
  float quatern_c;           // 260
  float quatern_d;           // 264
  float qoffset_x;           // 268
  float qoffset_y;           // 272
  float qoffset_z;           // 276
  float srow_x[4];           // 280
  float srow_y[4];           // 296
  float srow_z[4];           // 312
  char intent_name[16];      // 328
  char magic[4];             // 344
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348");

constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

struct RawVolume {
  std::array<std::int64_t, 3> shape;
  std::array<double, 3> spacing;
  std::array<double, 3> origin;
  VoxelType dtype;
  std::vector<float> data;
};

RawVolume read_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  Nifti1Header h{};
  binio::read_raw(is, &h, sizeof(h));
  if (h.sizeof_hdr != 348) {
    // 348 byte-swapped: a big-endian file, which this subset does not cover.
    if (h.sizeof_hdr == 0x5C010000)
      throw UnsupportedError(path + ": big-endian NIfTI not supported");
    throw FormatError(path + ": not a NIfTI-1 file (sizeof_hdr != 348)");
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0)
    throw FormatError(path + ": bad NIfTI magic (expected single-file n+1)");
  if (h.dim[0] != 3)
    throw UnsupportedError(path + ": only 3D volumes supported (dim[0] = " +
                           std::to_string(h.dim[0]) + ")");
  if (h.datatype != kDtInt16 && h.datatype != kDtFloat32)
    throw UnsupportedError(path + ": unsupported datatype " +
                           std::to_string(h.datatype) +
                           " (int16 and float32 only)");
  if (!(h.scl_slope == 0.f || h.scl_slope == 1.f) || h.scl_inter != 0.f)
    throw UnsupportedError(path + ": intensity rescaling not supported");
  RawVolume rv;
  for (int a = 0; a < 3; ++a) {
    const std::int16_t d = h.dim[a + 1];
    if (d <= 0) throw FormatError(path + ": non-positive dimension");
    rv.shape[static_cast<std::size_t>(a)] = d;
    const float p = h.pixdim[a + 1];
    if (!(p > 0.f)) throw FormatError(path + ": non-positive pixdim");
    rv.spacing[static_cast<std::size_t>(a)] = p;
  }
  rv.origin = {0.0, 0.0, 0.0};
  if (h.sform_code > 0) {
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        const float v = rows[r][c];
        if (r == c) {
          if (!(v > 0.f))
            throw UnsupportedError(path +
                                   ": sform must be diagonal positive "
                                   "(axis flips/rotations unsupported)");
          rv.spacing[static_cast<std::size_t>(r)] = v;
        } else if (v != 0.f) {
          throw UnsupportedError(path + ": sheared sform not supported");
        }
      }
    rv.origin = {rows[0][3], rows[1][3], rows[2][3]};
  }
  if (h.vox_offset < 348.f)
    throw FormatError(path + ": vox_offset below header size");
  is.seekg(static_cast<std::streamoff>(h.vox_offset), std::ios::beg);
  if (!is) throw FormatError(path + ": cannot seek to voxel data");
  const std::int64_t n = rv.shape[0] * rv.shape[1] * rv.shape[2];
  rv.data.resize(static_cast<std::size_t>(n));
  if (h.datatype == kDtInt16) {
    rv.dtype = VoxelType::int16;
    std::vector<std::int16_t> tmp(static_cast<std::size_t>(n));
    binio::read_raw(is, tmp.data(), tmp.size() * sizeof(std::int16_t));
    for (std::int64_t i = 0; i < n; ++i)
      rv.data[static_cast<std::size_t>(i)] =
          static_cast<float>(tmp[static_cast<std::size_t>(i)]);
  } else {
    rv.dtype = VoxelType::float32;
    binio::read_raw(is, rv.data.data(), rv.data.size() * sizeof(float));
  }
  return rv;
}

void write_raw(const std::string& path,
               const std::array<std::int64_t, 3>& shape,
               const std::array<double, 3>& spacing,
               const std::array<double, 3>& origin, VoxelType dtype,
               const std::vector<float>& data) {
  for (const std::int64_t d : shape)
    if (d <= 0 || d > 32767)
      throw ShapeError(path + ": dimensions must fit NIfTI-1 (1..32767)");
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int a = 0; a < 3; ++a) {
    h.dim[a + 1] = static_cast<std::int16_t>(shape[static_cast<std::size_t>(a)]);
    h.pixdim[a + 1] = static_cast<float>(spacing[static_cast<std::size_t>(a)]);
  }
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  h.pixdim[0] = 1.f;
  h.datatype = dtype == VoxelType::int16 ? kDtInt16 : kDtFloat32;
  h.bitpix = dtype == VoxelType::int16 ? 16 : 32;
  h.vox_offset = 352.f;
  h.scl_slope = 1.f;
  h.scl_inter = 0.f;
  h.xyzt_units = 0x02;  // millimetres
  h.qform_code = 0;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing[0]);
  h.srow_y[1] = static_cast<float>(spacing[1]);
  h.srow_z[2] = static_cast<float>(spacing[2]);
  h.srow_x[3] = static_cast<float>(origin[0]);
  h.srow_y[3] = static_cast<float>(origin[1]);
  h.srow_z[3] = static_cast<float>(origin[2]);
  std::memcpy(h.magic, "n+1", 4);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  binio::write_raw(os, &h, sizeof(h));
  const char ext[4] = {0, 0, 0, 0};  // no header extensions
  binio::write_raw(os, ext, 4);
  if (dtype == VoxelType::int16) {
    std::vector<std::int16_t> tmp(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double r = std::nearbyint(static_cast<double>(data[i]));
      if (r < -32768.0 || r > 32767.0)
        throw DataError(path + ": value out of int16 range");
      tmp[i] = static_cast<std::int16_t>(r);
    }
    binio::write_raw(os, tmp.data(), tmp.size() * sizeof(std::int16_t));
  } else {
    binio::write_raw(os, data.data(), data.size() * sizeof(float));
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace

Volume read_volume(const std::string& path) {
  RawVolume rv = read_raw(path);
  Volume v;
  v.shape = rv.shape;
  v.spacing = rv.spacing;
  v.origin = rv.origin;
  v.dtype = rv.dtype;
  v.data = std::move(rv.data);
  return v;
}

void write_volume(const Volume& vol, const std::string& path) {
  write_raw(path, vol.shape, vol.spacing, vol.origin, vol.dtype, vol.data);
}

BinaryMask read_mask(const std::string& path) {
  RawVolume rv = read_raw(path);
  BinaryMask m;
  m.shape = rv.shape;
  m.spacing = rv.spacing;
  m.origin = rv.origin;
  m.data.resize(rv.data.size());
  for (std::size_t i = 0; i < rv.data.size(); ++i) {
    const float v = rv.data[i];
    if (v != 0.f && v != 1.f)
      throw DataError(path + ": mask voxels must be exactly 0 or 1");
    m.data[i] = v == 1.f ? 1 : 0;
  }
  return m;
}

void write_mask(const BinaryMask& mask, const std::string& path) {
  std::vector<float> tmp(mask.data.size());
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    tmp[i] = static_cast<float>(mask.data[i]);
  write_raw(path, mask.shape, mask.spacing, mask.origin, VoxelType::int16,
            tmp);
}

}  // namespace ctseg
