// Python face of the engine. Arrays cross the boundary as numpy: volumes
// and masks are C-contiguous [z, y, x], slice batches are [n, c, rows, cols].
// Grid sizes and spacings in argument lists are (x, y, z), matching the
// key=value config files.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/cli.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/net.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/tuning.hpp"
#include "ctseg/volume.hpp"

namespace py = pybind11;
using namespace ctseg;

namespace {

using ArrF = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ArrU8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::array<std::int64_t, 3> shape_zyx(const py::buffer_info& info,
                                      const char* what) {
  if (info.ndim != 3)
    throw py::value_error(std::string(what) + ": expected a 3-d [z, y, x] array");
  return {info.shape[0], info.shape[1], info.shape[2]};
}

Volume to_volume(const ArrF& a, const std::array<double, 3>& spacing,
                 const char* what) {
  const py::buffer_info info = a.request();
  const auto [nz, ny, nx] = shape_zyx(info, what);
  Volume v(nx, ny, nz);
  v.spacing = spacing;
  std::copy_n(static_cast<const float*>(info.ptr), v.size(), v.data.begin());
  return v;
}

BinaryMask to_mask(const ArrU8& a, const std::array<double, 3>& spacing,
                   const char* what) {
  const py::buffer_info info = a.request();
  const auto [nz, ny, nx] = shape_zyx(info, what);
  BinaryMask m(nx, ny, nz);
  m.spacing = spacing;
  const auto* p = static_cast<const std::uint8_t*>(info.ptr);
  for (std::int64_t i = 0; i < m.size(); ++i) m.data[i] = p[i] ? 1 : 0;
  return m;
}

ArrF from_volume(const Volume& v) {
  ArrF a({v.nz(), v.ny(), v.nx()});
  std::copy_n(v.data.data(), v.size(), a.mutable_data());
  return a;
}

ArrU8 from_mask(const BinaryMask& m) {
  ArrU8 a({m.nz(), m.ny(), m.nx()});
  std::copy_n(m.data.data(), m.size(), a.mutable_data());
  return a;
}

Tensor4<float> to_tensor(const ArrF& a, const char* what) {
  const py::buffer_info info = a.request();
  if (info.ndim != 4)
    throw py::value_error(std::string(what) +
                          ": expected a 4-d [n, c, rows, cols] array");
  Tensor4<float> t(info.shape[0], info.shape[1], info.shape[2], info.shape[3]);
  std::copy_n(static_cast<const float*>(info.ptr), (std::int64_t)t.data.size(),
              t.data.begin());
  return t;
}

template <class T>
py::array_t<T> from_tensor(const Tensor4<T>& t) {
  py::array_t<T> a({t.n(), t.c(), t.h(), t.w()});
  std::copy_n(t.data.data(), (std::int64_t)t.data.size(), a.mutable_data());
  return a;
}

ConvAlgo parse_algo(const std::string& s) {
  if (s == "auto" ) return ConvAlgo::auto_select;
  if (s == "direct") return ConvAlgo::direct;
  if (s == "gemm") return ConvAlgo::gemm;
  throw py::value_error("conv algo must be auto, direct, or gemm");
}

std::string algo_name(ConvAlgo a) {
  switch (a) {
    case ConvAlgo::direct: return "direct";
    case ConvAlgo::gemm: return "gemm";
    default: return "auto";
  }
}

py::dict crop_to_dict(const CropRecord& c) {
  py::dict d;
  d["orig_shape_xyz"] = c.orig_shape;
  d["orig_spacing_xyz"] = c.orig_spacing;
  d["orig_origin_xyz"] = c.orig_origin;
  d["box_lo_xyz"] = c.box.lo;
  d["box_hi_xyz"] = c.box.hi;
  d["target_rows"] = c.target_rows;
  d["target_cols"] = c.target_cols;
  return d;
}

CropRecord crop_from_dict(const py::dict& d) {
  CropRecord c;
  c.orig_shape = d["orig_shape_xyz"].cast<std::array<std::int64_t, 3>>();
  c.orig_spacing = d["orig_spacing_xyz"].cast<std::array<double, 3>>();
  c.orig_origin = d["orig_origin_xyz"].cast<std::array<double, 3>>();
  c.box.lo = d["box_lo_xyz"].cast<std::array<std::int64_t, 3>>();
  c.box.hi = d["box_hi_xyz"].cast<std::array<std::int64_t, 3>>();
  c.target_rows = d["target_rows"].cast<int>();
  c.target_cols = d["target_cols"].cast<int>();
  return c;
}

py::object opt(const std::optional<double>& v) {
  if (!v) return py::none();
  return py::float_(*v);
}

py::dict metrics_to_dict(const CaseMetrics& c) {
  py::dict d;
  d["case_id"] = c.case_id;
  d["cohort"] = c.cohort;
  d["dsc"] = opt(c.dsc);
  d["jc"] = opt(c.jc);
  d["me"] = opt(c.me);
  d["mae"] = opt(c.mae);
  d["fpr"] = opt(c.fpr);
  d["fnr"] = opt(c.fnr);
  d["rel_mean_hu_pct"] = opt(c.rel_mean_hu_pct);
  d["abs_rel_mean_hu_pct"] = opt(c.abs_rel_mean_hu_pct);
  d["rel_vol_pct"] = opt(c.rel_vol_pct);
  d["abs_rel_vol_pct"] = opt(c.abs_rel_vol_pct);
  d["flagged"] = c.flagged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ctseg, m) {
  m.doc() = "volumetric lung segmentation engine";
  tune_allocator();

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli_main(args);
      },
      py::arg("args"),
      "Run a toolkit command (same subcommands and flags as the `ctseg`\n"
      "executable, without the program name). Returns the exit code:\n"
      "0 success, 1 usage error, 2 data/config/numerics failure.");

  m.def(
      "generate_phantom",
      [](const std::string& cohort, std::uint64_t seed,
         const std::array<std::int64_t, 3>& shape,
         const std::array<double, 3>& spacing, double noise_sigma) {
        PhantomSpec spec;
        spec.cohort = parse_cohort(cohort);
        spec.seed = seed;
        spec.shape = shape;
        spec.spacing = spacing;
        spec.noise_sigma = noise_sigma;
        spec.validate();
        PhantomCase pc = generate(spec);
        py::dict d;
        d["volume"] = from_volume(pc.volume);
        d["mask"] = from_mask(pc.mask);
        d["spacing"] = spacing;
        d["cohort"] = cohort_name(pc.cohort);
        d["seed"] = pc.seed;
        return d;
      },
      py::arg("cohort") = "normal", py::arg("seed") = 0,
      py::arg("shape") = std::array<std::int64_t, 3>{128, 128, 24},
      py::arg("spacing") = std::array<double, 3>{1.5, 1.5, 5.0},
      py::arg("noise_sigma") = 15.0,
      "Generate one synthetic chest volume with its reference lung mask.\n"
      "Returns {volume: f32[z,y,x] HU, mask: u8[z,y,x], spacing, cohort,\n"
      "seed}. Deterministic in the seed.");

  m.def(
      "preprocess",
      [](const ArrF& volume, const std::array<double, 3>& spacing,
         py::object mask, int target_rows, int target_cols, double hu_low,
         double hu_high, int crop_margin) {
        PreprocSpec spec;
        spec.target_rows = target_rows;
        spec.target_cols = target_cols;
        spec.hu_low = hu_low;
        spec.hu_high = hu_high;
        spec.crop_margin_vox = crop_margin;
        spec.validate();
        const Volume vol = to_volume(volume, spacing, "preprocess volume");
        std::optional<BinaryMask> ref;
        if (!mask.is_none())
          ref = to_mask(mask.cast<ArrU8>(), spacing, "preprocess mask");
        PreprocResult res =
            preprocess_case(vol, ref ? &*ref : nullptr, spec);
        py::dict d;
        d["image"] = from_volume(res.image);
        d["hu"] = from_volume(res.hu);
        d["mask"] = res.mask ? py::object(from_mask(*res.mask)) : py::none();
        d["crop"] = crop_to_dict(res.crop);
        return d;
      },
      py::arg("volume"), py::arg("spacing"), py::arg("mask") = py::none(),
      py::arg("target_rows") = 296, py::arg("target_cols") = 216,
      py::arg("hu_low") = -1024.0, py::arg("hu_high") = 400.0,
      py::arg("crop_margin") = 5,
      "Crop, resize, and window a HU volume to model-ready slices in [0, 1].\n"
      "With a reference mask the crop box comes from the mask (training);\n"
      "without one it comes from the detected body (inference). Returns\n"
      "{image, hu, mask or None, crop}; pass `crop` to mask_to_original to\n"
      "map predictions back onto the source grid.");

  m.def(
      "mask_to_original",
      [](const ArrU8& pred, const py::dict& crop) {
        const CropRecord rec = crop_from_dict(crop);
        BinaryMask pm = to_mask(pred, {1.0, 1.0, 1.0}, "mask_to_original pred");
        return from_mask(mask_to_original(pm, rec));
      },
      py::arg("pred"), py::arg("crop"),
      "Map a mask predicted on preprocessed slices back onto the original\n"
      "volume grid (zero outside the crop box).");

  m.def(
      "evaluate",
      [](const ArrU8& ref, const ArrU8& pred, const ArrF& hu,
         const std::array<double, 3>& spacing, double hu_low, double hu_high,
         const std::string& case_id, const std::string& cohort) {
        const Volume vol = to_volume(hu, spacing, "evaluate hu");
        const BinaryMask rm = to_mask(ref, spacing, "evaluate ref");
        const BinaryMask pm = to_mask(pred, spacing, "evaluate pred");
        const Volume norm = normalize_hu(vol, hu_low, hu_high);
        BinaryMask domain(vol.nx(), vol.ny(), vol.nz(), 1);
        domain.spacing = spacing;
        return metrics_to_dict(
            evaluate_case(case_id, cohort, rm, pm, vol, norm, domain));
      },
      py::arg("ref"), py::arg("pred"), py::arg("hu"), py::arg("spacing"),
      py::arg("hu_low") = -1024.0, py::arg("hu_high") = 400.0,
      py::arg("case_id") = "case", py::arg("cohort") = "normal",
      "Score one prediction against its reference mask over the full grid.\n"
      "Returns the per-case metric dict; metrics undefined for the case\n"
      "come back as None with flagged=True.");

  m.def(
      "confusion_scores",
      [](std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
        ConfusionCounts c{tp, fp, fn, tn};
        py::dict d;
        d["dsc"] = dsc(c);
        d["jc"] = jc(c);
        return d;
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn") = 0,
      "Overlap scores from voxel confusion counts.");

  py::class_<SegNet<float>>(m, "Net",
                            "Dilated-residual segmentation network over\n"
                            "single-channel slices (float32).")
      .def(py::init([](std::uint64_t seed) {
             NetConfig cfg;
             cfg.seed = seed;
             return SegNet<float>::build(cfg);
           }),
           py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::string& path) { return load_checkpoint<float>(path); },
          py::arg("path"), "Load a checkpoint written by save or the trainer.")
      .def(
          "save",
          [](SegNet<float>& net, const std::string& path) {
            save_checkpoint(path, net);
          },
          py::arg("path"))
      .def_property(
          "algo",
          [](const SegNet<float>& net) { return algo_name(net.algo); },
          [](SegNet<float>& net, const std::string& s) {
            net.algo = parse_algo(s);
          },
          "Convolution algorithm: auto, direct, or gemm.")
      .def(
          "forward",
          [](SegNet<float>& net, const ArrF& x, bool train) {
            Tensor4<float> batch = to_tensor(x, "forward");
            Tensor4<float> probs;
            {
              py::gil_scoped_release release;
              probs = net.forward(batch,
                                  train ? NetMode::train : NetMode::infer);
            }
            return from_tensor(probs);
          },
          py::arg("x"), py::arg("train") = false,
          "Class probabilities [n, 2, rows, cols] for a slice batch\n"
          "[n, 1, rows, cols]. train=True uses batch statistics and updates\n"
          "the running ones.")
      .def(
          "predict",
          [](SegNet<float>& net, const ArrF& x) {
            Tensor4<float> batch = to_tensor(x, "predict");
            Tensor4<std::uint8_t> pm;
            {
              py::gil_scoped_release release;
              pm = predict_mask(net.forward(batch, NetMode::infer));
            }
            return from_tensor(pm);
          },
          py::arg("x"),
          "Binary lung mask [n, 1, rows, cols] (u8) for a slice batch.");
}
