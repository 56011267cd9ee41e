#include "ctseg/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctseg/errors.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/net.hpp"
#include "ctseg/nifti.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/preprocess.hpp"
#include "ctseg/report.hpp"
#include "ctseg/textio.hpp"
#include "ctseg/trainer.hpp"
#include "ctseg/tuning.hpp"

namespace ctseg {
namespace {

namespace fs = std::filesystem;

// ------------------------------------------------------------- config files --

PhantomSpec load_phantom_config(const std::string& path) {
  PhantomSpec spec;
  for (const auto& [key, value] : textio::read_kv(path)) {
    if (key == "shape_x")
      spec.shape[0] = textio::parse_int(value);
    else if (key == "shape_y")
      spec.shape[1] = textio::parse_int(value);
    else if (key == "shape_z")
      spec.shape[2] = textio::parse_int(value);
    else if (key == "spacing_x")
      spec.spacing[0] = textio::parse_double(value);
    else if (key == "spacing_y")
      spec.spacing[1] = textio::parse_double(value);
    else if (key == "spacing_z")
      spec.spacing[2] = textio::parse_double(value);
    else if (key == "lesion_count_min")
      spec.lesion_count_min = static_cast<int>(textio::parse_int(value));
    else if (key == "lesion_count_max")
      spec.lesion_count_max = static_cast<int>(textio::parse_int(value));
    else if (key == "noise_sigma")
      spec.noise_sigma = textio::parse_double(value);
    else
      throw ConfigError("unknown phantom key: " + key);
  }
  spec.validate();
  return spec;
}

PreprocSpec load_preproc_config(const std::string& path) {
  PreprocSpec spec;
  for (const auto& [key, value] : textio::read_kv(path)) {
    if (key == "target_rows")
      spec.target_rows = static_cast<int>(textio::parse_int(value));
    else if (key == "target_cols")
      spec.target_cols = static_cast<int>(textio::parse_int(value));
    else if (key == "hu_low")
      spec.hu_low = textio::parse_double(value);
    else if (key == "hu_high")
      spec.hu_high = textio::parse_double(value);
    else if (key == "crop_margin_vox")
      spec.crop_margin_vox = static_cast<int>(textio::parse_int(value));
    else
      throw ConfigError("unknown preprocess key: " + key);
  }
  spec.validate();
  return spec;
}

// --------------------------------------------------------------- manifests --

struct ManifestRow {
  std::string id;
  std::string cohort;
  std::vector<std::string> paths;  // column layout depends on the stage
};

std::vector<ManifestRow> read_manifest(const std::string& path,
                                       const std::vector<std::string>& header) {
  const auto rows = textio::read_csv(path);
  if (rows.empty())
    throw DataError("manifest is empty: " + path);
  if (rows.front() != header) {
    std::string want;
    for (const std::string& h : header) {
      if (!want.empty()) want += ',';
      want += h;
    }
    throw FormatError("manifest " + path + ": expected header " + want);
  }
  std::vector<ManifestRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != header.size())
      throw FormatError("manifest " + path + ": row " + std::to_string(i) +
                        " has " + std::to_string(rows[i].size()) +
                        " fields, expected " + std::to_string(header.size()));
    ManifestRow r;
    r.id = rows[i][0];
    r.cohort = rows[i][1];
    r.paths.assign(rows[i].begin() + 2, rows[i].end());
    out.push_back(std::move(r));
  }
  return out;
}

const std::vector<std::string> kCorpusHeader = {"case_id", "cohort", "seed",
                                                "volume_path", "mask_path"};
const std::vector<std::string> kPrepHeader = {
    "case_id", "cohort", "image_path", "mask_path", "crop_path"};
const std::vector<std::string> kPredHeader = {"case_id", "cohort",
                                              "pred_path"};

std::string sibling(const std::string& manifest_path, const std::string& rel) {
  return (fs::path(manifest_path).parent_path() / rel).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

// ------------------------------------------------------------- subcommands --

struct PhantomArgs {
  std::string out;
  std::string config;
  int n_train = 40;
  int n_test_normal = 10;
  int n_test_covid = 10;
  std::uint64_t seed = 0;
};

void run_phantom(const PhantomArgs& a) {
  PhantomSpec proto =
      a.config.empty() ? PhantomSpec{} : load_phantom_config(a.config);
  generate_corpus(a.out, a.n_train, a.n_test_normal, a.n_test_covid, a.seed,
                  proto);
}

struct PreprocessArgs {
  std::string manifest;
  std::string out;
  std::string config;
  std::string filter;
  bool with_masks = false;
};

void run_preprocess(const PreprocessArgs& a) {
  const PreprocSpec spec =
      a.config.empty() ? PreprocSpec{} : load_preproc_config(a.config);
  ensure_dir(a.out);
  std::vector<std::vector<std::string>> out_rows;
  for (const ManifestRow& r : read_manifest(a.manifest, kCorpusHeader)) {
    if (!a.filter.empty() && r.id.rfind(a.filter, 0) != 0) continue;
    const Volume vol = read_volume(sibling(a.manifest, r.paths[1]));
    BinaryMask mask;
    if (a.with_masks) mask = read_mask(sibling(a.manifest, r.paths[2]));
    PreprocResult pre =
        preprocess_case(vol, a.with_masks ? &mask : nullptr, spec);

    const std::string img_rel = r.id + "_img.nii";
    const std::string mask_rel = a.with_masks ? r.id + "_mask.nii" : "";
    const std::string crop_rel = r.id + "_crop.txt";
    write_volume(pre.image, (fs::path(a.out) / img_rel).string());
    if (a.with_masks)
      write_mask(*pre.mask, (fs::path(a.out) / mask_rel).string());
    write_crop_record((fs::path(a.out) / crop_rel).string(), pre.crop);
    out_rows.push_back({r.id, r.cohort, img_rel, mask_rel, crop_rel});
  }
  if (out_rows.empty())
    throw DataError("preprocess: no manifest case matches filter '" +
                    a.filter + "'");
  textio::write_csv((fs::path(a.out) / "manifest.csv").string(), kPrepHeader,
                    out_rows);
}

ConvAlgo parse_algo(const std::string& s) {
  if (s == "auto") return ConvAlgo::auto_select;
  if (s == "direct") return ConvAlgo::direct;
  return ConvAlgo::gemm;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string resume;
  std::string precision = "f32";
  std::string algo = "auto";
  std::uint64_t net_seed = 0;
};

template <class T>
void run_train_typed(const TrainArgs& a, const TrainConfig& cfg) {
  const std::string manifest = (fs::path(a.data) / "manifest.csv").string();
  std::vector<TrainSubject> subjects;
  for (const ManifestRow& r : read_manifest(manifest, kPrepHeader)) {
    if (r.paths[1].empty())
      throw DataError("train: case " + r.id +
                      " has no mask; preprocess with --with-masks");
    TrainSubject s;
    s.id = r.id;
    s.image = read_volume(sibling(manifest, r.paths[0]));
    s.mask = read_mask(sibling(manifest, r.paths[1]));
    subjects.push_back(std::move(s));
  }
  NetConfig ncfg;
  ncfg.seed = a.net_seed;
  SegNet<T> net = SegNet<T>::build(ncfg);
  net.algo = parse_algo(a.algo);
  const TrainReport report = train(net, subjects, cfg, a.out, a.resume);
  write_train_report(report,
                     (fs::path(a.out) / "training_log.csv").string());
  save_train_config(cfg, (fs::path(a.out) / "train_config.txt").string());
}

void run_train(const TrainArgs& a) {
  const TrainConfig cfg =
      a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.precision == "f64")
    run_train_typed<double>(a, cfg);
  else
    run_train_typed<float>(a, cfg);
}

struct InferArgs {
  std::string manifest;
  std::string checkpoint;
  std::string out;
  std::string precision = "f32";
  std::string algo = "auto";
};

template <class T>
void run_infer_typed(const InferArgs& a) {
  SegNet<T> net = load_checkpoint<T>(a.checkpoint);
  net.algo = parse_algo(a.algo);
  ensure_dir(a.out);
  std::vector<std::vector<std::string>> out_rows;
  for (const ManifestRow& r : read_manifest(a.manifest, kPrepHeader)) {
    const Volume image = read_volume(sibling(a.manifest, r.paths[0]));
    const CropRecord crop = read_crop_record(sibling(a.manifest, r.paths[2]));
    const std::int64_t nz = image.nz(), H = image.ny(), W = image.nx();
    Tensor4<T> batch(nz, 1, H, W);
    for (std::int64_t z = 0; z < nz; ++z) {
      const float* src = image.slice(z);
      T* dst = batch.plane(z, 0);
      for (std::int64_t i = 0; i < H * W; ++i) dst[i] = static_cast<T>(src[i]);
    }
    const Tensor4<T> probs = net.forward(batch, NetMode::infer);
    const Tensor4<std::uint8_t> pm = predict_mask(probs);
    BinaryMask pred_pre(W, H, nz);
    pred_pre.spacing = image.spacing;
    pred_pre.origin = image.origin;
    for (std::int64_t z = 0; z < nz; ++z)
      std::copy_n(pm.plane(z, 0), H * W, pred_pre.data.begin() + z * H * W);
    const BinaryMask pred = mask_to_original(pred_pre, crop);
    const std::string pred_rel = r.id + "_pred.nii";
    write_mask(pred, (fs::path(a.out) / pred_rel).string());
    out_rows.push_back({r.id, r.cohort, pred_rel});
  }
  textio::write_csv((fs::path(a.out) / "manifest.csv").string(), kPredHeader,
                    out_rows);
}

void run_infer(const InferArgs& a) {
  if (a.precision == "f64")
    run_infer_typed<double>(a);
  else
    run_infer_typed<float>(a);
}

struct EvaluateArgs {
  std::string corpus;
  std::string pred;
  std::string out;
  std::string config;
};

void run_evaluate(const EvaluateArgs& a) {
  const PreprocSpec spec =
      a.config.empty() ? PreprocSpec{} : load_preproc_config(a.config);
  std::map<std::string, const ManifestRow*> by_id;
  const auto corpus_rows = read_manifest(a.corpus, kCorpusHeader);
  for (const ManifestRow& r : corpus_rows) by_id[r.id] = &r;

  std::vector<CaseMetrics> cases;
  for (const ManifestRow& p : read_manifest(a.pred, kPredHeader)) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end())
      throw DataError("evaluate: case " + p.id + " not in corpus manifest");
    const ManifestRow& c = *it->second;
    const Volume vol = read_volume(sibling(a.corpus, c.paths[1]));
    const BinaryMask ref = read_mask(sibling(a.corpus, c.paths[2]));
    const BinaryMask pred = read_mask(sibling(a.pred, p.paths[0]));
    const Volume norm = normalize_hu(vol, spec.hu_low, spec.hu_high);
    BinaryMask domain(vol.nx(), vol.ny(), vol.nz(), 1);
    domain.spacing = vol.spacing;
    cases.push_back(
        evaluate_case(p.id, p.cohort, ref, pred, vol, norm, domain));
  }
  write_case_metrics_csv(a.out, cases);
}

struct ReportArgs {
  std::string cases;
  std::string out;
};

void run_report(const ReportArgs& a) {
  const std::vector<CaseMetrics> cases = read_case_metrics_csv(a.cases);
  ensure_dir(a.out);
  write_report(build_report(cases), a.out);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  tune_allocator();
  CLI::App app{"volumetric lung segmentation toolkit"};
  app.require_subcommand(1);

  PhantomArgs pa;
  CLI::App* phantom =
      app.add_subcommand("phantom", "generate a synthetic chest corpus");
  phantom->add_option("--out", pa.out, "corpus output directory")->required();
  phantom->add_option("--train", pa.n_train, "training cases");
  phantom->add_option("--test-normal", pa.n_test_normal, "normal test cases");
  phantom->add_option("--test-covid", pa.n_test_covid, "covid test cases");
  phantom->add_option("--seed", pa.seed, "base seed");
  phantom->add_option("--config", pa.config, "phantom key=value file");

  PreprocessArgs ra;
  CLI::App* prep = app.add_subcommand(
      "preprocess", "crop, resize, and normalize corpus volumes");
  prep->add_option("--manifest", ra.manifest, "corpus manifest.csv")
      ->required();
  prep->add_option("--out", ra.out, "output directory")->required();
  prep->add_option("--config", ra.config, "preprocess key=value file");
  prep->add_option("--filter", ra.filter, "keep case ids with this prefix");
  prep->add_flag("--with-masks", ra.with_masks,
                 "crop from the reference mask and emit resampled masks");

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "train the segmentation net");
  tr->add_option("--data", ta.data, "preprocessed directory (with masks)")
      ->required();
  tr->add_option("--out", ta.out, "run output directory")->required();
  tr->add_option("--config", ta.config, "training key=value file");
  tr->add_option("--resume", ta.resume, "train_state.bin to resume from");
  tr->add_option("--precision", ta.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  tr->add_option("--conv-algo", ta.algo, "convolution algorithm")
      ->check(CLI::IsMember({"auto", "direct", "gemm"}));
  tr->add_option("--net-seed", ta.net_seed, "weight-init seed");

  InferArgs ia;
  CLI::App* inf = app.add_subcommand("infer", "predict masks for a manifest");
  inf->add_option("--manifest", ia.manifest, "preprocessed manifest.csv")
      ->required();
  inf->add_option("--checkpoint", ia.checkpoint, "model checkpoint")
      ->required();
  inf->add_option("--out", ia.out, "output directory")->required();
  inf->add_option("--precision", ia.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  inf->add_option("--conv-algo", ia.algo, "convolution algorithm")
      ->check(CLI::IsMember({"auto", "direct", "gemm"}));

  EvaluateArgs ea;
  CLI::App* ev =
      app.add_subcommand("evaluate", "score predictions against references");
  ev->add_option("--corpus", ea.corpus, "corpus manifest.csv")->required();
  ev->add_option("--pred", ea.pred, "prediction manifest.csv")->required();
  ev->add_option("--out", ea.out, "per-case metrics CSV")->required();
  ev->add_option("--config", ea.config, "preprocess key=value file");

  ReportArgs oa;
  CLI::App* rp =
      app.add_subcommand("report", "cohort summary, boxplot, outlier files");
  rp->add_option("--cases", oa.cases, "per-case metrics CSV")->required();
  rp->add_option("--out", oa.out, "report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (app.got_subcommand(phantom))
      run_phantom(pa);
    else if (app.got_subcommand(prep))
      run_preprocess(ra);
    else if (app.got_subcommand(tr))
      run_train(ta);
    else if (app.got_subcommand(inf))
      run_infer(ia);
    else if (app.got_subcommand(ev))
      run_evaluate(ea);
    else if (app.got_subcommand(rp))
      run_report(oa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("ctseg");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ctseg
