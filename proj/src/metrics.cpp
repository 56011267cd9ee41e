#include "ctseg/metrics.hpp"

#include <cmath>

#include "ctseg/errors.hpp"
#include "ctseg/textio.hpp"

namespace ctseg {

namespace {

void require_aligned(const std::array<std::int64_t, 3>& a,
                     const std::array<std::int64_t, 3>& b, const char* what) {
  if (a != b) throw ShapeError(std::string("metrics: ") + what +
                               " grid differs from reference grid");
}

}  // namespace

ConfusionCounts confusion(const BinaryMask& ref, const BinaryMask& pred,
                          const BinaryMask& domain) {
  require_aligned(ref.shape, pred.shape, "prediction");
  require_aligned(ref.shape, domain.shape, "domain");
  ConfusionCounts c;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    if (!domain.data[i]) continue;
    const bool r = ref.data[i] != 0;
    const bool p = pred.data[i] != 0;
    if (r && p)
      ++c.tp;
    else if (!r && p)
      ++c.fp;
    else if (r && !p)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double dsc(const ConfusionCounts& c) {
  const std::int64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0)
    throw UndefinedMetric("dsc: reference and prediction are both empty");
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double jc(const ConfusionCounts& c) {
  const std::int64_t den = c.tp + c.fp + c.fn;
  if (den == 0)
    throw UndefinedMetric("jc: reference and prediction are both empty");
  return static_cast<double>(c.tp) / static_cast<double>(den);
}

std::pair<double, double> me_mae(const BinaryMask& ref,
                                 const BinaryMask& pred,
                                 const Volume& normalized) {
  require_aligned(ref.shape, pred.shape, "prediction");
  require_aligned(ref.shape, normalized.shape, "intensity");
  double se = 0.0, ae = 0.0;
  std::int64_t union_count = 0;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    const bool r = ref.data[i] != 0;
    const bool p = pred.data[i] != 0;
    if (!r && !p) continue;
    ++union_count;
    const double v = normalized.data[i];
    const double diff = (p ? v : 0.0) - (r ? v : 0.0);
    se += diff;
    ae += std::abs(diff);
  }
  if (union_count == 0)
    throw UndefinedMetric("me_mae: reference and prediction are both empty");
  const double n = static_cast<double>(union_count);
  return {se / n, ae / n};
}

std::pair<double, double> fp_fn_ratios(const ConfusionCounts& c) {
  if (c.fp + c.tn == 0)
    throw UndefinedMetric("fpr: no reference-negative voxels in the domain");
  if (c.fn + c.tp == 0)
    throw UndefinedMetric("fnr: no reference-positive voxels in the domain");
  return {static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn),
          static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp)};
}

HuVolumeDiffs hu_volume_diffs(const BinaryMask& ref, const BinaryMask& pred,
                              const Volume& hu,
                              const std::array<double, 3>& spacing) {
  require_aligned(ref.shape, pred.shape, "prediction");
  require_aligned(ref.shape, hu.shape, "intensity");
  double sum_r = 0.0, sum_p = 0.0;
  std::int64_t n_r = 0, n_p = 0;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    if (ref.data[i]) {
      sum_r += hu.data[i];
      ++n_r;
    }
    if (pred.data[i]) {
      sum_p += hu.data[i];
      ++n_p;
    }
  }
  if (n_r == 0)
    throw UndefinedMetric("hu_volume_diffs: reference mask is empty");

  HuVolumeDiffs out;
  const double voxel_mm3 = spacing[0] * spacing[1] * spacing[2];
  const double v_r = static_cast<double>(n_r) * voxel_mm3;
  const double v_p = static_cast<double>(n_p) * voxel_mm3;
  out.rel_vol_pct = 100.0 * (v_p - v_r) / v_r;
  out.abs_rel_vol_pct = std::abs(*out.rel_vol_pct);

  const double mu_r = sum_r / static_cast<double>(n_r);
  if (n_p > 0 && mu_r != 0.0) {
    const double mu_p = sum_p / static_cast<double>(n_p);
    out.rel_mean_hu_pct = 100.0 * (mu_p - mu_r) / mu_r;
    out.abs_rel_mean_hu_pct = std::abs(*out.rel_mean_hu_pct);
  }
  return out;
}

CaseMetrics evaluate_case(const std::string& case_id,
                          const std::string& cohort, const BinaryMask& ref,
                          const BinaryMask& pred, const Volume& hu,
                          const Volume& normalized, const BinaryMask& domain) {
  require_aligned(ref.shape, normalized.shape, "normalized-intensity");
  CaseMetrics m;
  m.case_id = case_id;
  m.cohort = cohort;
  const ConfusionCounts c = confusion(ref, pred, domain);
  try {
    m.dsc = dsc(c);
  } catch (const UndefinedMetric&) {
  }
  try {
    m.jc = jc(c);
  } catch (const UndefinedMetric&) {
  }
  try {
    const auto [me, mae] = me_mae(ref, pred, normalized);
    m.me = me;
    m.mae = mae;
  } catch (const UndefinedMetric&) {
  }
  if (c.fp + c.tn > 0)
    m.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  if (c.fn + c.tp > 0)
    m.fnr = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
  try {
    const HuVolumeDiffs d = hu_volume_diffs(ref, pred, hu, hu.spacing);
    m.rel_mean_hu_pct = d.rel_mean_hu_pct;
    m.abs_rel_mean_hu_pct = d.abs_rel_mean_hu_pct;
    m.rel_vol_pct = d.rel_vol_pct;
    m.abs_rel_vol_pct = d.abs_rel_vol_pct;
  } catch (const UndefinedMetric&) {
  }
  m.flagged = !(m.dsc && m.jc && m.me && m.mae && m.fpr && m.fnr &&
                m.rel_mean_hu_pct && m.abs_rel_mean_hu_pct && m.rel_vol_pct &&
                m.abs_rel_vol_pct);
  return m;
}

const std::vector<std::string> kCaseMetricsHeader = {
    "case_id",          "cohort",
    "dsc",              "jc",
    "me",               "mae",
    "fpr",              "fnr",
    "rel_mean_hu_pct",  "abs_rel_mean_hu_pct",
    "rel_vol_pct",      "abs_rel_vol_pct"};

namespace {

std::string cell(const std::optional<double>& v) {
  return v ? textio::fmt_full(*v) : std::string();
}

std::optional<double> parse_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return textio::parse_double(s);
}

}  // namespace

void write_case_metrics_csv(const std::string& path,
                            const std::vector<CaseMetrics>& cases) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(cases.size());
  for (const CaseMetrics& m : cases)
    rows.push_back({m.case_id, m.cohort, cell(m.dsc), cell(m.jc), cell(m.me),
                    cell(m.mae), cell(m.fpr), cell(m.fnr),
                    cell(m.rel_mean_hu_pct), cell(m.abs_rel_mean_hu_pct),
                    cell(m.rel_vol_pct), cell(m.abs_rel_vol_pct)});
  textio::write_csv(path, kCaseMetricsHeader, rows);
}

std::vector<CaseMetrics> read_case_metrics_csv(const std::string& path) {
  const auto rows = textio::read_csv(path);
  if (rows.empty() || rows[0] != kCaseMetricsHeader)
    throw DataError(path + ": unexpected case-metrics header");
  std::vector<CaseMetrics> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != kCaseMetricsHeader.size())
      throw DataError(path + ": wrong column count in case-metrics row");
    CaseMetrics m;
    m.case_id = r[0];
    m.cohort = r[1];
    m.dsc = parse_cell(r[2]);
    m.jc = parse_cell(r[3]);
    m.me = parse_cell(r[4]);
    m.mae = parse_cell(r[5]);
    m.fpr = parse_cell(r[6]);
    m.fnr = parse_cell(r[7]);
    m.rel_mean_hu_pct = parse_cell(r[8]);
    m.abs_rel_mean_hu_pct = parse_cell(r[9]);
    m.rel_vol_pct = parse_cell(r[10]);
    m.abs_rel_vol_pct = parse_cell(r[11]);
    m.flagged = !(m.dsc && m.jc && m.me && m.mae && m.fpr && m.fnr &&
                  m.rel_mean_hu_pct && m.abs_rel_mean_hu_pct &&
                  m.rel_vol_pct && m.abs_rel_vol_pct);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace ctseg
