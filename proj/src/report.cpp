#include "ctseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "ctseg/errors.hpp"
#include "ctseg/textio.hpp"

namespace ctseg {

namespace {

struct MetricColumn {
  const char* name;
  std::optional<double> CaseMetrics::* field;
};

// Row order of the cohort summary table.
const MetricColumn kColumns[] = {
    {"Dice Coefficient", &CaseMetrics::dsc},
    {"Jaccard Index", &CaseMetrics::jc},
    {"ME", &CaseMetrics::me},
    {"MAE", &CaseMetrics::mae},
    {"False Positive Ratio", &CaseMetrics::fpr},
    {"False Negative Ratio", &CaseMetrics::fnr},
    {"Relative Mean HU Diff (%)", &CaseMetrics::rel_mean_hu_pct},
    {"Absolute Relative Mean HU Diff (%)", &CaseMetrics::abs_rel_mean_hu_pct},
    {"Relative Volume Diff (%)", &CaseMetrics::rel_vol_pct},
    {"Absolute Relative Volume Diff (%)", &CaseMetrics::abs_rel_vol_pct},
};

// The subset plotted per cohort (Fig-4 style panels).
const int kBoxplotColumns[] = {0, 1, 2, 3, 6, 8};

std::vector<double> collect_sorted(const std::vector<CaseMetrics>& cases,
                                   const MetricColumn& col, int* missing) {
  std::vector<double> vals;
  vals.reserve(cases.size());
  int miss = 0;
  for (const CaseMetrics& c : cases) {
    const auto& v = c.*(col.field);
    if (v)
      vals.push_back(*v);
    else
      ++miss;
  }
  std::sort(vals.begin(), vals.end());
  if (missing) *missing = miss;
  return vals;
}

// Linear interpolation of order statistics on sorted values.
double quantile_sorted(const std::vector<double>& x, double p) {
  const double h = static_cast<double>(x.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0 || lo + 1 >= x.size()) return x[lo];
  return x[lo] + frac * (x[lo + 1] - x[lo]);
}

BoxplotData boxplot_sorted(const std::vector<double>& vals,
                           double iqr_factor) {
  BoxplotData b;
  b.q1 = quantile_sorted(vals, 0.25);
  b.median = quantile_sorted(vals, 0.5);
  b.q3 = quantile_sorted(vals, 0.75);
  const double reach = iqr_factor * (b.q3 - b.q1);
  const double lo_bound = b.q1 - reach;
  const double hi_bound = b.q3 + reach;
  b.whisker_low = b.q3;
  b.whisker_high = b.q1;
  for (const double v : vals) {
    if (v >= lo_bound) {
      b.whisker_low = v;  // first in-range value of the sorted list
      break;
    }
  }
  for (auto it = vals.rbegin(); it != vals.rend(); ++it) {
    if (*it <= hi_bound) {
      b.whisker_high = *it;
      break;
    }
  }
  for (const double v : vals)
    if (v < lo_bound || v > hi_bound) b.outliers.push_back(v);
  return b;
}

// Cohort display order: the two first-class cohorts, then anything else
// alphabetically.
int cohort_rank(const std::string& c) {
  if (c == "normal") return 0;
  if (c == "covid") return 1;
  return 2;
}

std::vector<std::string> cohort_order(const std::vector<CaseMetrics>& cases) {
  std::vector<std::string> names;
  for (const CaseMetrics& c : cases)
    if (std::find(names.begin(), names.end(), c.cohort) == names.end())
      names.push_back(c.cohort);
  std::sort(names.begin(), names.end(),
            [](const std::string& a, const std::string& b) {
              const int ra = cohort_rank(a), rb = cohort_rank(b);
              return ra != rb ? ra < rb : a < b;
            });
  return names;
}

std::string opt_cell(const std::optional<double>& v) {
  return v ? textio::fmt_full(*v) : std::string();
}

}  // namespace

const std::vector<std::string>& table1_metric_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const MetricColumn& c : kColumns) n.emplace_back(c.name);
    return n;
  }();
  return names;
}

const std::vector<std::string>& boxplot_metric_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const int i : kBoxplotColumns) n.emplace_back(kColumns[i].name);
    return n;
  }();
  return names;
}

CohortSummary summarize(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) throw DataError("summarize: no cases");
  for (const CaseMetrics& c : cases)
    if (c.cohort != cases.front().cohort)
      throw DataError("summarize: cases span more than one cohort");

  CohortSummary out;
  out.cohort = cases.front().cohort;
  out.n = static_cast<int>(cases.size());
  for (const MetricColumn& col : kColumns) {
    MetricStats s;
    s.metric = col.name;
    const std::vector<double> vals = collect_sorted(cases, col, &s.n_missing);
    s.n_used = static_cast<int>(vals.size());
    if (!vals.empty()) {
      s.min = vals.front();
      s.max = vals.back();
      double sum = 0.0;
      for (const double v : vals) sum += v;
      const double mean = sum / static_cast<double>(vals.size());
      s.mean = mean;
      if (vals.size() >= 2) {
        double ss = 0.0;
        for (const double v : vals) ss += (v - mean) * (v - mean);
        s.sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
      }
    }
    out.metrics.push_back(std::move(s));
  }
  return out;
}

BoxplotData boxplot_data(std::vector<double> values) {
  if (values.size() < 4)
    throw DataError("boxplot_data: need at least four values");
  std::sort(values.begin(), values.end());
  return boxplot_sorted(values, 1.5);
}

std::vector<OutlierRecord> outlier_report(const std::vector<CaseMetrics>& cases,
                                          const OutlierRule& rule) {
  std::vector<OutlierRecord> out;
  for (const std::string& cohort : cohort_order(cases)) {
    std::vector<CaseMetrics> group;
    for (const CaseMetrics& c : cases)
      if (c.cohort == cohort) group.push_back(c);
    for (const MetricColumn& col : kColumns) {
      const std::vector<double> vals = collect_sorted(group, col, nullptr);
      if (vals.size() < 4) continue;  // whiskers undefined
      const BoxplotData box = boxplot_sorted(vals, rule.iqr_factor);
      for (const CaseMetrics& c : group) {
        const auto& v = c.*(col.field);
        if (!v) continue;
        if (*v < box.whisker_low)
          out.push_back({c.case_id, cohort, col.name, *v, box.whisker_low,
                         false});
        else if (*v > box.whisker_high)
          out.push_back({c.case_id, cohort, col.name, *v, box.whisker_high,
                         true});
      }
    }
  }
  const auto metric_rank = [](const std::string& m) {
    const auto& names = table1_metric_names();
    return std::find(names.begin(), names.end(), m) - names.begin();
  };
  std::sort(out.begin(), out.end(),
            [&](const OutlierRecord& a, const OutlierRecord& b) {
              if (a.case_id != b.case_id) return a.case_id < b.case_id;
              return metric_rank(a.metric) < metric_rank(b.metric);
            });
  return out;
}

ReportBundle build_report(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) throw DataError("build_report: no cases");
  ReportBundle bundle;
  for (const std::string& cohort : cohort_order(cases)) {
    std::vector<CaseMetrics> group;
    for (const CaseMetrics& c : cases)
      if (c.cohort == cohort) group.push_back(c);
    bundle.summaries.push_back(summarize(group));
    for (const int ci : kBoxplotColumns) {
      const std::vector<double> vals =
          collect_sorted(group, kColumns[ci], nullptr);
      if (vals.size() < 4) continue;
      bundle.boxplots.push_back(
          {cohort, kColumns[ci].name, boxplot_sorted(vals, 1.5)});
    }
  }
  bundle.outliers = outlier_report(cases);
  return bundle;
}

void write_report(const ReportBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create report directory: ") + e.what());
  }

  std::vector<std::vector<std::string>> srows;
  for (const CohortSummary& cs : bundle.summaries)
    for (const MetricStats& m : cs.metrics)
      srows.push_back({cs.cohort, m.metric, std::to_string(m.n_used),
                       std::to_string(m.n_missing), opt_cell(m.min),
                       opt_cell(m.max), opt_cell(m.mean), opt_cell(m.sd)});
  textio::write_csv(
      (fs::path(dir) / "summary.csv").string(),
      {"cohort", "metric", "n_used", "n_missing", "min", "max", "mean", "sd"},
      srows);

  std::vector<std::vector<std::string>> brows;
  for (const ReportBundle::BoxRow& r : bundle.boxplots) {
    std::string outliers;
    for (std::size_t i = 0; i < r.box.outliers.size(); ++i) {
      if (i) outliers += ';';
      outliers += textio::fmt_full(r.box.outliers[i]);
    }
    brows.push_back({r.cohort, r.metric, textio::fmt_full(r.box.q1),
                     textio::fmt_full(r.box.median),
                     textio::fmt_full(r.box.q3),
                     textio::fmt_full(r.box.whisker_low),
                     textio::fmt_full(r.box.whisker_high),
                     std::to_string(r.box.outliers.size()), outliers});
  }
  textio::write_csv((fs::path(dir) / "boxplot.csv").string(),
                    {"cohort", "metric", "q1", "median", "q3", "whisker_low",
                     "whisker_high", "n_outliers", "outliers"},
                    brows);

  const std::string opath = (fs::path(dir) / "outliers.txt").string();
  std::ofstream os(opath, std::ios::binary);
  if (!os) throw IoError("cannot write " + opath);
  os << "# outliers: " << bundle.outliers.size() << "\n";
  for (const OutlierRecord& r : bundle.outliers)
    os << r.case_id << "\t" << r.cohort << "\t" << r.metric << "\t"
       << textio::fmt_report(r.value) << "\t"
       << (r.high ? "above" : "below") << "\t"
       << textio::fmt_report(r.bound) << "\n";
  if (!os) throw IoError("failed writing " + opath);
}

}  // namespace ctseg
