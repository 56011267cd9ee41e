#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctseg/metrics.hpp"

namespace ctseg {

// Fixed metric rows of the cohort summary, in reporting order.
const std::vector<std::string>& table1_metric_names();
// The six metrics carried into boxplot.csv.
const std::vector<std::string>& boxplot_metric_names();

// Per-metric descriptive statistics over one cohort. Cases missing the
// metric are excluded and counted; sd is the sample (n-1) deviation and
// absent when fewer than two values contribute.
struct MetricStats {
  std::string metric;
  int n_used = 0;
  int n_missing = 0;
  std::optional<double> min, max, mean, sd;
};

struct CohortSummary {
  std::string cohort;
  int n = 0;  // cases in the cohort
  std::vector<MetricStats> metrics;  // table1_metric_names() order
};

// All cases must belong to one cohort; reductions run over sorted values,
// so the result is independent of case ordering.
CohortSummary summarize(const std::vector<CaseMetrics>& cases);

// Five-number boxplot summary: quartiles by linear interpolation of order
// statistics, Tukey whiskers at the most extreme data within 1.5 IQR of
// the quartiles, everything beyond listed as outliers.
struct BoxplotData {
  double q1 = 0, median = 0, q3 = 0;
  double whisker_low = 0, whisker_high = 0;
  std::vector<double> outliers;  // ascending
};

BoxplotData boxplot_data(std::vector<double> values);  // needs n >= 4

// A case is an outlier when any metric falls outside its cohort's whiskers.
struct OutlierRule {
  double iqr_factor = 1.5;
};

struct OutlierRecord {
  std::string case_id;
  std::string cohort;
  std::string metric;
  double value = 0;
  double bound = 0;  // the violated whisker
  bool high = false;  // true: above whisker_high, false: below whisker_low

  bool operator==(const OutlierRecord&) const = default;
};

// Sorted by case id, then metric order. Cohort metrics with fewer than
// four present values cannot define whiskers and are skipped.
std::vector<OutlierRecord> outlier_report(const std::vector<CaseMetrics>& cases,
                                          const OutlierRule& rule = {});

// Full report over all cohorts found in the cases.
struct ReportBundle {
  std::vector<CohortSummary> summaries;  // normal, covid, then others
  struct BoxRow {
    std::string cohort;
    std::string metric;
    BoxplotData box;
  };
  std::vector<BoxRow> boxplots;
  std::vector<OutlierRecord> outliers;
};

ReportBundle build_report(const std::vector<CaseMetrics>& cases);

// Writes summary.csv, boxplot.csv, and outliers.txt into dir.
void write_report(const ReportBundle& bundle, const std::string& dir);

}  // namespace ctseg
