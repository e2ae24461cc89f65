#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vseg/mask.hpp"
#include "vseg/net_config.hpp"

namespace vseg {

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

// Throws ShapeError when extents differ.
Confusion confusion(const Mask& pred, const Mask& ref);

// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty.
double dice_coefficient(const Mask& pred, const Mask& ref);
// TP / (TP + FN); 1.0 when TP = FP = FN = 0, 0.0 for any other empty denominator.
double sensitivity(const Mask& pred, const Mask& ref);
// TP / (TP + FP); same degenerate-case rule as sensitivity.
double precision(const Mask& pred, const Mask& ref);

struct MetricsRecord {
  std::string case_id;
  Task task = Task::kLesion;
  double dice = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
};

MetricsRecord measure(const std::string& case_id, Task task, const Mask& pred, const Mask& ref);

struct MetricsSummary {
  std::vector<MetricsRecord> cases;
  double mean_dice = 0.0;
  double mean_sensitivity = 0.0;
  double mean_precision = 0.0;
};

// Unweighted per-case means. Throws ConfigError for an empty list.
MetricsSummary summarize(std::vector<MetricsRecord> cases);

// "case_id\ttask\tdice\tsensitivity\tprecision" with six decimals.
std::string format_metrics_line(const MetricsRecord& r);
inline constexpr const char* kMetricsHeader = "case_id\ttask\tdice\tsensitivity\tprecision";
// Header, one line per case, then a "mean" row.
void write_metrics_table(std::ostream& os, const MetricsSummary& summary);

}  // namespace vseg
