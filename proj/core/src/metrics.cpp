#include "vseg/metrics.hpp"

#include <cstdio>
#include <ostream>

namespace vseg {

Confusion confusion(const Mask& pred, const Mask& ref) {
  if (!pred.same_extents(ref)) {
    const char* axis = pred.d != ref.d ? "d" : (pred.h != ref.h ? "h" : "w");
    throw ShapeError(std::string("metrics: prediction and reference differ on axis ") + axis);
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    const bool p = pred.voxels[i] != 0;
    const bool r = ref.voxels[i] != 0;
    if (p && r) ++c.tp;
    else if (p) ++c.fp;
    else if (r) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, const Confusion& c) {
  if (den == 0) return (c.tp == 0 && c.fp == 0 && c.fn == 0) ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double dice_coefficient(const Mask& pred, const Mask& ref) {
  const Confusion c = confusion(pred, ref);
  const std::int64_t den = (c.tp + c.fp) + (c.tp + c.fn);
  if (den == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double sensitivity(const Mask& pred, const Mask& ref) {
  const Confusion c = confusion(pred, ref);
  return ratio(c.tp, c.tp + c.fn, c);
}

double precision(const Mask& pred, const Mask& ref) {
  const Confusion c = confusion(pred, ref);
  return ratio(c.tp, c.tp + c.fp, c);
}

MetricsRecord measure(const std::string& case_id, Task task, const Mask& pred, const Mask& ref) {
  return {case_id, task, dice_coefficient(pred, ref), sensitivity(pred, ref), precision(pred, ref)};
}

MetricsSummary summarize(std::vector<MetricsRecord> cases) {
  if (cases.empty()) throw ConfigError("metrics: no cases to summarize");
  MetricsSummary s;
  for (const auto& r : cases) {
    s.mean_dice += r.dice;
    s.mean_sensitivity += r.sensitivity;
    s.mean_precision += r.precision;
  }
  const auto n = static_cast<double>(cases.size());
  s.mean_dice /= n;
  s.mean_sensitivity /= n;
  s.mean_precision /= n;
  s.cases = std::move(cases);
  return s;
}

std::string format_metrics_line(const MetricsRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "\t%s\t%.6f\t%.6f\t%.6f", to_string(r.task).c_str(), r.dice, r.sensitivity,
                r.precision);
  return r.case_id + buf;
}

void write_metrics_table(std::ostream& os, const MetricsSummary& summary) {
  os << kMetricsHeader << '\n';
  for (const auto& r : summary.cases) os << format_metrics_line(r) << '\n';
  MetricsRecord mean{"mean", summary.cases.front().task, summary.mean_dice, summary.mean_sensitivity,
                     summary.mean_precision};
  os << format_metrics_line(mean) << '\n';
}

}  // namespace vseg
