#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/dataset.hpp"

namespace dwfs {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // row-major classes x classes

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;

  nlohmann::ordered_json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
};

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, std::size_t classes);

struct MetricRow {
  std::string name;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  std::vector<std::string> flags;  // zero-denominator notes; the metric is reported as 0
};

struct MetricsTable {
  std::vector<MetricRow> families;  // one-vs-rest
  MetricRow macro;  // accuracy = trace/total; precision, recall, f1 = unweighted means of the family rows
  MetricRow micro;  // pooled counts; for single-label data every entry equals trace/total
  std::uint64_t total = 0;

  nlohmann::ordered_json to_json() const;
  static MetricsTable from_json(const nlohmann::json& j);
};

/// Per-family one-vs-rest metrics. Names come from `families` when given.
MetricsTable family_metrics(const ConfusionMatrix& cm, const FamilyLabelMap* families = nullptr);

}  // namespace dwfs
