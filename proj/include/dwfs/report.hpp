#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/metrics.hpp"

namespace dwfs {

struct ReportEntry {
  std::string model;
  std::string condition;
  ConfusionMatrix confusion;
  MetricsTable metrics;
};

/// Evaluation results for several models across conditions, plus the selection
/// manifest and graph-reduction statistics they were produced from.
struct Report {
  std::vector<std::string> families;
  std::vector<std::string> models;      // table order
  std::vector<std::string> conditions;  // column-group order
  std::vector<ReportEntry> entries;
  nlohmann::ordered_json selection;     // dwfs-result summary, null when absent
  nlohmann::ordered_json graph_stats;   // GraphStats JSON, null when absent

  const ReportEntry* find(const std::string& model, const std::string& condition) const;
  /// Adds or replaces an entry and registers its model and condition.
  void add(ReportEntry entry);

  nlohmann::ordered_json to_json() const;
  static Report from_json(const nlohmann::ordered_json& j);
};

std::string render_markdown(const Report& report);

/// Writes report.md and report.json into `dir`, each atomically.
void write_report(const Report& report, const std::filesystem::path& dir);

}  // namespace dwfs
