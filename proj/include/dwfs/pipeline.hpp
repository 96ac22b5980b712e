#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/dwfs.hpp"
#include "dwfs/gnn.hpp"
#include "dwfs/graph.hpp"
#include "dwfs/obfsim.hpp"
#include "dwfs/report.hpp"

namespace dwfs {

/// Which feature subset the GNN sees: the DWFS selection, or the same number of
/// features ranked by unobfuscated importance alone.
enum class FeatureSource { Dwfs, TopK };
FeatureSource parse_feature_source(const std::string& s);

nlohmann::ordered_json sbs_config_to_json(const SbsConfig& c);
SbsConfig sbs_config_from_json(const nlohmann::json& j, SbsConfig defaults);

/// One run directory:
///   corpus/     generated corpus (manifest.json, CSVs, graphs/, ground_truth.json)
///   selection/  dwfs-result.json
///   sbs/        reduced graphs per condition, stats.json, stats.md
///   models/     <tag>.json checkpoints, <tag>.log.csv, <tag>.run.json
///   eval/       <tag>.json per-condition confusion matrices and metrics
///   report/     report.md, report.json
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "dwfs-run";
  std::optional<std::filesystem::path> corpus;          // manifest; default out/corpus/manifest.json
  std::optional<std::filesystem::path> sensitive_apis;  // default: sensitive_apis.txt next to the manifest
  GeneratorConfig generator;
  DwfsConfig dwfs;
  SbsConfig sbs;
  GnnConfig gnn;
  std::vector<std::string> models{"gat", "sage", "gcn"};
  std::vector<std::string> strategies;  // conditions to evaluate besides the training one; empty = all
  std::string train_condition = "unobfuscated";
  double train_fraction = 0.8;
  FeatureSource feature_source = FeatureSource::Dwfs;

  /// Relative paths in the file resolve against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;

  std::filesystem::path corpus_manifest() const;
  std::filesystem::path selection_path() const { return out / "selection" / "dwfs-result.json"; }
  std::filesystem::path sbs_dir() const { return out / "sbs"; }
  std::filesystem::path models_dir() const { return out / "models"; }
  std::filesystem::path eval_dir() const { return out / "eval"; }
  std::filesystem::path report_dir() const { return out / "report"; }

  /// Every randomized stage takes a labeled substream of the root seed.
  GeneratorConfig seeded_generator() const;
  DwfsConfig seeded_dwfs() const;
  GnnConfig seeded_gnn(const std::string& model) const;
  SplitSpec gnn_split() const;
  /// File stem for a model's artifacts, e.g. "gat" or "gat-topk".
  std::string model_tag(const std::string& model) const;
};

/// Selected indices for the configured feature source.
std::vector<std::size_t> feature_subset(const DwfsResult& r, FeatureSource source);
/// The k highest unobfuscated importances (ties to the lower index), ascending.
std::vector<std::size_t> topk_features(const DwfsResult& r, std::size_t k);

nlohmann::ordered_json selection_summary(const DwfsResult& r);

struct SbsRunStats {
  GraphStats stats;
  std::size_t skipped = 0;  // graphs with no sensitive node
  std::vector<std::string> warnings;
  nlohmann::ordered_json to_json() const;
};

struct EvalCondition {
  std::string condition;
  std::size_t samples = 0;
  std::size_t skipped = 0;  // rows without an SBS graph
  ConfusionMatrix confusion;
  MetricsTable metrics;
};

struct EvalResult {
  std::string model;
  std::string tag;
  std::vector<EvalCondition> conditions;
  nlohmann::ordered_json to_json() const;
  static EvalResult from_json(const nlohmann::ordered_json& j);
};

void cmd_gen(const PipelineConfig& cfg);
DwfsResult cmd_select(const PipelineConfig& cfg);
SbsRunStats cmd_sbs(const PipelineConfig& cfg);
TrainResult cmd_train(const PipelineConfig& cfg, const std::string& model);
EvalResult cmd_eval(const PipelineConfig& cfg, const std::string& model);
Report cmd_report(const PipelineConfig& cfg);

}  // namespace dwfs
