#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/dataset.hpp"
#include "dwfs/forest.hpp"

namespace dwfs {

/// Whether the mean impact is taken over normalized (default) or raw impact factors.
enum class AlphaBarSource { Normalized, Raw };

struct DwfsConfig {
  double beta = 0.5;
  /// Explicit threshold; when unset, theta is the `theta_quantile` quantile of the scores.
  std::optional<double> theta;
  double theta_quantile = 0.75;
  AlphaBarSource alpha_bar_source = AlphaBarSource::Normalized;
  ForestConfig forest;
  SplitSpec eval_split;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static DwfsConfig from_json(const nlohmann::json& j, DwfsConfig defaults);
};

struct StrategyImpact {
  std::string condition;
  ImportanceProfile profile;
  double alpha_raw = 0.0;
  double alpha_norm = 0.0;
};

struct DwfsResult {
  FeatureSchema schema;
  ImportanceProfile unobfuscated;
  std::vector<StrategyImpact> per_strategy;
  std::vector<double> delta_importance;
  double alpha_bar = 0.0;
  double w1 = 1.0;
  double w2 = 0.0;
  double theta = 0.0;
  std::vector<double> scores;
  std::vector<std::size_t> selected;
  nlohmann::ordered_json manifest;  // configs, seeds, per-condition accuracies and checksums

  nlohmann::ordered_json to_json() const;
  static DwfsResult from_json(const nlohmann::ordered_json& j);
};

struct Weights {
  double importance;  // w1
  double stability;   // w2
};

/// Relative accuracy drop (acc_unobf - acc_obf) / acc_unobf; may be negative.
double impact_factor(double acc_unobf, double acc_obf);

/// Clamps negatives to zero, then divides by the sum; uniform 1/m if the sum is zero.
std::vector<double> normalize_impacts(std::span<const double> alphas);

/// delta_i = sum_j alpha_j * |I_i - I_obf_j,i|
std::vector<double> stability_delta(std::span<const double> importances,
                                    std::span<const std::vector<double>> obfuscated_importances,
                                    std::span<const double> alphas);

double mean_impact(std::span<const double> alphas);

Weights weights(double beta, double alpha_bar);

/// S_i = w1 * I_i - w2 * delta_i
std::vector<double> composite_scores(std::span<const double> importances, std::span<const double> delta,
                                     double w1, double w2);

/// Indices with score strictly greater than theta, ascending.
std::vector<std::size_t> select_features(std::span<const double> scores, double theta);

/// Linear-interpolation quantile (q in [0,1]) of the values.
double quantile(std::span<const double> values, double q);

/// Trains one forest on the training part of `ds` and measures accuracy on the
/// held-out part, both from the same split spec.
ImportanceProfile profile_condition(const LabeledFeatureDataset& ds, const ForestConfig& forest,
                                    const SplitSpec& split, std::size_t n_classes);

/// Score aggregation from already-measured profiles (everything after forest training).
DwfsResult combine_profiles(const FeatureSchema& schema, const ImportanceProfile& unobfuscated,
                            std::vector<StrategyImpact> per_strategy, const DwfsConfig& cfg);

struct DwfsCorpus {
  LabeledFeatureDataset unobfuscated;
  std::vector<LabeledFeatureDataset> obfuscated;
  std::size_t n_classes = 0;  // 0 -> inferred from labels
};

DwfsResult run_dwfs(const DwfsCorpus& corpus, const DwfsConfig& cfg);
DwfsResult run_dwfs(const CorpusManifest& manifest, const DwfsConfig& cfg);

/// FNV-1a digest over a dataset's values and labels, hex-encoded.
std::string dataset_checksum(const LabeledFeatureDataset& ds);

}  // namespace dwfs
