#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/common.hpp"
#include "dwfs/dataset.hpp"

namespace dwfs {

struct FeaturesPerSplit {
  enum class Policy { Sqrt, All, Fixed };
  Policy policy = Policy::Sqrt;
  std::size_t k = 0;  // only for Fixed

  std::size_t resolve(std::size_t dimension) const;
  std::string to_string() const;
  /// "sqrt", "all" or "fixed:<k>".
  static FeaturesPerSplit parse(const std::string& text);
};

struct ForestConfig {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;
  std::size_t min_samples_split = 2;
  FeaturesPerSplit features_per_split;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate(std::size_t dimension) const;
  nlohmann::ordered_json to_json() const;
  static ForestConfig from_json(const nlohmann::json& j, ForestConfig defaults);
  static ForestConfig from_json(const nlohmann::json& j) { return from_json(j, ForestConfig()); }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1;
  int right = -1;
  double weight = 0.0;  // (bootstrap-weighted) sample count reaching the node
  double impurity = 0.0;
  std::vector<double> distribution;  // leaf class distribution

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(std::span<const double> row) const;
  /// Argmax of the leaf distribution, ties to the lowest class id.
  int predict(std::span<const double> row) const;
  std::size_t depth() const;
  std::size_t internal_node_count() const;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  FeatureSchema schema;
  std::size_t n_classes = 0;
  ForestConfig config;

  /// Majority vote across trees, ties to the lowest class id.
  int predict(std::span<const double> row) const;

  nlohmann::ordered_json to_json() const;
  static ForestModel from_json(const nlohmann::json& j);
};

struct ImportanceProfile {
  std::vector<double> importances;
  double accuracy = 0.0;
};

/// 1 - sum(p_c^2).
double gini_impurity(std::span<const double> distribution);

/// Builds one tree over the given rows with integer sample weights (bootstrap
/// multiplicities). The rng drives per-node feature sampling only.
DecisionTree build_tree(const LabeledFeatureDataset& data, std::span<const std::uint32_t> weights,
                        std::size_t n_classes, const ForestConfig& cfg, Rng& rng);

ForestModel train_forest(const LabeledFeatureDataset& train, const ForestConfig& cfg,
                         std::optional<std::size_t> n_classes = std::nullopt);

double evaluate_accuracy(const ForestModel& model, const LabeledFeatureDataset& test);

/// Mean decrease in impurity, averaged over trees, then L1-normalized. The
/// returned profile's accuracy is left at 0.
ImportanceProfile feature_importances(const ForestModel& model);

}  // namespace dwfs
