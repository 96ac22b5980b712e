#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwfs/dataset.hpp"
#include "dwfs/graph.hpp"
#include "dwfs/strategy.hpp"

namespace dwfs {

/// Knobs shared by every transform. `targets` are the columns obfuscation can
/// reach (the generator passes its fragile columns).
struct TransformParams {
  std::vector<std::size_t> targets;
  double corruption = 1.0;       // per-sample probability a target column is hit
  double rewire_fraction = 0.1;  // control-flow rewiring and reflection edge share
  double junk_fraction = 0.1;    // junk nodes as a share of graph size
  std::optional<std::size_t> junk_nodes;  // exact junk node count, overrides the fraction
  double permission_noise = 0.1;  // chance a permission flag is switched on (trivial strategies)
  double resample_mean = 8.0;     // Poisson mean for class-independent replacement counts

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TransformParams from_json(const nlohmann::json& j, TransformParams defaults);
};

struct ObfuscationTransform {
  Strategy strategy = Strategy::Manifest;
  TransformParams params;
  std::uint64_t seed = 0;
};

struct Sample {
  std::vector<double> features;  // app-level vector, aggregated from the graph
  CallGraph graph;
};

/// App-level vector from a graph: opcode counts sum over nodes, API flags take
/// the max over nodes, permission flags come from the graph's app features.
std::vector<double> aggregate_features(const CallGraph& g, const FeatureSchema& schema);

Sample apply_obfuscation(const Sample& sample, const FeatureSchema& schema, const ObfuscationTransform& t);

struct GeneratorConfig {
  std::size_t n_families = 2;
  std::size_t samples_per_family = 100;
  std::size_t dimension = 30;
  double fraction_robust = 0.3;
  double fraction_fragile = 0.3;
  double fraction_noise = 0.4;
  std::size_t min_nodes = 40;
  std::size_t max_nodes = 120;
  double sensitive_density = 0.05;
  double robust_effect = 0.25;   // relative shift of class means on robust columns
  double fragile_effect = 0.25;  // same for fragile columns
  std::uint64_t seed = 0;
  std::vector<Strategy> strategies;  // empty -> default_strategies()
  TransformParams transform;         // targets are filled in by the generator

  void validate() const;
  std::vector<Strategy> effective_strategies() const;
  nlohmann::ordered_json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j, GeneratorConfig defaults);
};

struct GroundTruth {
  std::vector<std::size_t> robust, fragile, noise;

  nlohmann::ordered_json to_json() const;
  static GroundTruth from_json(const nlohmann::json& j);
};

struct GeneratedCondition {
  std::string name;
  std::vector<Sample> samples;
};

struct GeneratedCorpus {
  GeneratorConfig config;
  FeatureSchema schema;
  FamilyLabelMap families;
  GroundTruth truth;
  SensitiveApiList sensitive_apis;
  std::vector<int> labels;
  std::vector<GeneratedCondition> conditions;  // "unobfuscated" first, then one per strategy

  LabeledFeatureDataset dataset(std::size_t condition) const;
  const GeneratedCondition* find(std::string_view name) const;
};

GeneratedCorpus generate_corpus(const GeneratorConfig& cfg);

/// Writes manifest.json, one CSV per condition, graphs/<condition>/<row>.json,
/// ground_truth.json and sensitive_apis.txt under `dir`. The directory is built
/// in a sibling staging directory and renamed into place.
void write_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& dir);

}  // namespace dwfs
