#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace dwfs {

enum class FeatureKind { OpcodeCount, ApiFlag, PermissionFlag };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);
inline bool is_flag(FeatureKind kind) { return kind != FeatureKind::OpcodeCount; }

/// Kind implied by a feature name prefix: "api:" and "perm:" are flags,
/// anything else is an opcode count.
FeatureKind infer_feature_kind(std::string_view name);

/// Ordered feature space. Column i of every dataset is feature i.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::vector<std::string> names, std::vector<FeatureKind> kinds);

  static FeatureSchema from_names(std::vector<std::string> names);
  /// 235 opcode counts, 426 API flags, 86 permission flags.
  static FeatureSchema default_profile();

  std::size_t dimension() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  FeatureKind kind(std::size_t i) const { return kinds_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<FeatureKind>& kinds() const { return kinds_; }
  std::optional<std::size_t> index_of(std::string_view name) const;

  nlohmann::ordered_json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<FeatureKind> kinds_;
};

/// Dense family ids 0..C-1 mapped to unique names.
class FamilyLabelMap {
 public:
  FamilyLabelMap() = default;
  explicit FamilyLabelMap(std::vector<std::string> names);
  static FamilyLabelMap numbered(std::size_t count);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < names_.size(); }

  nlohmann::ordered_json to_json() const;
  static FamilyLabelMap from_json(const nlohmann::json& j);

  bool operator==(const FamilyLabelMap&) const = default;

 private:
  std::vector<std::string> names_;
};

inline constexpr std::string_view kUnobfuscated = "unobfuscated";

struct LabeledFeatureDataset {
  FeatureSchema schema;
  std::size_t rows = 0;
  std::vector<double> values;  // row-major, rows x schema.dimension()
  std::vector<int> labels;
  std::string condition{kUnobfuscated};

  std::size_t cols() const { return schema.dimension(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }
  /// Number of classes implied by the labels (max label + 1, or 0 when empty).
  std::size_t label_count() const;
  LabeledFeatureDataset select_rows(std::span<const std::size_t> indices) const;
  LabeledFeatureDataset select_columns(std::span<const std::size_t> columns) const;
};

struct Finding {
  std::optional<std::size_t> row;
  std::optional<std::size_t> col;
  std::string code;  // non-finite | negative | flag-not-binary | label-out-of-range | shape
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool ok() const { return findings.empty(); }
  std::string summary(std::size_t max_lines = 10) const;
};

ValidationReport validate_dataset(const LabeledFeatureDataset& ds,
                                  const FamilyLabelMap* families = nullptr);

/// Parses the feature CSV format: header `<feature names...>,label`. When a
/// schema is given the header must match it exactly; otherwise kinds are
/// inferred from the names. Throws Error{Schema|Parse|Validation}.
LabeledFeatureDataset parse_feature_csv(std::string_view text,
                                        const FeatureSchema* schema = nullptr,
                                        const FamilyLabelMap* families = nullptr,
                                        std::string condition = std::string(kUnobfuscated));

LabeledFeatureDataset load_feature_dataset(const std::filesystem::path& path,
                                           const FeatureSchema* schema = nullptr,
                                           const FamilyLabelMap* families = nullptr,
                                           std::string condition = std::string(kUnobfuscated));

/// Canonical CSV text: shortest round-trip decimals, `\n` line endings.
std::string format_feature_csv(const LabeledFeatureDataset& ds);
void save_feature_dataset(const LabeledFeatureDataset& ds, const std::filesystem::path& path);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Row indices of a seeded split. Depends only on the labels and the spec, so
/// conditions with aligned rows split identically.
SplitIndices split_indices(std::span<const int> labels, const SplitSpec& spec);

std::pair<LabeledFeatureDataset, LabeledFeatureDataset> split_dataset(const LabeledFeatureDataset& ds,
                                                                      const SplitSpec& spec);

/// Binds one CSV per condition, plus optional per-condition graph directories.
struct CorpusManifest {
  FeatureSchema schema;
  FamilyLabelMap families;
  std::vector<std::pair<std::string, std::filesystem::path>> conditions;
  std::vector<std::pair<std::string, std::filesystem::path>> graphs;
  bool paired = false;
  std::filesystem::path base_dir;

  std::optional<std::filesystem::path> condition_path(std::string_view condition) const;
  std::optional<std::filesystem::path> graph_dir(std::string_view condition) const;
  LabeledFeatureDataset load_condition(std::string_view condition) const;

  nlohmann::ordered_json to_json() const;
  static CorpusManifest from_json(const nlohmann::ordered_json& j, std::filesystem::path base_dir);
  static CorpusManifest load(const std::filesystem::path& path);
};

}  // namespace dwfs
