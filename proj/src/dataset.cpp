#include "dwfs/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::OpcodeCount: return "opcode-count";
    case FeatureKind::ApiFlag: return "api-flag";
    case FeatureKind::PermissionFlag: return "permission-flag";
  }
  return "opcode-count";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "opcode-count") return FeatureKind::OpcodeCount;
  if (text == "api-flag") return FeatureKind::ApiFlag;
  if (text == "permission-flag") return FeatureKind::PermissionFlag;
  fail(ErrorKind::Schema, "unknown feature kind '" + std::string(text) + "'");
}

FeatureKind infer_feature_kind(std::string_view name) {
  if (name.starts_with("api:")) return FeatureKind::ApiFlag;
  if (name.starts_with("perm:")) return FeatureKind::PermissionFlag;
  return FeatureKind::OpcodeCount;
}

FeatureSchema::FeatureSchema(std::vector<std::string> names, std::vector<FeatureKind> kinds)
    : names_(std::move(names)), kinds_(std::move(kinds)) {
  if (names_.size() != kinds_.size())
    fail(ErrorKind::Schema, "schema has " + std::to_string(names_.size()) + " names but " +
                                std::to_string(kinds_.size()) + " kinds");
  std::unordered_set<std::string_view> seen;
  for (const auto& n : names_) {
    if (n.empty()) fail(ErrorKind::Schema, "empty feature name");
    if (n == "label") fail(ErrorKind::Schema, "'label' is reserved and cannot name a feature");
    if (n.find_first_of(",\"\r\n") != std::string::npos)
      fail(ErrorKind::Schema, "feature name '" + n + "' contains a delimiter character");
    if (!seen.insert(n).second) fail(ErrorKind::Schema, "duplicate feature name '" + n + "'");
  }
}

FeatureSchema FeatureSchema::from_names(std::vector<std::string> names) {
  std::vector<FeatureKind> kinds;
  kinds.reserve(names.size());
  for (const auto& n : names) kinds.push_back(infer_feature_kind(n));
  return FeatureSchema(std::move(names), std::move(kinds));
}

FeatureSchema FeatureSchema::default_profile() {
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;
  char buf[32];
  for (int i = 0; i < 235; ++i) {
    std::snprintf(buf, sizeof(buf), "op:%03d", i);
    names.emplace_back(buf);
    kinds.push_back(FeatureKind::OpcodeCount);
  }
  for (int i = 0; i < 426; ++i) {
    std::snprintf(buf, sizeof(buf), "api:%03d", i);
    names.emplace_back(buf);
    kinds.push_back(FeatureKind::ApiFlag);
  }
  for (int i = 0; i < 86; ++i) {
    std::snprintf(buf, sizeof(buf), "perm:%02d", i);
    names.emplace_back(buf);
    kinds.push_back(FeatureKind::PermissionFlag);
  }
  return FeatureSchema(std::move(names), std::move(kinds));
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

ordered_json FeatureSchema::to_json() const {
  ordered_json arr = ordered_json::array();
  for (std::size_t i = 0; i < names_.size(); ++i)
    arr.push_back({{"name", names_[i]}, {"kind", std::string(dwfs::to_string(kinds_[i]))}});
  return arr;
}

FeatureSchema FeatureSchema::from_json(const json& j) {
  if (!j.is_array()) fail(ErrorKind::Schema, "schema must be a JSON array");
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;
  for (const auto& e : j) {
    if (e.is_string()) {
      names.push_back(e.get<std::string>());
      kinds.push_back(infer_feature_kind(names.back()));
    } else if (e.is_object() && e.contains("name")) {
      names.push_back(e.at("name").get<std::string>());
      kinds.push_back(e.contains("kind") ? parse_feature_kind(e.at("kind").get<std::string>())
                                         : infer_feature_kind(names.back()));
    } else {
      fail(ErrorKind::Schema, "schema entries must be names or {name, kind} objects");
    }
  }
  return FeatureSchema(std::move(names), std::move(kinds));
}

FamilyLabelMap::FamilyLabelMap(std::vector<std::string> names) : names_(std::move(names)) {
  std::unordered_set<std::string_view> seen;
  for (const auto& n : names_)
    if (!seen.insert(n).second) fail(ErrorKind::Schema, "duplicate family name '" + n + "'");
}

FamilyLabelMap FamilyLabelMap::numbered(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) names.push_back("family" + std::to_string(i));
  return FamilyLabelMap(std::move(names));
}

ordered_json FamilyLabelMap::to_json() const {
  ordered_json obj = ordered_json::object();
  for (std::size_t i = 0; i < names_.size(); ++i) obj[std::to_string(i)] = names_[i];
  return obj;
}

FamilyLabelMap FamilyLabelMap::from_json(const json& j) {
  if (j.is_array()) return FamilyLabelMap(j.get<std::vector<std::string>>());
  if (!j.is_object()) fail(ErrorKind::Schema, "families must be an object or array");
  std::vector<std::string> names(j.size());
  std::vector<bool> filled(j.size(), false);
  for (const auto& [key, value] : j.items()) {
    std::size_t id = 0;
    auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
    if (ec != std::errc{} || ptr != key.data() + key.size() || id >= names.size() || filled[id])
      fail(ErrorKind::Schema, "family ids must be dense 0..C-1; offending key '" + key + "'");
    names[id] = value.get<std::string>();
    filled[id] = true;
  }
  return FamilyLabelMap(std::move(names));
}

std::size_t LabeledFeatureDataset::label_count() const {
  int mx = -1;
  for (int y : labels) mx = std::max(mx, y);
  return static_cast<std::size_t>(mx + 1);
}

LabeledFeatureDataset LabeledFeatureDataset::select_rows(std::span<const std::size_t> indices) const {
  LabeledFeatureDataset out;
  out.schema = schema;
  out.condition = condition;
  out.rows = indices.size();
  out.values.reserve(indices.size() * cols());
  out.labels.reserve(indices.size());
  for (std::size_t r : indices) {
    if (r >= rows) fail(ErrorKind::Argument, "row index " + std::to_string(r) + " out of range");
    auto src = row(r);
    out.values.insert(out.values.end(), src.begin(), src.end());
    out.labels.push_back(labels[r]);
  }
  return out;
}

LabeledFeatureDataset LabeledFeatureDataset::select_columns(std::span<const std::size_t> columns) const {
  std::vector<std::string> names;
  std::vector<FeatureKind> kinds;
  for (std::size_t c : columns) {
    if (c >= cols()) fail(ErrorKind::Argument, "column index " + std::to_string(c) + " out of range");
    names.push_back(schema.name(c));
    kinds.push_back(schema.kind(c));
  }
  LabeledFeatureDataset out;
  out.schema = FeatureSchema(std::move(names), std::move(kinds));
  out.condition = condition;
  out.rows = rows;
  out.labels = labels;
  out.values.reserve(rows * columns.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c : columns) out.values.push_back(at(r, c));
  return out;
}

std::string ValidationReport::summary(std::size_t max_lines) const {
  std::ostringstream ss;
  std::size_t shown = 0;
  for (const auto& f : findings) {
    if (shown++ == max_lines) {
      ss << "... and " << (findings.size() - max_lines) << " more\n";
      break;
    }
    ss << f.code;
    if (f.row) ss << " row=" << *f.row;
    if (f.col) ss << " col=" << *f.col;
    ss << ": " << f.message << "\n";
  }
  return ss.str();
}

ValidationReport validate_dataset(const LabeledFeatureDataset& ds, const FamilyLabelMap* families) {
  ValidationReport report;
  const std::size_t d = ds.cols();
  if (ds.values.size() != ds.rows * d) {
    report.findings.push_back({std::nullopt, std::nullopt, "shape",
                               "matrix has " + std::to_string(ds.values.size()) + " cells, expected " +
                                   std::to_string(ds.rows) + "x" + std::to_string(d)});
    return report;
  }
  if (ds.labels.size() != ds.rows)
    report.findings.push_back({std::nullopt, std::nullopt, "shape",
                               std::to_string(ds.labels.size()) + " labels for " + std::to_string(ds.rows) +
                                   " rows"});
  for (std::size_t r = 0; r < ds.rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double v = ds.at(r, c);
      const FeatureKind kind = ds.schema.kind(c);
      if (!std::isfinite(v)) {
        report.findings.push_back({r, c, "non-finite", "value is not finite"});
      } else if (v < 0.0) {
        report.findings.push_back({r, c, "negative", "value " + format_double(v) + " is negative"});
      } else if (is_flag(kind) && v != 0.0 && v != 1.0) {
        report.findings.push_back({r, c, "flag-not-binary",
                                   std::string(to_string(kind)) + " column '" + ds.schema.name(c) +
                                       "' holds " + format_double(v) + ", expected 0 or 1"});
      }
    }
  }
  for (std::size_t r = 0; r < std::min(ds.rows, ds.labels.size()); ++r) {
    const int y = ds.labels[r];
    const bool bad = y < 0 || (families != nullptr && !families->contains(y));
    if (bad)
      report.findings.push_back({r, std::nullopt, "label-out-of-range",
                                 "label " + std::to_string(y) + " is not a known family id"});
  }
  return report;
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

LabeledFeatureDataset parse_feature_csv(std::string_view text, const FeatureSchema* schema,
                                        const FamilyLabelMap* families, std::string condition) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      std::string_view line = text.substr(start, pos - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      start = pos + 1;
    }
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) fail(ErrorKind::Schema, "feature CSV has no header row");

  auto header = split_cells(lines[0]);
  if (header.size() < 1 || trim(header.back()) != "label")
    fail(ErrorKind::Schema, "feature CSV header must end with a 'label' column");
  std::vector<std::string> names;
  for (std::size_t i = 0; i + 1 < header.size(); ++i) names.emplace_back(trim(header[i]));

  LabeledFeatureDataset ds;
  if (schema != nullptr) {
    if (names != schema->names())
      fail(ErrorKind::Schema, "CSV header does not match the manifest schema (" + std::to_string(names.size()) +
                                  " columns vs " + std::to_string(schema->dimension()) + ")");
    ds.schema = *schema;
  } else {
    ds.schema = FeatureSchema::from_names(std::move(names));
  }
  ds.condition = std::move(condition);
  const std::size_t d = ds.schema.dimension();

  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t r = li - 1;
    auto cells = split_cells(lines[li]);
    if (cells.size() != d + 1)
      fail(ErrorKind::Parse, "row " + std::to_string(r) + " (line " + std::to_string(li + 1) + ") has " +
                                 std::to_string(cells.size()) + " cells, expected " + std::to_string(d + 1));
    for (std::size_t c = 0; c < d; ++c) {
      const std::string_view cell = trim(cells[c]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size())
        fail(ErrorKind::Parse, "non-numeric cell '" + std::string(cell) + "' at row " + std::to_string(r) +
                                   ", col " + std::to_string(c) + " ('" + ds.schema.name(c) + "')");
      ds.values.push_back(v);
    }
    const std::string_view lab = trim(cells[d]);
    int y = 0;
    auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), y);
    if (lab.empty() || ec != std::errc{} || ptr != lab.data() + lab.size())
      fail(ErrorKind::Parse, "non-integer label '" + std::string(lab) + "' at row " + std::to_string(r) +
                                 ", col " + std::to_string(d));
    ds.labels.push_back(y);
    ++ds.rows;
  }

  const ValidationReport report = validate_dataset(ds, families);
  if (!report.ok()) fail(ErrorKind::Validation, "dataset failed validation:\n" + report.summary());
  return ds;
}

LabeledFeatureDataset load_feature_dataset(const std::filesystem::path& path, const FeatureSchema* schema,
                                           const FamilyLabelMap* families, std::string condition) {
  const std::string text = read_text_file(path);
  try {
    return parse_feature_csv(text, schema, families, std::move(condition));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string format_feature_csv(const LabeledFeatureDataset& ds) {
  std::string out;
  for (std::size_t c = 0; c < ds.cols(); ++c) {
    out += ds.schema.name(c);
    out += ',';
  }
  out += "label\n";
  for (std::size_t r = 0; r < ds.rows; ++r) {
    for (std::size_t c = 0; c < ds.cols(); ++c) {
      out += format_double(ds.at(r, c));
      out += ',';
    }
    out += std::to_string(ds.labels[r]);
    out += '\n';
  }
  return out;
}

void save_feature_dataset(const LabeledFeatureDataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, format_feature_csv(ds));
}

SplitIndices split_indices(std::span<const int> labels, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    fail(ErrorKind::Argument, "train_fraction must lie in (0, 1)");
  const std::size_t n = labels.size();
  if (n < 2) fail(ErrorKind::Validation, "split needs at least 2 rows, got " + std::to_string(n));

  auto take = [&](std::size_t count) {
    const auto k = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(count)));
    return std::clamp<std::size_t>(k, 1, count - 1);
  };

  SplitIndices out;
  if (!spec.stratified) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(spec.seed, "split"));
    rng.shuffle(idx);
    const std::size_t k = take(n);
    out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  } else {
    std::set<int> classes(labels.begin(), labels.end());
    for (int c : classes) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == c) members.push_back(i);
      if (members.size() < 2)
        fail(ErrorKind::Validation, "stratified split needs at least 2 rows of class " + std::to_string(c) +
                                        ", found " + std::to_string(members.size()));
      Rng rng(derive_seed(derive_seed(spec.seed, "split"), static_cast<std::uint64_t>(c)));
      rng.shuffle(members);
      const std::size_t k = take(members.size());
      out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
      out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(k), members.end());
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<LabeledFeatureDataset, LabeledFeatureDataset> split_dataset(const LabeledFeatureDataset& ds,
                                                                      const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds.labels, spec);
  return {ds.select_rows(idx.train), ds.select_rows(idx.test)};
}

std::optional<std::filesystem::path> CorpusManifest::condition_path(std::string_view condition) const {
  for (const auto& [name, p] : conditions)
    if (name == condition) return p.is_absolute() ? p : base_dir / p;
  return std::nullopt;
}

std::optional<std::filesystem::path> CorpusManifest::graph_dir(std::string_view condition) const {
  for (const auto& [name, p] : graphs)
    if (name == condition) return p.is_absolute() ? p : base_dir / p;
  return std::nullopt;
}

LabeledFeatureDataset CorpusManifest::load_condition(std::string_view condition) const {
  auto p = condition_path(condition);
  if (!p) fail(ErrorKind::Validation, "manifest has no condition '" + std::string(condition) + "'");
  return load_feature_dataset(*p, &schema, &families, std::string(condition));
}

ordered_json CorpusManifest::to_json() const {
  ordered_json j;
  j["schema"] = schema.to_json();
  j["families"] = families.to_json();
  ordered_json conds = ordered_json::object();
  for (const auto& [name, p] : conditions) conds[name] = p.generic_string();
  j["conditions"] = conds;
  if (!graphs.empty()) {
    ordered_json g = ordered_json::object();
    for (const auto& [name, p] : graphs) g[name] = p.generic_string();
    j["graphs"] = g;
  }
  j["paired"] = paired;
  return j;
}

CorpusManifest CorpusManifest::from_json(const ordered_json& j, std::filesystem::path base_dir) {
  CorpusManifest m;
  m.base_dir = std::move(base_dir);
  if (!j.contains("schema") || !j.contains("conditions"))
    fail(ErrorKind::Schema, "manifest requires 'schema' and 'conditions'");
  m.schema = FeatureSchema::from_json(json(j.at("schema")));
  if (j.contains("families")) m.families = FamilyLabelMap::from_json(json(j.at("families")));
  for (const auto& [name, p] : j.at("conditions").items())
    m.conditions.emplace_back(name, std::filesystem::path(p.get<std::string>()));
  if (j.contains("graphs"))
    for (const auto& [name, p] : j.at("graphs").items())
      m.graphs.emplace_back(name, std::filesystem::path(p.get<std::string>()));
  m.paired = j.value("paired", false);
  return m;
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  // ordered_json keeps the condition order as written.
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  try {
    return from_json(j, path.parent_path());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, path.string() + ": " + e.what());
  }
}

}  // namespace dwfs
