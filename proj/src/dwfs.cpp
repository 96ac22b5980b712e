#include "dwfs/dwfs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dwfs/common.hpp"
#include "dwfs/strategy.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

void DwfsConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) fail(ErrorKind::Argument, "beta must lie in [0, 1]");
  if (!(theta_quantile >= 0.0 && theta_quantile <= 1.0))
    fail(ErrorKind::Argument, "theta_quantile must lie in [0, 1]");
  if (theta && std::isnan(*theta)) fail(ErrorKind::Argument, "theta must not be NaN");
}

ordered_json DwfsConfig::to_json() const {
  ordered_json j;
  j["beta"] = beta;
  j["theta"] = theta ? json(*theta) : json(nullptr);
  j["theta_quantile"] = theta_quantile;
  j["alpha_bar_source"] = alpha_bar_source == AlphaBarSource::Normalized ? "normalized" : "raw";
  j["forest"] = forest.to_json();
  j["eval_split"] = {{"train_fraction", eval_split.train_fraction},
                     {"seed", eval_split.seed},
                     {"stratified", eval_split.stratified}};
  return j;
}

DwfsConfig DwfsConfig::from_json(const json& j, DwfsConfig c) {
  if (j.contains("beta")) c.beta = j.at("beta").get<double>();
  if (j.contains("theta"))
    c.theta = j.at("theta").is_null() ? std::nullopt : std::optional<double>(j.at("theta").get<double>());
  if (j.contains("theta_quantile")) c.theta_quantile = j.at("theta_quantile").get<double>();
  if (j.contains("alpha_bar_source")) {
    const auto s = j.at("alpha_bar_source").get<std::string>();
    if (s == "normalized") c.alpha_bar_source = AlphaBarSource::Normalized;
    else if (s == "raw") c.alpha_bar_source = AlphaBarSource::Raw;
    else fail(ErrorKind::Argument, "alpha_bar_source must be 'normalized' or 'raw'");
  }
  if (j.contains("forest")) c.forest = ForestConfig::from_json(j.at("forest"), c.forest);
  if (j.contains("eval_split")) {
    const auto& s = j.at("eval_split");
    c.eval_split.train_fraction = s.value("train_fraction", c.eval_split.train_fraction);
    c.eval_split.seed = s.value("seed", c.eval_split.seed);
    c.eval_split.stratified = s.value("stratified", c.eval_split.stratified);
  }
  c.validate();
  return c;
}

double impact_factor(double acc_unobf, double acc_obf) {
  if (acc_unobf == 0.0) fail(ErrorKind::Numeric, "impact factor undefined: unobfuscated accuracy is 0");
  return (acc_unobf - acc_obf) / acc_unobf;
}

std::vector<double> normalize_impacts(std::span<const double> alphas) {
  if (alphas.empty()) fail(ErrorKind::Argument, "normalize_impacts needs at least one impact factor");
  std::vector<double> out(alphas.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    out[j] = alphas[j] > 0.0 ? alphas[j] : 0.0;
    sum += out[j];
  }
  if (sum > 0.0) {
    for (double& a : out) a /= sum;
  } else {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(alphas.size()));
  }
  return out;
}

std::vector<double> stability_delta(std::span<const double> importances,
                                    std::span<const std::vector<double>> obfuscated_importances,
                                    std::span<const double> alphas) {
  if (obfuscated_importances.size() != alphas.size())
    fail(ErrorKind::Argument, "stability_delta: " + std::to_string(obfuscated_importances.size()) +
                                  " importance vectors but " + std::to_string(alphas.size()) + " impact factors");
  std::vector<double> delta(importances.size(), 0.0);
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    const auto& obf = obfuscated_importances[j];
    if (obf.size() != importances.size())
      fail(ErrorKind::Argument, "stability_delta: length mismatch (" + std::to_string(obf.size()) + " vs " +
                                    std::to_string(importances.size()) + ")");
    for (std::size_t i = 0; i < importances.size(); ++i)
      delta[i] += alphas[j] * std::abs(importances[i] - obf[i]);
  }
  return delta;
}

double mean_impact(std::span<const double> alphas) {
  if (alphas.empty()) fail(ErrorKind::Argument, "mean_impact needs at least one impact factor");
  double sum = 0.0;
  for (double a : alphas) sum += a;
  return sum / static_cast<double>(alphas.size());
}

Weights weights(double beta, double alpha_bar) {
  const double w2 = beta * alpha_bar;
  return {1.0 - w2, w2};
}

std::vector<double> composite_scores(std::span<const double> importances, std::span<const double> delta,
                                     double w1, double w2) {
  if (importances.size() != delta.size())
    fail(ErrorKind::Argument, "composite_scores: length mismatch (" + std::to_string(importances.size()) +
                                  " vs " + std::to_string(delta.size()) + ")");
  std::vector<double> s(importances.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = w1 * importances[i] - w2 * delta[i];
  return s;
}

std::vector<std::size_t> select_features(std::span<const double> scores, double theta) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > theta) out.push_back(i);
  return out;
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorKind::Argument, "quantile of an empty vector");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double h = (static_cast<double>(s.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

ImportanceProfile profile_condition(const LabeledFeatureDataset& ds, const ForestConfig& forest,
                                    const SplitSpec& split, std::size_t n_classes) {
  auto [train, test] = split_dataset(ds, split);
  const ForestModel model = train_forest(train, forest, n_classes);
  ImportanceProfile p = feature_importances(model);
  p.accuracy = evaluate_accuracy(model, test);
  return p;
}

DwfsResult combine_profiles(const FeatureSchema& schema, const ImportanceProfile& unobfuscated,
                            std::vector<StrategyImpact> per_strategy, const DwfsConfig& cfg) {
  cfg.validate();
  if (per_strategy.empty()) fail(ErrorKind::Validation, "DWFS needs at least one obfuscated condition");

  DwfsResult r;
  r.schema = schema;
  r.unobfuscated = unobfuscated;

  std::vector<double> alpha_raw;
  for (auto& s : per_strategy) {
    s.alpha_raw = impact_factor(unobfuscated.accuracy, s.profile.accuracy);
    alpha_raw.push_back(s.alpha_raw);
  }
  const std::vector<double> alpha = normalize_impacts(alpha_raw);
  std::vector<std::vector<double>> obf;
  for (std::size_t j = 0; j < per_strategy.size(); ++j) {
    per_strategy[j].alpha_norm = alpha[j];
    obf.push_back(per_strategy[j].profile.importances);
  }
  r.delta_importance = stability_delta(unobfuscated.importances, obf, alpha);

  if (cfg.alpha_bar_source == AlphaBarSource::Normalized) {
    r.alpha_bar = mean_impact(alpha);
  } else {
    r.alpha_bar = std::clamp(mean_impact(alpha_raw), 0.0, 1.0);
  }
  const Weights w = weights(cfg.beta, r.alpha_bar);
  r.w1 = w.importance;
  r.w2 = w.stability;
  r.scores = composite_scores(unobfuscated.importances, r.delta_importance, r.w1, r.w2);
  r.theta = cfg.theta ? *cfg.theta : quantile(r.scores, cfg.theta_quantile);
  r.selected = select_features(r.scores, r.theta);
  r.per_strategy = std::move(per_strategy);
  return r;
}

std::string dataset_checksum(const LabeledFeatureDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (double v : ds.values) mix(&v, sizeof v);
  for (int y : ds.labels) mix(&y, sizeof y);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DwfsResult run_dwfs(const DwfsCorpus& corpus, const DwfsConfig& cfg) {
  cfg.validate();
  if (corpus.obfuscated.empty()) fail(ErrorKind::Validation, "DWFS needs at least one obfuscated condition");
  std::size_t n_classes = std::max(corpus.n_classes, corpus.unobfuscated.label_count());
  for (const auto& ds : corpus.obfuscated) {
    if (!(ds.schema == corpus.unobfuscated.schema))
      fail(ErrorKind::Schema, "condition '" + ds.condition + "' does not share the unobfuscated schema");
    n_classes = std::max(n_classes, ds.label_count());
  }

  const std::size_t m = corpus.obfuscated.size();
  std::vector<ImportanceProfile> profiles(m + 1);
  parallel_for(m + 1, [&](std::size_t k) {
    const LabeledFeatureDataset& ds = k == 0 ? corpus.unobfuscated : corpus.obfuscated[k - 1];
    profiles[k] = profile_condition(ds, cfg.forest, cfg.eval_split, n_classes);
  });

  std::vector<StrategyImpact> per;
  for (std::size_t j = 0; j < m; ++j) per.push_back({corpus.obfuscated[j].condition, profiles[j + 1], 0.0, 0.0});
  DwfsResult r = combine_profiles(corpus.unobfuscated.schema, profiles[0], std::move(per), cfg);

  ordered_json conds = ordered_json::array();
  auto describe = [&](const LabeledFeatureDataset& ds, double acc) {
    conds.push_back({{"condition", ds.condition},
                     {"rows", ds.rows},
                     {"checksum", dataset_checksum(ds)},
                     {"accuracy", acc}});
  };
  describe(corpus.unobfuscated, profiles[0].accuracy);
  for (std::size_t j = 0; j < m; ++j) describe(corpus.obfuscated[j], profiles[j + 1].accuracy);
  r.manifest = ordered_json::object();
  r.manifest["config"] = cfg.to_json();
  r.manifest["n_classes"] = n_classes;
  r.manifest["strategies"] = m;
  r.manifest["conditions"] = std::move(conds);
  return r;
}

DwfsResult run_dwfs(const CorpusManifest& manifest, const DwfsConfig& cfg) {
  if (!manifest.condition_path(kUnobfuscated))
    fail(ErrorKind::Validation, "corpus manifest has no 'unobfuscated' condition");
  DwfsCorpus corpus;
  corpus.unobfuscated = manifest.load_condition(kUnobfuscated);
  corpus.n_classes = manifest.families.size();
  for (const auto& [name, path] : manifest.conditions) {
    if (name == kUnobfuscated) continue;
    corpus.obfuscated.push_back(manifest.load_condition(name));
  }
  return run_dwfs(corpus, cfg);
}

namespace {

ordered_json profile_json(const ImportanceProfile& p) {
  return {{"importances", p.importances}, {"accuracy", p.accuracy}};
}

ImportanceProfile profile_from(const ordered_json& j) {
  return {j.at("importances").get<std::vector<double>>(), j.at("accuracy").get<double>()};
}

}  // namespace

ordered_json DwfsResult::to_json() const {
  ordered_json j;
  j["format"] = "dwfs-result";
  j["version"] = 1;
  j["schema"] = schema.to_json();
  j["unobfuscated"] = profile_json(unobfuscated);
  ordered_json per = ordered_json::array();
  for (const auto& s : per_strategy) {
    ordered_json e = profile_json(s.profile);
    e["condition"] = s.condition;
    e["alpha_raw"] = s.alpha_raw;
    e["alpha_norm"] = s.alpha_norm;
    per.push_back(std::move(e));
  }
  j["per_strategy"] = std::move(per);
  j["delta_importance"] = delta_importance;
  j["alpha_bar"] = alpha_bar;
  j["w1"] = w1;
  j["w2"] = w2;
  j["theta"] = theta;
  j["scores"] = scores;
  j["selected"] = selected;
  std::vector<std::string> names;
  for (std::size_t i : selected) names.push_back(schema.name(i));
  j["selected_names"] = names;
  j["manifest"] = manifest;
  return j;
}

DwfsResult DwfsResult::from_json(const ordered_json& j) {
  if (j.value("format", "") != "dwfs-result" || j.value("version", 0) != 1)
    fail(ErrorKind::Schema, "not a version-1 dwfs-result document");
  DwfsResult r;
  r.schema = FeatureSchema::from_json(json(j.at("schema")));
  r.unobfuscated = profile_from(j.at("unobfuscated"));
  for (const auto& e : j.at("per_strategy"))
    r.per_strategy.push_back({e.at("condition").get<std::string>(), profile_from(e), e.at("alpha_raw").get<double>(),
                              e.at("alpha_norm").get<double>()});
  r.delta_importance = j.at("delta_importance").get<std::vector<double>>();
  r.alpha_bar = j.at("alpha_bar").get<double>();
  r.w1 = j.at("w1").get<double>();
  r.w2 = j.at("w2").get<double>();
  // JSON has no infinities; an unbounded threshold is written as null.
  r.theta = j.at("theta").is_null() ? -std::numeric_limits<double>::infinity() : j.at("theta").get<double>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.selected = j.at("selected").get<std::vector<std::size_t>>();
  if (j.contains("manifest")) r.manifest = j.at("manifest");
  for (std::size_t i : r.selected)
    if (i >= r.schema.dimension()) fail(ErrorKind::Schema, "selected index " + std::to_string(i) + " out of range");
  return r;
}

}  // namespace dwfs
