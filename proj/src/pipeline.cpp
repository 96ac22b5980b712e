#include "dwfs/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "dwfs/common.hpp"

namespace dwfs {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string row_file(std::size_t r) {
  char name[32];
  std::snprintf(name, sizeof name, "%05zu.json", r);
  return name;
}

ordered_json parse_json_file(const fs::path& path) {
  try {
    return ordered_json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory '" + dir.string() + "': " + ec.message());
}

void require_file(const fs::path& path, const std::string& produced_by) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "missing '" + path.string() + "' (run `dwfs " + produced_by + "` first)");
}

// Moves a fully written staging directory over `target`.
void replace_dir(const fs::path& staging, const fs::path& target) {
  try {
    if (fs::exists(target)) fs::remove_all(target);
    fs::rename(staging, target);
  } catch (const fs::filesystem_error& e) {
    fail(ErrorKind::Io, std::string("replacing output directory: ") + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() || base.empty() ? p : base / p; }

DwfsResult load_selection(const PipelineConfig& cfg) {
  require_file(cfg.selection_path(), "select");
  return DwfsResult::from_json(parse_json_file(cfg.selection_path()));
}

std::vector<std::string> eval_conditions(const PipelineConfig& cfg, const CorpusManifest& m) {
  std::vector<std::string> out{cfg.train_condition};
  for (const auto& [name, path] : m.conditions) {
    if (name == cfg.train_condition) continue;
    if (!cfg.strategies.empty() &&
        std::find(cfg.strategies.begin(), cfg.strategies.end(), name) == cfg.strategies.end())
      continue;
    out.push_back(name);
  }
  for (const auto& s : cfg.strategies)
    if (!m.condition_path(s)) fail(ErrorKind::Validation, "corpus has no condition '" + s + "'");
  return out;
}

struct FeaturedRows {
  std::vector<FeaturedGraph> graphs;
  std::size_t skipped = 0;
};

// Rows of one condition that have an SBS graph, projected onto `selected`.
FeaturedRows featured_rows(const PipelineConfig& cfg, const std::string& condition, const std::vector<std::size_t>& rows,
                           const std::vector<int>& labels, const std::vector<std::size_t>& selected,
                           const FeatureSchema& schema) {
  const fs::path dir = cfg.sbs_dir() / condition;
  if (!fs::is_directory(dir)) fail(ErrorKind::Io, "missing SBS graphs for '" + condition + "' (run `dwfs sbs` first)");
  std::vector<std::size_t> present;
  for (auto r : rows)
    if (fs::exists(dir / row_file(r))) present.push_back(r);
  FeaturedRows out;
  out.skipped = rows.size() - present.size();
  out.graphs.resize(present.size());
  parallel_for(present.size(), [&](std::size_t i) {
    out.graphs[i] = assign_node_features(load_graph(dir / row_file(present[i])), selected, schema);
    out.graphs[i].label = labels[present[i]];
  });
  return out;
}

}  // namespace

FeatureSource parse_feature_source(const std::string& s) {
  if (s == "dwfs") return FeatureSource::Dwfs;
  if (s == "topk") return FeatureSource::TopK;
  fail(ErrorKind::Validation, "feature source must be 'dwfs' or 'topk', got '" + s + "'");
}

ordered_json sbs_config_to_json(const SbsConfig& c) {
  return {{"hops", c.hops}, {"hop_origin", c.origin == HopOrigin::Sensitive ? "sensitive" : "neighbors"}};
}

SbsConfig sbs_config_from_json(const json& j, SbsConfig c) {
  c.hops = j.value("hops", c.hops);
  if (j.contains("hop_origin")) {
    const auto o = j.at("hop_origin").get<std::string>();
    if (o == "sensitive") c.origin = HopOrigin::Sensitive;
    else if (o == "neighbors") c.origin = HopOrigin::Neighbors;
    else fail(ErrorKind::Validation, "hop_origin must be 'sensitive' or 'neighbors'");
  }
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>(), base_dir);
    if (j.contains("corpus")) c.corpus = resolve(j.at("corpus").get<std::string>(), base_dir);
    if (j.contains("sensitive_apis")) c.sensitive_apis = resolve(j.at("sensitive_apis").get<std::string>(), base_dir);
    if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"), c.generator);
    if (j.contains("dwfs")) c.dwfs = DwfsConfig::from_json(j.at("dwfs"), c.dwfs);
    if (j.contains("sbs")) c.sbs = sbs_config_from_json(j.at("sbs"), c.sbs);
    if (j.contains("gnn")) c.gnn = GnnConfig::from_json(j.at("gnn"), c.gnn);
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("strategies")) c.strategies = j.at("strategies").get<std::vector<std::string>>();
    c.train_condition = j.value("train_condition", c.train_condition);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    if (j.contains("feature_source")) {
      c.feature_source = parse_feature_source(j.at("feature_source").get<std::string>());
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["out"] = out.string();
  if (corpus) j["corpus"] = corpus->string();
  if (sensitive_apis) j["sensitive_apis"] = sensitive_apis->string();
  j["generator"] = generator.to_json();
  j["dwfs"] = dwfs.to_json();
  j["sbs"] = sbs_config_to_json(sbs);
  j["gnn"] = gnn.to_json();
  j["models"] = models;
  j["strategies"] = strategies;
  j["train_condition"] = train_condition;
  j["train_fraction"] = train_fraction;
  j["feature_source"] = feature_source == FeatureSource::Dwfs ? "dwfs" : "topk";
  return j;
}

void PipelineConfig::validate() const {
  generator.validate();
  dwfs.validate();
  gnn.validate();
  for (const auto& m : models) parse_layer_type(m);
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorKind::Validation, "train_fraction must lie in (0, 1)");
  if (train_condition.empty()) fail(ErrorKind::Validation, "train_condition must not be empty");
}

fs::path PipelineConfig::corpus_manifest() const { return corpus ? *corpus : out / "corpus" / "manifest.json"; }

GeneratorConfig PipelineConfig::seeded_generator() const {
  GeneratorConfig g = generator;
  g.seed = derive_seed(seed, "gen");
  return g;
}

DwfsConfig PipelineConfig::seeded_dwfs() const {
  DwfsConfig d = dwfs;
  d.forest.seed = derive_seed(seed, "dwfs-forest");
  d.eval_split.seed = derive_seed(seed, "dwfs-split");
  return d;
}

GnnConfig PipelineConfig::seeded_gnn(const std::string& model) const {
  GnnConfig g = gnn;
  g.layer_type = parse_layer_type(model);
  g.seed = derive_seed(seed, "gnn:" + model);
  return g;
}

SplitSpec PipelineConfig::gnn_split() const { return {train_fraction, derive_seed(seed, "gnn-split"), true}; }

std::string PipelineConfig::model_tag(const std::string& model) const {
  return feature_source == FeatureSource::Dwfs ? model : model + "-topk";
}

std::vector<std::size_t> topk_features(const DwfsResult& r, std::size_t k) {
  const auto& imp = r.unobfuscated.importances;
  std::vector<std::size_t> idx(imp.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> feature_subset(const DwfsResult& r, FeatureSource source) {
  return source == FeatureSource::Dwfs ? r.selected : topk_features(r, r.selected.size());
}

ordered_json selection_summary(const DwfsResult& r) {
  ordered_json j;
  j["selected_count"] = r.selected.size();
  j["dimension"] = r.schema.dimension();
  j["beta"] = r.manifest.contains("config") ? r.manifest["config"].value("beta", 0.0) : 0.0;
  j["theta"] = std::isfinite(r.theta) ? ordered_json(r.theta) : ordered_json();
  j["alpha_bar"] = r.alpha_bar;
  j["w1"] = r.w1;
  j["w2"] = r.w2;
  std::vector<std::string> names;
  for (auto i : r.selected) names.push_back(r.schema.name(i));
  j["selected"] = names;
  ordered_json conds = ordered_json::array();
  conds.push_back({{"condition", std::string(kUnobfuscated)}, {"accuracy", r.unobfuscated.accuracy}});
  for (const auto& s : r.per_strategy)
    conds.push_back({{"condition", s.condition},
                     {"accuracy", s.profile.accuracy},
                     {"alpha_raw", s.alpha_raw},
                     {"alpha_norm", s.alpha_norm}});
  j["conditions"] = std::move(conds);
  return j;
}

ordered_json SbsRunStats::to_json() const {
  ordered_json j = stats.to_json();
  j["skipped"] = skipped;
  j["warnings"] = warnings;
  return j;
}

ordered_json EvalResult::to_json() const {
  ordered_json cs = ordered_json::array();
  for (const auto& c : conditions)
    cs.push_back({{"condition", c.condition},
                  {"samples", c.samples},
                  {"skipped", c.skipped},
                  {"confusion", c.confusion.to_json()},
                  {"metrics", c.metrics.to_json()}});
  return {{"format", "dwfs-eval"}, {"version", 1}, {"model", model}, {"tag", tag}, {"conditions", std::move(cs)}};
}

EvalResult EvalResult::from_json(const ordered_json& j) {
  if (j.value("format", "") != "dwfs-eval") fail(ErrorKind::Schema, "not a dwfs-eval document");
  EvalResult r;
  r.model = j.at("model").get<std::string>();
  r.tag = j.at("tag").get<std::string>();
  for (const auto& c : j.at("conditions"))
    r.conditions.push_back({c.at("condition").get<std::string>(), c.at("samples").get<std::size_t>(),
                            c.at("skipped").get<std::size_t>(), ConfusionMatrix::from_json(json(c.at("confusion"))),
                            MetricsTable::from_json(json(c.at("metrics")))});
  return r;
}

void cmd_gen(const PipelineConfig& cfg) {
  const auto corpus = generate_corpus(cfg.seeded_generator());
  write_corpus(corpus, cfg.corpus_manifest().parent_path());
}

DwfsResult cmd_select(const PipelineConfig& cfg) {
  require_file(cfg.corpus_manifest(), "gen");
  const auto manifest = CorpusManifest::load(cfg.corpus_manifest());
  DwfsResult r = run_dwfs(manifest, cfg.seeded_dwfs());
  r.manifest["root_seed"] = cfg.seed;
  ensure_dir(cfg.selection_path().parent_path());
  write_file_atomic(cfg.selection_path(), r.to_json().dump(2) + "\n");
  return r;
}

SbsRunStats cmd_sbs(const PipelineConfig& cfg) {
  require_file(cfg.corpus_manifest(), "gen");
  const auto manifest = CorpusManifest::load(cfg.corpus_manifest());
  std::optional<SensitiveApiList> apis;
  const fs::path default_apis = cfg.corpus_manifest().parent_path() / "sensitive_apis.txt";
  if (cfg.sensitive_apis) apis = SensitiveApiList::load(*cfg.sensitive_apis);
  else if (fs::exists(default_apis)) apis = SensitiveApiList::load(default_apis);

  const fs::path target = cfg.sbs_dir();
  const fs::path staging = target.string() + ".staging";
  std::error_code ec;
  fs::remove_all(staging, ec);
  SbsRunStats out;
  std::vector<GraphSummary> reduced, originals;
  try {
    for (const auto& [cond, rel] : manifest.graphs) {
      const auto dir = *manifest.graph_dir(cond);
      const std::size_t rows = manifest.load_condition(cond).rows;
      ensure_dir(staging / cond);
      std::vector<std::optional<GraphSummary>> red(rows), orig(rows);
      parallel_for(rows, [&](std::size_t r) {
        CallGraph g = load_graph(dir / row_file(r));
        if (apis) g = mark_sensitive(g, *apis);
        if (g.sensitive_count() == 0) return;
        const CallGraph s = extract_sbs(g, cfg.sbs);
        write_file_atomic(staging / cond / row_file(r), s.serialize());
        red[r] = summarize(s);
        orig[r] = summarize(g);
      });
      for (std::size_t r = 0; r < rows; ++r) {
        if (!red[r]) {
          ++out.skipped;
          out.warnings.push_back(cond + "/" + row_file(r) + ": no sensitive API node, sample skipped");
          continue;
        }
        if (cond != cfg.train_condition) continue;
        reduced.push_back(*red[r]);
        originals.push_back(*orig[r]);
      }
    }
    out.stats = graph_stats(reduced, manifest.families, &originals);
    ordered_json j = out.to_json();
    j["condition"] = cfg.train_condition;
    j["sbs"] = sbs_config_to_json(cfg.sbs);
    write_file_atomic(staging / "stats.json", j.dump(2) + "\n");
    write_file_atomic(staging / "stats.md", out.stats.to_markdown());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  replace_dir(staging, target);
  return out;
}

TrainResult cmd_train(const PipelineConfig& cfg, const std::string& model) {
  const auto gnn_cfg = cfg.seeded_gnn(model);
  const DwfsResult sel = load_selection(cfg);
  const auto selected = feature_subset(sel, cfg.feature_source);
  if (selected.empty()) fail(ErrorKind::Validation, "feature selection is empty; nothing to train on");
  require_file(cfg.corpus_manifest(), "gen");
  const auto manifest = CorpusManifest::load(cfg.corpus_manifest());
  const auto ds = manifest.load_condition(cfg.train_condition);
  const auto split = split_indices(ds.labels, cfg.gnn_split());
  auto train = featured_rows(cfg, cfg.train_condition, split.train, ds.labels, selected, manifest.schema);
  auto val = featured_rows(cfg, cfg.train_condition, split.test, ds.labels, selected, manifest.schema);
  if (train.graphs.empty()) fail(ErrorKind::Validation, "no training graphs left after SBS extraction");

  const std::size_t classes = std::max(manifest.families.size(), ds.label_count());
  TrainResult res = train_gnn(gnn_cfg, train.graphs, val.graphs, classes);

  const std::string tag = cfg.model_tag(model);
  ensure_dir(cfg.models_dir());
  save_model(res.model, cfg.models_dir() / (tag + ".json"));
  write_file_atomic(cfg.models_dir() / (tag + ".log.csv"), res.log.to_csv());
  std::vector<std::string> names;
  for (auto i : selected) names.push_back(manifest.schema.name(i));
  ordered_json run;
  run["model"] = model;
  run["tag"] = tag;
  run["root_seed"] = cfg.seed;
  run["feature_source"] = cfg.feature_source == FeatureSource::Dwfs ? "dwfs" : "topk";
  run["selected"] = selected;
  run["feature_names"] = names;
  run["train_condition"] = cfg.train_condition;
  run["split"] = {{"train_fraction", cfg.train_fraction}, {"seed", cfg.gnn_split().seed}};
  run["train_samples"] = train.graphs.size();
  run["train_skipped"] = train.skipped;
  run["gnn"] = gnn_cfg.to_json();
  write_file_atomic(cfg.models_dir() / (tag + ".run.json"), run.dump(2) + "\n");
  return res;
}

EvalResult cmd_eval(const PipelineConfig& cfg, const std::string& model) {
  const std::string tag = cfg.model_tag(model);
  const fs::path ckpt = cfg.models_dir() / (tag + ".json");
  require_file(ckpt, "train");
  const GnnModel net = load_model(ckpt);
  const DwfsResult sel = load_selection(cfg);
  const auto selected = feature_subset(sel, cfg.feature_source);
  if (selected.size() != net.n_features)
    fail(ErrorKind::Validation, "feature dimension mismatch: model '" + tag + "' expects " +
                                    std::to_string(net.n_features) + " features, current selection has " +
                                    std::to_string(selected.size()) + " (retrain after `dwfs select`)");
  require_file(cfg.corpus_manifest(), "gen");
  const auto manifest = CorpusManifest::load(cfg.corpus_manifest());

  EvalResult out;
  out.model = model;
  out.tag = tag;
  for (const auto& cond : eval_conditions(cfg, manifest)) {
    const auto ds = manifest.load_condition(cond);
    const auto split = split_indices(ds.labels, cfg.gnn_split());
    auto rows = featured_rows(cfg, cond, split.test, ds.labels, selected, manifest.schema);
    EvalCondition ec;
    ec.condition = cond;
    ec.samples = rows.graphs.size();
    ec.skipped = rows.skipped;
    ec.confusion = evaluate_gnn(net, rows.graphs);
    ec.metrics = family_metrics(ec.confusion, &manifest.families);
    out.conditions.push_back(std::move(ec));
  }
  ensure_dir(cfg.eval_dir());
  write_file_atomic(cfg.eval_dir() / (tag + ".json"), out.to_json().dump(2) + "\n");
  return out;
}

Report cmd_report(const PipelineConfig& cfg) {
  require_file(cfg.corpus_manifest(), "gen");
  const auto manifest = CorpusManifest::load(cfg.corpus_manifest());
  Report r;
  r.families = manifest.families.names();
  r.conditions = eval_conditions(cfg, manifest);
  for (const auto& model : cfg.models) {
    const std::string tag = cfg.model_tag(model);
    r.models.push_back(tag);
    const fs::path p = cfg.eval_dir() / (tag + ".json");
    if (!fs::exists(p)) continue;
    const auto e = EvalResult::from_json(parse_json_file(p));
    for (const auto& c : e.conditions) r.add({tag, c.condition, c.confusion, c.metrics});
  }
  if (fs::exists(cfg.selection_path())) r.selection = selection_summary(load_selection(cfg));
  const fs::path stats = cfg.sbs_dir() / "stats.json";
  if (fs::exists(stats)) r.graph_stats = parse_json_file(stats);
  write_report(r, cfg.report_dir());
  return r;
}

}  // namespace dwfs
