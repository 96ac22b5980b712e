#include "dwfs/obfsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const char* const kSensitivePool[] = {
    "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;",
    "Landroid/telephony/TelephonyManager;->getSubscriberId()Ljava/lang/String;",
    "Landroid/telephony/TelephonyManager;->getLine1Number()Ljava/lang/String;",
    "Landroid/telephony/TelephonyManager;->getSimSerialNumber()Ljava/lang/String;",
    "Landroid/telephony/SmsManager;->sendTextMessage(Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Landroid/app/PendingIntent;Landroid/app/PendingIntent;)V",
    "Landroid/location/LocationManager;->getLastKnownLocation(Ljava/lang/String;)Landroid/location/Location;",
    "Landroid/location/LocationManager;->requestLocationUpdates(Ljava/lang/String;JFLandroid/location/LocationListener;)V",
    "Landroid/net/wifi/WifiManager;->getConnectionInfo()Landroid/net/wifi/WifiInfo;",
    "Landroid/accounts/AccountManager;->getAccounts()[Landroid/accounts/Account;",
    "Landroid/content/ContentResolver;->query(Landroid/net/Uri;[Ljava/lang/String;Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;)Landroid/database/Cursor;",
    "Landroid/media/AudioRecord;->startRecording()V",
    "Landroid/hardware/Camera;->open()Landroid/hardware/Camera;",
    "Landroid/app/ActivityManager;->getRunningTasks(I)Ljava/util/List;",
    "Landroid/content/pm/PackageManager;->getInstalledPackages(I)Ljava/util/List;",
    "Landroid/net/ConnectivityManager;->getActiveNetworkInfo()Landroid/net/NetworkInfo;",
    "Landroid/app/admin/DevicePolicyManager;->lockNow()V",
};
constexpr std::size_t kPoolSize = sizeof(kSensitivePool) / sizeof(kSensitivePool[0]);

double sparse_get(const SparseFeatures& f, std::uint32_t col) {
  for (const auto& [k, v] : f)
    if (k == col) return v;
  return 0.0;
}

void sparse_set(SparseFeatures& f, std::uint32_t col, double value) {
  auto it = std::lower_bound(f.begin(), f.end(), col, [](const auto& e, std::uint32_t c) { return e.first < c; });
  if (it != f.end() && it->first == col) {
    if (value == 0.0) f.erase(it);
    else it->second = value;
  } else if (value != 0.0) {
    f.insert(it, {col, value});
  }
}

void sparse_add(SparseFeatures& f, std::uint32_t col, double delta) { sparse_set(f, col, sparse_get(f, col) + delta); }

bool is_framework(const std::string& sig) { return sig.starts_with("Landroid/") || sig.starts_with("Ljava/"); }

/// Removes a column from every node and returns the nodes that held it.
std::vector<std::uint32_t> clear_column(CallGraph& g, std::uint32_t col) {
  std::vector<std::uint32_t> holders;
  for (std::uint32_t i = 0; i < g.nodes.size(); ++i) {
    if (sparse_get(g.nodes[i].features, col) != 0.0) holders.push_back(i);
    sparse_set(g.nodes[i].features, col, 0.0);
  }
  return holders;
}

void scatter_units(CallGraph& g, std::uint32_t col, std::uint64_t units, const std::vector<std::uint32_t>& onto, Rng& rng) {
  if (onto.empty() || units == 0) return;
  std::vector<std::uint64_t> per(onto.size(), 0);
  for (std::uint64_t u = 0; u < units; ++u) ++per[rng.index(onto.size())];
  for (std::size_t i = 0; i < onto.size(); ++i)
    if (per[i]) sparse_add(g.nodes[onto[i]].features, col, static_cast<double>(per[i]));
}

std::vector<std::uint32_t> non_sensitive_nodes(const CallGraph& g) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < g.nodes.size(); ++i)
    if (!g.nodes[i].sensitive) out.push_back(i);
  return out;
}

std::uint32_t add_node(CallGraph& g, std::string sig) {
  std::int64_t next = 0;
  for (const auto& n : g.nodes) next = std::max(next, n.id + 1);
  g.nodes.push_back({next, std::move(sig), false, {}});
  return static_cast<std::uint32_t>(g.nodes.size() - 1);
}

std::string random_name(Rng& rng, std::size_t len) {
  static const char* alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.index(26)];
  return s;
}

std::vector<std::size_t> hit_targets(const TransformParams& p, Rng& rng) {
  std::vector<std::size_t> hit;
  for (std::size_t c : p.targets)
    if (rng.bernoulli(p.corruption)) hit.push_back(c);
  return hit;
}

}  // namespace

void TransformParams::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Argument, std::string(name) + " must lie in [0, 1]");
  };
  unit(corruption, "corruption");
  unit(rewire_fraction, "rewire_fraction");
  unit(junk_fraction, "junk_fraction");
  unit(permission_noise, "permission_noise");
  if (!(resample_mean >= 0.0 && resample_mean < 1e6)) fail(ErrorKind::Argument, "resample_mean out of range");
}

ordered_json TransformParams::to_json() const {
  ordered_json j;
  j["targets"] = targets;
  j["corruption"] = corruption;
  j["rewire_fraction"] = rewire_fraction;
  j["junk_fraction"] = junk_fraction;
  j["junk_nodes"] = junk_nodes ? json(*junk_nodes) : json(nullptr);
  j["permission_noise"] = permission_noise;
  j["resample_mean"] = resample_mean;
  return j;
}

TransformParams TransformParams::from_json(const json& j, TransformParams p) {
  if (j.contains("targets")) p.targets = j.at("targets").get<std::vector<std::size_t>>();
  p.corruption = j.value("corruption", p.corruption);
  p.rewire_fraction = j.value("rewire_fraction", p.rewire_fraction);
  p.junk_fraction = j.value("junk_fraction", p.junk_fraction);
  if (j.contains("junk_nodes"))
    p.junk_nodes = j.at("junk_nodes").is_null() ? std::nullopt
                                                : std::optional<std::size_t>(j.at("junk_nodes").get<std::size_t>());
  p.permission_noise = j.value("permission_noise", p.permission_noise);
  p.resample_mean = j.value("resample_mean", p.resample_mean);
  p.validate();
  return p;
}

std::vector<double> aggregate_features(const CallGraph& g, const FeatureSchema& schema) {
  std::vector<double> x(schema.dimension(), 0.0);
  for (const auto& n : g.nodes)
    for (const auto& [c, v] : n.features) {
      if (c >= x.size()) fail(ErrorKind::Validation, "node feature index " + std::to_string(c) + " outside schema");
      switch (schema.kind(c)) {
        case FeatureKind::OpcodeCount: x[c] += v; break;
        case FeatureKind::ApiFlag: x[c] = std::max(x[c], v); break;
        case FeatureKind::PermissionFlag: break;
      }
    }
  for (const auto& [c, v] : g.app_features) {
    if (c >= x.size()) fail(ErrorKind::Validation, "app feature index " + std::to_string(c) + " outside schema");
    if (schema.kind(c) == FeatureKind::PermissionFlag) x[c] = v;
  }
  return x;
}

Sample apply_obfuscation(const Sample& sample, const FeatureSchema& schema, const ObfuscationTransform& t) {
  t.params.validate();
  for (std::size_t c : t.params.targets)
    if (c >= schema.dimension()) fail(ErrorKind::Argument, "transform target " + std::to_string(c) + " outside schema");
  Rng rng(t.seed);
  CallGraph g = sample.graph;
  const auto& p = t.params;

  auto redraw_opcode = [&](std::uint32_t col, const std::vector<std::uint32_t>& preferred) {
    std::vector<std::uint32_t> onto = preferred;
    if (onto.empty()) onto = non_sensitive_nodes(g);
    scatter_units(g, col, rng.poisson(p.resample_mean), onto, rng);
  };

  switch (t.strategy) {
    case Strategy::Repackaging:
    case Strategy::Reassembly:
    case Strategy::Manifest:
    case Strategy::Alignment: {
      for (std::size_t c = 0; c < schema.dimension(); ++c) {
        if (schema.kind(c) != FeatureKind::PermissionFlag) continue;
        const auto col = static_cast<std::uint32_t>(c);
        if (sparse_get(g.app_features, col) == 0.0 && rng.bernoulli(p.permission_noise))
          sparse_set(g.app_features, col, 1.0);
      }
      break;
    }
    case Strategy::JunkCode: {
      const std::size_t k = p.junk_nodes ? *p.junk_nodes
                                         : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                                        p.junk_fraction * static_cast<double>(g.nodes.size()))));
      const auto callers = non_sensitive_nodes(g);
      std::vector<std::uint32_t> junk;
      for (std::size_t i = 0; i < k; ++i) {
        const std::uint32_t j = add_node(g, "Lobf/Junk" + std::to_string(i) + ";->pad()V");
        junk.push_back(j);
        if (!callers.empty()) g.edges.emplace_back(callers[rng.index(callers.size())], j);
      }
      for (std::size_t c : hit_targets(p, rng)) {
        if (schema.kind(c) != FeatureKind::OpcodeCount) continue;
        const auto col = static_cast<std::uint32_t>(c);
        clear_column(g, col);
        redraw_opcode(col, junk);
      }
      break;
    }
    case Strategy::ControlFlow: {
      std::vector<std::size_t> candidates;
      for (std::size_t e = 0; e < g.edges.size(); ++e)
        if (!g.nodes[g.edges[e].first].sensitive && !g.nodes[g.edges[e].second].sensitive) candidates.push_back(e);
      const auto pool = non_sensitive_nodes(g);
      const auto r = static_cast<std::size_t>(std::llround(p.rewire_fraction * static_cast<double>(candidates.size())));
      rng.shuffle(candidates);
      for (std::size_t i = 0; i < r && pool.size() > 1; ++i) {
        auto& [u, v] = g.edges[candidates[i]];
        std::uint32_t w = pool[rng.index(pool.size())];
        while (w == u) w = pool[rng.index(pool.size())];
        v = w;
      }
      for (std::size_t c : hit_targets(p, rng)) {
        if (schema.kind(c) != FeatureKind::OpcodeCount) continue;
        const auto col = static_cast<std::uint32_t>(c);
        redraw_opcode(col, clear_column(g, col));
      }
      break;
    }
    case Strategy::StringEncrypt: {
      std::vector<std::uint32_t> touched;
      for (std::size_t c : hit_targets(p, rng)) {
        auto h = clear_column(g, static_cast<std::uint32_t>(c));
        touched.insert(touched.end(), h.begin(), h.end());
      }
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      if (touched.empty()) {
        const auto pool = non_sensitive_nodes(g);
        if (!pool.empty()) touched.push_back(pool[rng.index(pool.size())]);
      }
      const std::uint32_t stub = add_node(g, "Lobf/StringCrypt;->decrypt(Ljava/lang/String;)Ljava/lang/String;");
      for (auto u : touched) g.edges.emplace_back(u, stub);
      break;
    }
    case Strategy::Reflection: {
      std::vector<std::size_t> order(g.edges.size());
      for (std::size_t e = 0; e < order.size(); ++e) order[e] = e;
      rng.shuffle(order);
      const auto r = static_cast<std::size_t>(std::llround(p.rewire_fraction * static_cast<double>(order.size())));
      order.resize(r);
      std::sort(order.begin(), order.end());
      std::vector<std::pair<std::uint32_t, std::uint32_t>> kept, added;
      std::size_t next = 0;
      for (std::size_t e = 0; e < g.edges.size(); ++e) {
        if (next < order.size() && order[next] == e) {
          ++next;
          const auto [s, tt] = g.edges[e];
          const std::uint32_t stub =
              add_node(g, "Ljava/lang/reflect/Method;->invoke(Ljava/lang/Object;[Ljava/lang/Object;)Ljava/lang/Object;#" +
                              std::to_string(next));
          added.emplace_back(s, stub);
          added.emplace_back(stub, tt);
        } else {
          kept.push_back(g.edges[e]);
        }
      }
      kept.insert(kept.end(), added.begin(), added.end());
      g.edges = std::move(kept);
      for (std::size_t c : hit_targets(p, rng)) {
        const auto col = static_cast<std::uint32_t>(c);
        if (schema.kind(c) == FeatureKind::ApiFlag) clear_column(g, col);
        else if (schema.kind(c) == FeatureKind::OpcodeCount) redraw_opcode(col, clear_column(g, col));
      }
      break;
    }
    case Strategy::MemberReorder: {
      std::vector<std::uint32_t> perm(g.nodes.size());
      for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm);
      std::vector<std::uint32_t> where(perm.size());
      std::vector<CallNode> nodes;
      for (std::uint32_t k = 0; k < perm.size(); ++k) {
        nodes.push_back(g.nodes[perm[k]]);
        nodes.back().id = k;
        where[perm[k]] = k;
      }
      for (auto& [u, v] : g.edges) {
        u = where[u];
        v = where[v];
      }
      g.nodes = std::move(nodes);
      break;
    }
    case Strategy::IdentifierRename:
    case Strategy::ClassRename: {
      std::map<std::string, std::string> renamed;  // consistent within one app
      for (auto& n : g.nodes) {
        if (is_framework(n.signature)) continue;
        const auto arrow = n.signature.find("->");
        const std::string cls = arrow == std::string::npos ? n.signature : n.signature.substr(0, arrow);
        std::string member = arrow == std::string::npos ? "" : n.signature.substr(arrow + 2);
        if (t.strategy == Strategy::ClassRename) {
          auto [it, fresh] = renamed.try_emplace(cls);
          if (fresh) it->second = "Lo/" + random_name(rng, 3) + ";";
          n.signature = it->second + (arrow == std::string::npos ? "" : "->" + member);
        } else {
          const auto paren = member.find('(');
          const std::string name = member.substr(0, paren);
          auto [it, fresh] = renamed.try_emplace(cls + "->" + name);
          if (fresh) it->second = random_name(rng, 2);
          n.signature = cls + "->" + it->second + (paren == std::string::npos ? "" : member.substr(paren));
        }
      }
      break;
    }
  }
  g.normalize();
  return {aggregate_features(g, schema), std::move(g)};
}

void GeneratorConfig::validate() const {
  if (n_families < 1) fail(ErrorKind::Argument, "n_families must be >= 1");
  if (samples_per_family < 2) fail(ErrorKind::Argument, "samples_per_family must be >= 2");
  if (dimension < 1) fail(ErrorKind::Argument, "dimension must be >= 1");
  for (double f : {fraction_robust, fraction_fragile, fraction_noise})
    if (!(f >= 0.0 && f <= 1.0)) fail(ErrorKind::Argument, "feature fractions must lie in [0, 1]");
  if (std::abs(fraction_robust + fraction_fragile + fraction_noise - 1.0) > 1e-9)
    fail(ErrorKind::Argument, "feature fractions must sum to 1");
  if (min_nodes < 2 || min_nodes > max_nodes) fail(ErrorKind::Argument, "graph size range needs 2 <= min <= max");
  if (!(sensitive_density > 0.0 && sensitive_density < 1.0))
    fail(ErrorKind::Argument, "sensitive_density must lie in (0, 1)");
  if (!(robust_effect >= 0.0 && robust_effect < 1.0) || !(fragile_effect >= 0.0 && fragile_effect < 1.0))
    fail(ErrorKind::Argument, "effects must lie in [0, 1)");
  transform.validate();
}

std::vector<Strategy> GeneratorConfig::effective_strategies() const {
  if (!strategies.empty()) return strategies;
  const auto d = default_strategies();
  return {d.begin(), d.end()};
}

ordered_json GeneratorConfig::to_json() const {
  ordered_json j;
  j["n_families"] = n_families;
  j["samples_per_family"] = samples_per_family;
  j["dimension"] = dimension;
  j["fraction_robust"] = fraction_robust;
  j["fraction_fragile"] = fraction_fragile;
  j["fraction_noise"] = fraction_noise;
  j["graph_size_range"] = {min_nodes, max_nodes};
  j["sensitive_density"] = sensitive_density;
  j["robust_effect"] = robust_effect;
  j["fragile_effect"] = fragile_effect;
  j["seed"] = seed;
  std::vector<std::string> ids;
  for (Strategy s : effective_strategies()) ids.emplace_back(to_string(s));
  j["strategies"] = ids;
  ordered_json t = transform.to_json();
  t.erase("targets");
  j["transform"] = std::move(t);
  return j;
}

GeneratorConfig GeneratorConfig::from_json(const json& j, GeneratorConfig c) {
  c.n_families = j.value("n_families", c.n_families);
  c.samples_per_family = j.value("samples_per_family", c.samples_per_family);
  c.dimension = j.value("dimension", c.dimension);
  c.fraction_robust = j.value("fraction_robust", c.fraction_robust);
  c.fraction_fragile = j.value("fraction_fragile", c.fraction_fragile);
  c.fraction_noise = j.value("fraction_noise", c.fraction_noise);
  if (j.contains("graph_size_range")) {
    const auto r = j.at("graph_size_range").get<std::vector<std::size_t>>();
    if (r.size() != 2) fail(ErrorKind::Argument, "graph_size_range must be [min, max]");
    c.min_nodes = r[0];
    c.max_nodes = r[1];
  }
  c.sensitive_density = j.value("sensitive_density", c.sensitive_density);
  c.robust_effect = j.value("robust_effect", c.robust_effect);
  c.fragile_effect = j.value("fragile_effect", c.fragile_effect);
  c.seed = j.value("seed", c.seed);
  if (j.contains("strategies")) {
    c.strategies.clear();
    for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
  }
  if (j.contains("transform")) c.transform = TransformParams::from_json(j.at("transform"), c.transform);
  c.validate();
  return c;
}

ordered_json GroundTruth::to_json() const {
  return {{"robust", robust}, {"fragile", fragile}, {"noise", noise}};
}

GroundTruth GroundTruth::from_json(const json& j) {
  return {j.at("robust").get<std::vector<std::size_t>>(), j.at("fragile").get<std::vector<std::size_t>>(),
          j.at("noise").get<std::vector<std::size_t>>()};
}

LabeledFeatureDataset GeneratedCorpus::dataset(std::size_t condition) const {
  const auto& cond = conditions.at(condition);
  LabeledFeatureDataset ds;
  ds.schema = schema;
  ds.rows = cond.samples.size();
  ds.values.reserve(ds.rows * schema.dimension());
  for (const auto& s : cond.samples) ds.values.insert(ds.values.end(), s.features.begin(), s.features.end());
  ds.labels = labels;
  ds.condition = cond.name;
  return ds;
}

const GeneratedCondition* GeneratedCorpus::find(std::string_view name) const {
  for (const auto& c : conditions)
    if (c.name == name) return &c;
  return nullptr;
}

namespace {

enum class Role { Robust, Fragile, Noise };

struct ColumnModel {
  Role role = Role::Noise;
  FeatureKind kind = FeatureKind::OpcodeCount;
  double base = 0.0;              // Poisson mean or Bernoulli p for the noise model
  std::vector<double> per_class;  // class-conditional mean / probability
};

Sample generate_sample(const GeneratorConfig& cfg, const std::vector<ColumnModel>& cols, int label, std::size_t row) {
  Rng rng(derive_seed(derive_seed(cfg.seed, "sample"), row));
  const std::size_t n = cfg.min_nodes + rng.index(cfg.max_nodes - cfg.min_nodes + 1);
  std::size_t n_sens = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.sensitive_density * static_cast<double>(n))));
  n_sens = std::min(n_sens, n - 1);
  const std::size_t n_app = n - n_sens;

  // Logical ids: apps 0..n_app-1, sensitive after; placed at shuffled positions.
  std::vector<std::uint32_t> pos(n);
  for (std::uint32_t i = 0; i < n; ++i) pos[i] = i;
  rng.shuffle(pos);

  CallGraph g;
  g.label = label;
  g.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    CallNode& node = g.nodes[pos[i]];
    node.id = static_cast<std::int64_t>(pos[i]);
    if (i < n_app) {
      node.signature = "Lcom/app/pkg/C" + std::to_string(i / 5) + ";->m" + std::to_string(i % 5) + "()V";
    } else {
      // Each family leans on its own slice of the sensitive API pool.
      std::size_t k = rng.index(kPoolSize);
      if (rng.bernoulli(0.7)) k = (k / cfg.n_families) * cfg.n_families + static_cast<std::size_t>(label) % cfg.n_families;
      node.signature = kSensitivePool[k % kPoolSize];
      node.sensitive = true;
    }
  }
  for (std::size_t u = 0; u < n_app; ++u) {
    const std::uint64_t deg = 1 + rng.poisson(1.0);
    for (std::uint64_t e = 0; e < deg && n_app > 1; ++e) {
      std::size_t v = rng.index(n_app - 1);
      if (v >= u) ++v;
      g.edges.emplace_back(pos[u], pos[v]);
    }
  }
  std::vector<std::uint32_t> motif;
  for (std::size_t s = n_app; s < n; ++s) {
    const std::uint64_t callers = 1 + rng.poisson(1.0);
    for (std::uint64_t e = 0; e < callers; ++e) {
      const std::size_t u = rng.index(n_app);
      g.edges.emplace_back(pos[u], pos[s]);
      motif.push_back(pos[u]);
    }
  }
  std::sort(motif.begin(), motif.end());
  motif.erase(std::unique(motif.begin(), motif.end()), motif.end());
  std::vector<std::uint32_t> apps;
  for (std::size_t u = 0; u < n_app; ++u) apps.push_back(pos[u]);

  for (std::size_t c = 0; c < cols.size(); ++c) {
    const ColumnModel& m = cols[c];
    const auto col = static_cast<std::uint32_t>(c);
    const double param = m.role == Role::Noise ? m.base : m.per_class[static_cast<std::size_t>(label)];
    switch (m.kind) {
      case FeatureKind::OpcodeCount:
        // Informative code sits next to sensitive calls; the rest is spread out.
        scatter_units(g, col, rng.poisson(param), m.role == Role::Noise ? apps : motif, rng);
        break;
      case FeatureKind::ApiFlag:
        if (rng.bernoulli(param)) {
          const auto& onto = m.role == Role::Noise ? apps : motif;
          sparse_set(g.nodes[onto[rng.index(onto.size())]].features, col, 1.0);
        }
        break;
      case FeatureKind::PermissionFlag:
        if (rng.bernoulli(param)) sparse_set(g.app_features, col, 1.0);
        break;
    }
  }
  g.normalize();
  return {{}, std::move(g)};
}

}  // namespace

GeneratedCorpus generate_corpus(const GeneratorConfig& cfg) {
  cfg.validate();
  GeneratedCorpus corpus;
  corpus.config = cfg;
  const std::size_t d = cfg.dimension;

  const auto n_robust = static_cast<std::size_t>(std::llround(cfg.fraction_robust * static_cast<double>(d)));
  const auto n_fragile =
      std::min(d - n_robust, static_cast<std::size_t>(std::llround(cfg.fraction_fragile * static_cast<double>(d))));
  const std::size_t n_noise = d - n_robust - n_fragile;

  Rng role_rng(derive_seed(cfg.seed, "roles"));
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  role_rng.shuffle(order);

  std::vector<ColumnModel> cols(d);
  const std::size_t fragile_api = n_fragile / 3;
  const std::size_t noise_perm = n_noise / 3;
  for (std::size_t r = 0; r < d; ++r) {
    ColumnModel& m = cols[order[r]];
    if (r < n_robust) {
      m.role = Role::Robust;
      corpus.truth.robust.push_back(order[r]);
    } else if (r < n_robust + n_fragile) {
      m.role = Role::Fragile;
      m.kind = r - n_robust < fragile_api ? FeatureKind::ApiFlag : FeatureKind::OpcodeCount;
      corpus.truth.fragile.push_back(order[r]);
    } else {
      m.role = Role::Noise;
      m.kind = r - n_robust - n_fragile < noise_perm ? FeatureKind::PermissionFlag : FeatureKind::OpcodeCount;
      corpus.truth.noise.push_back(order[r]);
    }
  }
  std::sort(corpus.truth.robust.begin(), corpus.truth.robust.end());
  std::sort(corpus.truth.fragile.begin(), corpus.truth.fragile.end());
  std::sort(corpus.truth.noise.begin(), corpus.truth.noise.end());

  Rng class_rng(derive_seed(cfg.seed, "classes"));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < d; ++c) {
    ColumnModel& m = cols[c];
    const double effect = m.role == Role::Robust ? cfg.robust_effect : cfg.fragile_effect;
    if (m.kind == FeatureKind::OpcodeCount) m.base = class_rng.uniform(4.0, 12.0);
    else m.base = m.kind == FeatureKind::ApiFlag ? 0.5 : 0.3;
    // Every informative column shifts each family up or down by the same
    // relative amount; with several families at least one differs.
    std::vector<double> sign(cfg.n_families);
    for (auto& s : sign) s = class_rng.bernoulli(0.5) ? 1.0 : -1.0;
    if (cfg.n_families > 1 && std::all_of(sign.begin(), sign.end(), [&](double s) { return s == sign[0]; }))
      sign[class_rng.index(cfg.n_families)] *= -1.0;
    for (std::size_t k = 0; k < cfg.n_families; ++k) {
      if (m.kind == FeatureKind::OpcodeCount) m.per_class.push_back(m.base * (1.0 + effect * sign[k]));
      else m.per_class.push_back(0.5 + 0.5 * effect * sign[k]);
    }
    char buf[32];
    const char* prefix = m.kind == FeatureKind::OpcodeCount ? "op" : m.kind == FeatureKind::ApiFlag ? "api" : "perm";
    std::snprintf(buf, sizeof buf, "%s:%03zu", prefix, c);
    names.emplace_back(buf);
  }
  corpus.schema = FeatureSchema::from_names(names);
  corpus.families = FamilyLabelMap::numbered(cfg.n_families);
  for (std::size_t k = 0; k < kPoolSize; ++k) corpus.sensitive_apis.patterns.emplace_back(kSensitivePool[k]);

  const std::size_t rows = cfg.n_families * cfg.samples_per_family;
  for (std::size_t r = 0; r < rows; ++r) corpus.labels.push_back(static_cast<int>(r / cfg.samples_per_family));

  GeneratedCondition base{std::string(kUnobfuscated), std::vector<Sample>(rows)};
  parallel_for(rows, [&](std::size_t r) {
    base.samples[r] = generate_sample(cfg, cols, corpus.labels[r], r);
    base.samples[r].features = aggregate_features(base.samples[r].graph, corpus.schema);
  });
  corpus.conditions.push_back(std::move(base));

  TransformParams params = cfg.transform;
  params.targets = corpus.truth.fragile;
  for (Strategy s : cfg.effective_strategies()) {
    GeneratedCondition cond{std::string(to_string(s)), std::vector<Sample>(rows)};
    const std::uint64_t stream = derive_seed(cfg.seed, "obf:" + std::string(to_string(s)));
    const auto& src = corpus.conditions.front().samples;
    parallel_for(rows, [&](std::size_t r) {
      cond.samples[r] = apply_obfuscation(src[r], corpus.schema, {s, params, derive_seed(stream, r)});
    });
    corpus.conditions.push_back(std::move(cond));
  }
  return corpus;
}

void write_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path target = dir.lexically_normal();
  const fs::path staging = target.string() + ".staging";
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    fs::create_directories(staging / "graphs");
    CorpusManifest manifest;
    manifest.schema = corpus.schema;
    manifest.families = corpus.families;
    manifest.paired = true;
    for (std::size_t c = 0; c < corpus.conditions.size(); ++c) {
      const auto& cond = corpus.conditions[c];
      const std::string csv = cond.name + ".csv";
      save_feature_dataset(corpus.dataset(c), staging / csv);
      const fs::path gdir = fs::path("graphs") / cond.name;
      fs::create_directories(staging / gdir);
      for (std::size_t r = 0; r < cond.samples.size(); ++r) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.json", r);
        save_graph(cond.samples[r].graph, staging / gdir / name);
      }
      manifest.conditions.emplace_back(cond.name, csv);
      manifest.graphs.emplace_back(cond.name, gdir);
    }
    ordered_json mj = manifest.to_json();
    mj["generator"] = corpus.config.to_json();
    write_file_atomic(staging / "manifest.json", mj.dump(2) + "\n");
    write_file_atomic(staging / "ground_truth.json", corpus.truth.to_json().dump(2) + "\n");
    std::string apis;
    for (const auto& p : corpus.sensitive_apis.patterns) apis += p + "\n";
    write_file_atomic(staging / "sensitive_apis.txt", apis);
    if (fs::exists(target)) fs::remove_all(target);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::rename(staging, target);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(staging, ec);
    fail(ErrorKind::Io, std::string("writing corpus: ") + e.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

}  // namespace dwfs
