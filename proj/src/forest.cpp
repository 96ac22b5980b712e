#include "dwfs/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;

std::size_t FeaturesPerSplit::resolve(std::size_t dimension) const {
  switch (policy) {
    case Policy::All: return dimension;
    case Policy::Fixed: return std::min(k, dimension);
    case Policy::Sqrt:
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(dimension))));
  }
  return dimension;
}

std::string FeaturesPerSplit::to_string() const {
  switch (policy) {
    case Policy::All: return "all";
    case Policy::Fixed: return "fixed:" + std::to_string(k);
    case Policy::Sqrt: return "sqrt";
  }
  return "sqrt";
}

FeaturesPerSplit FeaturesPerSplit::parse(const std::string& text) {
  if (text == "sqrt") return {Policy::Sqrt, 0};
  if (text == "all") return {Policy::All, 0};
  if (text.starts_with("fixed:")) {
    const long k = std::strtol(text.c_str() + 6, nullptr, 10);
    if (k < 1) fail(ErrorKind::Argument, "fixed feature count must be >= 1: '" + text + "'");
    return {Policy::Fixed, static_cast<std::size_t>(k)};
  }
  fail(ErrorKind::Argument, "unknown features_per_split policy '" + text + "'");
}

void ForestConfig::validate(std::size_t dimension) const {
  if (n_trees < 1) fail(ErrorKind::Argument, "n_trees must be >= 1");
  if (min_samples_split < 2) fail(ErrorKind::Argument, "min_samples_split must be >= 2");
  if (features_per_split.policy == FeaturesPerSplit::Policy::Fixed &&
      (features_per_split.k < 1 || features_per_split.k > dimension))
    fail(ErrorKind::Argument, "fixed(k) requires 1 <= k <= " + std::to_string(dimension));
}

ordered_json ForestConfig::to_json() const {
  ordered_json j;
  j["n_trees"] = n_trees;
  j["max_depth"] = max_depth ? json(*max_depth) : json(nullptr);
  j["min_samples_split"] = min_samples_split;
  j["features_per_split"] = features_per_split.to_string();
  j["bootstrap"] = bootstrap;
  j["seed"] = seed;
  return j;
}

ForestConfig ForestConfig::from_json(const json& j, ForestConfig c) {
  if (j.contains("n_trees")) c.n_trees = j.at("n_trees").get<std::size_t>();
  if (j.contains("max_depth"))
    c.max_depth = j.at("max_depth").is_null() ? std::nullopt
                                              : std::optional<std::size_t>(j.at("max_depth").get<std::size_t>());
  if (j.contains("min_samples_split")) c.min_samples_split = j.at("min_samples_split").get<std::size_t>();
  if (j.contains("features_per_split"))
    c.features_per_split = FeaturesPerSplit::parse(j.at("features_per_split").get<std::string>());
  if (j.contains("bootstrap")) c.bootstrap = j.at("bootstrap").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

double gini_impurity(std::span<const double> distribution) {
  double s = 0.0;
  for (double p : distribution) s += p * p;
  return 1.0 - s;
}

namespace {

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

using i128 = __int128;

// Candidate split quality as the exact rational
//   (sum_k L_k^2 / nL) + (sum_k R_k^2 / nR) = num / den,
// which is larger exactly when the weighted child Gini impurity is smaller.
struct SplitScore {
  i128 num = 0;
  i128 den = 1;
  bool better_than(const SplitScore& o) const { return num * o.den > o.num * den; }
};

struct Sample {
  double value;
  int label;
  std::uint32_t weight;
};

class TreeBuilder {
 public:
  TreeBuilder(const LabeledFeatureDataset& data, std::size_t n_classes, const ForestConfig& cfg, Rng& rng)
      : data_(data), n_classes_(n_classes), cfg_(cfg), rng_(rng), k_(cfg.features_per_split.resolve(data.cols())) {}

  DecisionTree build(std::vector<std::size_t> rows, std::vector<std::uint32_t> weights) {
    rows_ = std::move(rows);
    weights_ = std::move(weights);
    std::vector<std::size_t> all(rows_.size());
    std::iota(all.begin(), all.end(), 0);
    grow(std::move(all), 0);
    return std::move(tree_);
  }

 private:
  std::vector<std::size_t> sample_features() {
    const std::size_t d = data_.cols();
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    if (k_ < d) {
      for (std::size_t i = 0; i < k_; ++i) {
        const std::size_t j = i + rng_.index(d - i);
        std::swap(feats[i], feats[j]);
      }
      feats.resize(k_);
      std::sort(feats.begin(), feats.end());
    }
    return feats;
  }

  int grow(std::vector<std::size_t> members, std::size_t depth) {
    std::vector<std::int64_t> counts(n_classes_, 0);
    std::int64_t total = 0;
    for (std::size_t m : members) {
      counts[static_cast<std::size_t>(data_.labels[rows_[m]])] += weights_[m];
      total += weights_[m];
    }
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    {
      TreeNode& node = tree_.nodes.back();
      node.weight = static_cast<double>(total);
      std::vector<double> dist(n_classes_, 0.0);
      for (std::size_t c = 0; c < n_classes_; ++c) dist[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
      node.impurity = gini_impurity(dist);
      node.distribution = std::move(dist);
    }

    const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
    const bool depth_reached = cfg_.max_depth && depth >= *cfg_.max_depth;
    if (pure || depth_reached || total < static_cast<std::int64_t>(cfg_.min_samples_split)) return id;

    i128 parent_sq = 0;
    for (auto c : counts) parent_sq += static_cast<i128>(c) * c;
    // Parent score as a rational: parent_sq / total.
    const SplitScore parent{parent_sq, total};

    bool found = false;
    SplitScore best;
    std::size_t best_feature = 0;
    double best_threshold = 0.0;

    std::vector<Sample> samples(members.size());
    std::vector<std::int64_t> left(n_classes_);
    for (std::size_t f : sample_features()) {
      for (std::size_t i = 0; i < members.size(); ++i) {
        const std::size_t r = rows_[members[i]];
        samples[i] = {data_.at(r, f), data_.labels[r], weights_[members[i]]};
      }
      std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.value < b.value; });
      std::fill(left.begin(), left.end(), 0);
      std::int64_t n_left = 0;
      for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
        left[static_cast<std::size_t>(samples[i].label)] += samples[i].weight;
        n_left += samples[i].weight;
        if (samples[i].value == samples[i + 1].value) continue;
        const std::int64_t n_right = total - n_left;
        i128 a = 0, b = 0;
        for (std::size_t c = 0; c < n_classes_; ++c) {
          const i128 l = left[c];
          const i128 r = counts[c] - left[c];
          a += l * l;
          b += r * r;
        }
        const SplitScore s{a * n_right + b * n_left, static_cast<i128>(n_left) * n_right};
        if (!s.better_than(parent)) continue;
        if (!found || s.better_than(best)) {
          found = true;
          best = s;
          best_feature = f;
          const double lo = samples[i].value, hi = samples[i + 1].value;
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best_threshold = mid;
        }
      }
    }
    if (!found) return id;

    std::vector<std::size_t> lm, rm;
    for (std::size_t m : members)
      (data_.at(rows_[m], best_feature) <= best_threshold ? lm : rm).push_back(m);
    members.clear();
    members.shrink_to_fit();

    const int l = grow(std::move(lm), depth + 1);
    const int r = grow(std::move(rm), depth + 1);
    TreeNode& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = static_cast<int>(best_feature);
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    node.distribution.clear();
    return id;
  }

  const LabeledFeatureDataset& data_;
  std::size_t n_classes_;
  const ForestConfig& cfg_;
  Rng& rng_;
  std::size_t k_;
  std::vector<std::size_t> rows_;
  std::vector<std::uint32_t> weights_;
  DecisionTree tree_;
};

}  // namespace

const TreeNode& DecisionTree::leaf_for(std::span<const double> row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const TreeNode& n = nodes[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i];
}

int DecisionTree::predict(std::span<const double> row) const { return argmax_lowest(leaf_for(row).distribution); }

std::size_t DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  std::size_t best = 0;
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (!nodes[i].is_leaf()) {
      stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
    }
  }
  return best;
}

std::size_t DecisionTree::internal_node_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
}

int ForestModel::predict(std::span<const double> row) const {
  std::vector<double> votes(n_classes, 0.0);
  for (const auto& t : trees) votes[static_cast<std::size_t>(t.predict(row))] += 1.0;
  return argmax_lowest(votes);
}

DecisionTree build_tree(const LabeledFeatureDataset& data, std::span<const std::uint32_t> weights,
                        std::size_t n_classes, const ForestConfig& cfg, Rng& rng) {
  std::vector<std::size_t> rows;
  std::vector<std::uint32_t> w;
  for (std::size_t r = 0; r < data.rows; ++r) {
    if (weights[r] == 0) continue;
    rows.push_back(r);
    w.push_back(weights[r]);
  }
  if (rows.empty()) fail(ErrorKind::Validation, "cannot build a tree from zero weighted rows");
  return TreeBuilder(data, n_classes, cfg, rng).build(std::move(rows), std::move(w));
}

ForestModel train_forest(const LabeledFeatureDataset& train, const ForestConfig& cfg,
                         std::optional<std::size_t> n_classes) {
  if (train.rows == 0) fail(ErrorKind::Validation, "cannot train a forest on an empty dataset");
  cfg.validate(train.cols());
  for (int y : train.labels)
    if (y < 0) fail(ErrorKind::Validation, "negative label in training data");
  const std::size_t classes = std::max(n_classes.value_or(0), train.label_count());

  ForestModel model;
  model.schema = train.schema;
  model.n_classes = classes;
  model.config = cfg;
  model.trees.resize(cfg.n_trees);
  parallel_for(cfg.n_trees, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    std::vector<std::uint32_t> weights(train.rows, 1);
    if (cfg.bootstrap) {
      std::fill(weights.begin(), weights.end(), 0);
      for (std::size_t i = 0; i < train.rows; ++i) ++weights[rng.index(train.rows)];
    }
    model.trees[t] = build_tree(train, weights, classes, cfg, rng);
  });
  return model;
}

double evaluate_accuracy(const ForestModel& model, const LabeledFeatureDataset& test) {
  if (!(test.schema == model.schema))
    fail(ErrorKind::Validation, "schema mismatch: model has " + std::to_string(model.schema.dimension()) +
                                    " features, test data has " + std::to_string(test.cols()));
  if (test.rows == 0) fail(ErrorKind::Validation, "cannot evaluate accuracy on an empty test set");
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.rows; ++r)
    if (model.predict(test.row(r)) == test.labels[r]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.rows);
}

ImportanceProfile feature_importances(const ForestModel& model) {
  const std::size_t d = model.schema.dimension();
  std::vector<double> total(d, 0.0);
  for (const auto& tree : model.trees) {
    if (tree.nodes.empty()) continue;
    const double root_weight = tree.nodes[0].weight;
    std::vector<double> per_tree(d, 0.0);
    for (const auto& n : tree.nodes) {
      if (n.is_leaf()) continue;
      const TreeNode& l = tree.nodes[static_cast<std::size_t>(n.left)];
      const TreeNode& r = tree.nodes[static_cast<std::size_t>(n.right)];
      const double decrease =
          n.weight * n.impurity - l.weight * l.impurity - r.weight * r.impurity;
      per_tree[static_cast<std::size_t>(n.feature)] += decrease / root_weight;
    }
    for (std::size_t i = 0; i < d; ++i) total[i] += per_tree[i];
  }
  ImportanceProfile out;
  out.importances.assign(d, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    total[i] = std::max(0.0, total[i] / static_cast<double>(model.trees.size()));
    sum += total[i];
  }
  if (sum > 0.0)
    for (std::size_t i = 0; i < d; ++i) out.importances[i] = total[i] / sum;
  return out;
}

ordered_json ForestModel::to_json() const {
  ordered_json j;
  j["format"] = "dwfs-forest";
  j["version"] = 1;
  j["config"] = config.to_json();
  j["n_classes"] = n_classes;
  j["schema"] = schema.to_json();
  ordered_json ts = ordered_json::array();
  for (const auto& t : trees) {
    ordered_json nodes = ordered_json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.weight, n.impurity, n.distribution});
    ts.push_back(std::move(nodes));
  }
  j["trees"] = std::move(ts);
  return j;
}

ForestModel ForestModel::from_json(const json& j) {
  if (j.value("format", "") != "dwfs-forest" || j.value("version", 0) != 1)
    fail(ErrorKind::Schema, "not a version-1 dwfs-forest document");
  ForestModel m;
  m.config = ForestConfig::from_json(j.at("config"));
  m.n_classes = j.at("n_classes").get<std::size_t>();
  m.schema = FeatureSchema::from_json(j.at("schema"));
  for (const auto& tj : j.at("trees")) {
    DecisionTree t;
    for (const auto& nj : tj) {
      TreeNode n;
      n.feature = nj.at(0).get<int>();
      n.threshold = nj.at(1).get<double>();
      n.left = nj.at(2).get<int>();
      n.right = nj.at(3).get<int>();
      n.weight = nj.at(4).get<double>();
      n.impurity = nj.at(5).get<double>();
      n.distribution = nj.at(6).get<std::vector<double>>();
      t.nodes.push_back(std::move(n));
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace dwfs
