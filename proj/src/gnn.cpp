#include "dwfs/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dwfs/common.hpp"

namespace dwfs {

using nlohmann::json;
using nlohmann::ordered_json;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

namespace {

constexpr double kLeakySlope = 0.2;

double leaky(double x) { return x > 0 ? x : kLeakySlope * x; }

MatrixXd relu(const MatrixXd& z) { return z.cwiseMax(0.0); }

int argmax(const RowVectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

ordered_json matrix_to_json(const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
    fail(ErrorKind::Schema, "matrix data does not match its shape");
  MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  return m;
}

// Forward-pass intermediates needed by backprop.
struct GatHeadCache {
  MatrixXd p;                             // H W
  std::vector<std::vector<double>> pre;   // attention logits before LeakyReLU
  std::vector<std::vector<double>> alpha;
  MatrixXd out;
};

struct LayerCache {
  MatrixXd in;
  MatrixXd agg;  // gcn: A_hat H; sage: M H
  std::vector<GatHeadCache> heads;
  MatrixXd z;
  MatrixXd out;
};

GatHeadCache gat_head(const MatrixXd& h, const MatrixXd& w, const MatrixXd& a_src, const MatrixXd& a_dst,
                      const GraphStructure& g) {
  GatHeadCache c;
  c.p = h * w;
  const Eigen::VectorXd src = c.p * a_src.col(0);
  const Eigen::VectorXd dst = c.p * a_dst.col(0);
  c.pre.resize(g.n);
  c.alpha.resize(g.n);
  c.out = MatrixXd::Zero(static_cast<Eigen::Index>(g.n), w.cols());
  for (std::size_t v = 0; v < g.n; ++v) {
    const auto& nb = g.attend[v];
    auto& pre = c.pre[v];
    auto& alpha = c.alpha[v];
    pre.resize(nb.size());
    alpha.resize(nb.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nb.size(); ++k) {
      pre[k] = dst[static_cast<Eigen::Index>(v)] + src[nb[k]];
      mx = std::max(mx, leaky(pre[k]));
    }
    double sum = 0;
    for (std::size_t k = 0; k < nb.size(); ++k) {
      alpha[k] = std::exp(leaky(pre[k]) - mx);
      sum += alpha[k];
    }
    for (std::size_t k = 0; k < nb.size(); ++k) {
      alpha[k] /= sum;
      c.out.row(static_cast<Eigen::Index>(v)) += alpha[k] * c.p.row(nb[k]);
    }
  }
  return c;
}

LayerCache forward_layer(const GnnLayer& layer, const MatrixXd& h, const GraphStructure& g) {
  LayerCache c;
  c.in = h;
  switch (layer.type) {
    case LayerType::Gcn:
      c.agg = g.gcn_norm * h;
      c.z = c.agg * layer.params[0];
      break;
    case LayerType::Sage:
      c.agg = g.in_mean * h;
      c.z = h * layer.params[0] + c.agg * layer.params[1];
      break;
    case LayerType::Gat: {
      const std::size_t heads = layer.heads();
      const Eigen::Index dh = layer.params[0].cols();
      for (std::size_t k = 0; k < heads; ++k)
        c.heads.push_back(gat_head(h, layer.params[3 * k], layer.params[3 * k + 1], layer.params[3 * k + 2], g));
      if (layer.last) {
        c.z = MatrixXd::Zero(static_cast<Eigen::Index>(g.n), dh);
        for (const auto& hc : c.heads) c.z += hc.out;
        c.z /= static_cast<double>(heads);
      } else {
        c.z.resize(static_cast<Eigen::Index>(g.n), dh * static_cast<Eigen::Index>(heads));
        for (std::size_t k = 0; k < heads; ++k) c.z.middleCols(static_cast<Eigen::Index>(k) * dh, dh) = c.heads[k].out;
      }
      break;
    }
  }
  c.out = relu(c.z);
  return c;
}

// Accumulates parameter gradients of one layer and returns d loss / d input.
MatrixXd backward_layer(const GnnLayer& layer, const LayerCache& c, const GraphStructure& g, const MatrixXd& d_out,
                        MatrixXd* grads, bool need_input_grad) {
  const MatrixXd dz = d_out.cwiseProduct((c.z.array() > 0.0).cast<double>().matrix());
  MatrixXd d_in;
  switch (layer.type) {
    case LayerType::Gcn:
      grads[0] += c.agg.transpose() * dz;
      if (need_input_grad) d_in = g.gcn_norm.transpose() * (dz * layer.params[0].transpose());
      break;
    case LayerType::Sage:
      grads[0] += c.in.transpose() * dz;
      grads[1] += c.agg.transpose() * dz;
      if (need_input_grad)
        d_in = dz * layer.params[0].transpose() + g.in_mean.transpose() * (dz * layer.params[1].transpose());
      break;
    case LayerType::Gat: {
      const std::size_t heads = layer.heads();
      const Eigen::Index dh = layer.params[0].cols();
      if (need_input_grad) d_in = MatrixXd::Zero(c.in.rows(), c.in.cols());
      for (std::size_t k = 0; k < heads; ++k) {
        const auto& hc = c.heads[k];
        const MatrixXd& w = layer.params[3 * k];
        const Eigen::VectorXd a_src = layer.params[3 * k + 1].col(0);
        const Eigen::VectorXd a_dst = layer.params[3 * k + 2].col(0);
        const MatrixXd dhead = layer.last ? MatrixXd(dz / static_cast<double>(heads))
                                          : MatrixXd(dz.middleCols(static_cast<Eigen::Index>(k) * dh, dh));
        MatrixXd dp = MatrixXd::Zero(hc.p.rows(), hc.p.cols());
        Eigen::VectorXd da_src = Eigen::VectorXd::Zero(dh);
        Eigen::VectorXd da_dst = Eigen::VectorXd::Zero(dh);
        for (std::size_t v = 0; v < g.n; ++v) {
          const auto vi = static_cast<Eigen::Index>(v);
          const auto& nb = g.attend[v];
          const auto& alpha = hc.alpha[v];
          std::vector<double> dalpha(nb.size());
          double dot = 0;
          for (std::size_t q = 0; q < nb.size(); ++q) {
            dp.row(nb[q]) += alpha[q] * dhead.row(vi);
            dalpha[q] = dhead.row(vi).dot(hc.p.row(nb[q]));
            dot += alpha[q] * dalpha[q];
          }
          for (std::size_t q = 0; q < nb.size(); ++q) {
            const double de = alpha[q] * (dalpha[q] - dot);
            const double ds = de * (hc.pre[v][q] > 0 ? 1.0 : kLeakySlope);
            da_dst += ds * hc.p.row(vi).transpose();
            da_src += ds * hc.p.row(nb[q]).transpose();
            dp.row(vi) += ds * a_dst.transpose();
            dp.row(nb[q]) += ds * a_src.transpose();
          }
        }
        grads[3 * k] += c.in.transpose() * dp;
        grads[3 * k + 1] += da_src;
        grads[3 * k + 2] += da_dst;
        if (need_input_grad) d_in += dp * w.transpose();
      }
      break;
    }
  }
  return d_in;
}

double signed_log1p(double x) { return x >= 0 ? std::log1p(x) : -std::log1p(-x); }

}  // namespace

std::string to_string(LayerType t) {
  switch (t) {
    case LayerType::Gcn: return "gcn";
    case LayerType::Sage: return "sage";
    case LayerType::Gat: return "gat";
  }
  return "?";
}

LayerType parse_layer_type(const std::string& s) {
  if (s == "gcn") return LayerType::Gcn;
  if (s == "sage" || s == "graphsage") return LayerType::Sage;
  if (s == "gat") return LayerType::Gat;
  fail(ErrorKind::Argument, "unknown layer type '" + s + "' (expected gcn, sage or gat)");
}

void GnnConfig::validate() const {
  if (n_layers < 1) fail(ErrorKind::Validation, "n_layers must be >= 1");
  if (hidden_dim < 1) fail(ErrorKind::Validation, "hidden_dim must be >= 1");
  if (batch_size < 1) fail(ErrorKind::Validation, "batch_size must be >= 1");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    fail(ErrorKind::Validation, "learning_rate must be finite and >= 0");
  if (layer_type == LayerType::Gat) {
    if (n_heads < 1) fail(ErrorKind::Validation, "n_heads must be >= 1");
    if (hidden_dim % n_heads != 0) fail(ErrorKind::Validation, "hidden_dim must be divisible by n_heads");
  }
}

ordered_json GnnConfig::to_json() const {
  return {{"layer_type", to_string(layer_type)},
          {"n_layers", n_layers},
          {"hidden_dim", hidden_dim},
          {"n_heads", n_heads},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
          {"seed", seed}};
}

GnnConfig GnnConfig::from_json(const json& j) { return from_json(j, GnnConfig{}); }

GnnConfig GnnConfig::from_json(const json& j, const GnnConfig& d) {
  GnnConfig c = d;
  try {
    if (j.contains("layer_type")) c.layer_type = parse_layer_type(j.at("layer_type").get<std::string>());
    c.n_layers = j.value("n_layers", d.n_layers);
    c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    if (j.contains("optimizer")) {
      const auto o = j.at("optimizer").get<std::string>();
      if (o == "adam") c.optimizer = OptimizerKind::Adam;
      else if (o == "sgd") c.optimizer = OptimizerKind::Sgd;
      else fail(ErrorKind::Validation, "unknown optimizer '" + o + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("gnn config: ") + e.what());
  }
  c.validate();
  return c;
}

GraphStructure GraphStructure::build(std::size_t n, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
  GraphStructure g;
  g.n = n;
  std::vector<std::vector<std::uint32_t>> sym(n), in(n);
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n) fail(ErrorKind::Validation, "edge endpoint out of range");
    in[v].push_back(u);
    if (u != v) {
      sym[u].push_back(v);
      sym[v].push_back(u);
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    auto dedupe = [](std::vector<std::uint32_t>& x) {
      std::sort(x.begin(), x.end());
      x.erase(std::unique(x.begin(), x.end()), x.end());
    };
    dedupe(sym[v]);
    dedupe(in[v]);
    g.attend.push_back(in[v]);
    g.attend.back().push_back(static_cast<std::uint32_t>(v));
    dedupe(g.attend.back());
  }
  std::vector<Eigen::Triplet<double>> t;
  std::vector<double> deg(n);
  for (std::size_t v = 0; v < n; ++v) deg[v] = static_cast<double>(sym[v].size() + 1);
  for (std::size_t v = 0; v < n; ++v) {
    const auto vi = static_cast<int>(v);
    t.emplace_back(vi, vi, 1.0 / deg[v]);
    for (auto u : sym[v]) t.emplace_back(vi, static_cast<int>(u), 1.0 / std::sqrt(deg[v] * deg[u]));
  }
  const auto ni = static_cast<Eigen::Index>(n);
  g.gcn_norm.resize(ni, ni);
  g.gcn_norm.setFromTriplets(t.begin(), t.end());
  t.clear();
  for (std::size_t v = 0; v < n; ++v)
    for (auto u : in[v]) t.emplace_back(static_cast<int>(v), static_cast<int>(u), 1.0 / static_cast<double>(in[v].size()));
  g.in_mean.resize(ni, ni);
  g.in_mean.setFromTriplets(t.begin(), t.end());
  return g;
}

Standardizer Standardizer::fit(const std::vector<const FeaturedGraph*>& graphs, bool log1p) {
  Standardizer s;
  s.log1p = log1p;
  if (graphs.empty()) return s;
  const std::size_t d = graphs.front()->n_features;
  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  double count = 0;
  for (const auto* g : graphs) {
    for (std::size_t i = 0; i < g->n_nodes; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double x = log1p ? signed_log1p(g->x[i * d + j]) : g->x[i * d + j];
        sum[j] += x;
      }
    count += static_cast<double>(g->n_nodes);
  }
  if (count == 0) return s;
  s.mean.resize(d);
  s.scale.resize(d);
  for (std::size_t j = 0; j < d; ++j) s.mean[j] = sum[j] / count;
  for (const auto* g : graphs)
    for (std::size_t i = 0; i < g->n_nodes; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double x = log1p ? signed_log1p(g->x[i * d + j]) : g->x[i * d + j];
        sq[j] += (x - s.mean[j]) * (x - s.mean[j]);
      }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(sq[j] / count);
    s.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

MatrixXd Standardizer::apply(const FeaturedGraph& g) const {
  const std::size_t d = g.n_features;
  MatrixXd x(static_cast<Eigen::Index>(g.n_nodes), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double v = g.x[i * d + j];
      if (log1p) v = signed_log1p(v);
      if (!mean.empty()) v = (v - mean[j]) / scale[j];
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  return x;
}

std::size_t GnnLayer::out_dim() const {
  if (type == LayerType::Gat && !last) return static_cast<std::size_t>(params[0].cols()) * heads();
  return static_cast<std::size_t>(params[0].cols());
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,loss,train_accuracy,val_accuracy\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + format_double(r.loss) + "," + format_double(r.train_accuracy) + ",";
    if (r.val_accuracy >= 0) out += format_double(r.val_accuracy);
    out += "\n";
  }
  return out;
}

GnnModel GnnModel::init(const GnnConfig& cfg, std::size_t n_features, std::size_t n_classes) {
  cfg.validate();
  if (n_features < 1) fail(ErrorKind::Validation, "feature dimension must be >= 1");
  if (n_classes < 1) fail(ErrorKind::Validation, "class count must be >= 1");
  GnnModel m;
  m.config = cfg;
  m.n_features = n_features;
  m.n_classes = n_classes;
  const auto h = static_cast<Eigen::Index>(cfg.hidden_dim);
  Eigen::Index in = static_cast<Eigen::Index>(n_features);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    GnnLayer layer;
    layer.type = cfg.layer_type;
    layer.last = l + 1 == cfg.n_layers;
    switch (cfg.layer_type) {
      case LayerType::Gcn: layer.params = {MatrixXd(in, h)}; break;
      case LayerType::Sage: layer.params = {MatrixXd(in, h), MatrixXd(in, h)}; break;
      case LayerType::Gat: {
        const Eigen::Index dh = layer.last ? h : h / static_cast<Eigen::Index>(cfg.n_heads);
        for (std::size_t k = 0; k < cfg.n_heads; ++k) {
          layer.params.emplace_back(in, dh);
          layer.params.emplace_back(dh, 1);
          layer.params.emplace_back(dh, 1);
        }
        break;
      }
    }
    m.layers.push_back(std::move(layer));
    in = h;
  }
  m.head_w = MatrixXd(h, static_cast<Eigen::Index>(n_classes));
  m.head_b = MatrixXd(1, static_cast<Eigen::Index>(n_classes));

  Rng rng(derive_seed(cfg.seed, "gnn-init"));
  auto fill = [&](MatrixXd& w, double fan_in) {
    const double b = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-b, b);
  };
  for (auto& layer : m.layers) {
    for (std::size_t i = 0; i < layer.params.size(); ++i) {
      auto& w = layer.params[i];
      const bool attention_vec = layer.type == LayerType::Gat && i % 3 != 0;
      fill(w, attention_vec ? 2.0 * static_cast<double>(w.rows()) : static_cast<double>(w.rows()));
    }
  }
  fill(m.head_w, static_cast<double>(h));
  fill(m.head_b, static_cast<double>(h));
  return m;
}

std::vector<MatrixXd*> GnnModel::parameters() {
  std::vector<MatrixXd*> out;
  for (auto& l : layers)
    for (auto& p : l.params) out.push_back(&p);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const MatrixXd*> GnnModel::parameters() const {
  std::vector<const MatrixXd*> out;
  for (const auto& l : layers)
    for (const auto& p : l.params) out.push_back(&p);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

MatrixXd GnnModel::layer_forward(std::size_t layer, const MatrixXd& h, const GraphStructure& g) const {
  const auto& l = layers.at(layer);
  if (static_cast<std::size_t>(h.rows()) != g.n)
    fail(ErrorKind::Argument, "layer input has " + std::to_string(h.rows()) + " rows for a graph of " +
                                  std::to_string(g.n) + " nodes");
  if (h.cols() != l.params[0].rows())
    fail(ErrorKind::Argument, "layer " + std::to_string(layer) + " expects " + std::to_string(l.params[0].rows()) +
                                  " input columns, got " + std::to_string(h.cols()));
  return forward_layer(l, h, g).out;
}

std::vector<std::vector<double>> GnnModel::attention(std::size_t layer, std::size_t head, const MatrixXd& h,
                                                     const GraphStructure& g) const {
  const auto& l = layers.at(layer);
  if (l.type != LayerType::Gat || head >= l.heads()) fail(ErrorKind::Argument, "no such attention head");
  return gat_head(h, l.params[3 * head], l.params[3 * head + 1], l.params[3 * head + 2], g).alpha;
}

RowVectorXd global_mean_pool(const MatrixXd& h) {
  if (h.rows() == 0) fail(ErrorKind::Argument, "cannot pool an empty graph");
  RowVectorXd out = RowVectorXd::Zero(h.cols());
  for (Eigen::Index r = 0; r < h.rows(); ++r) out += h.row(r);
  return out / static_cast<double>(h.rows());
}

void GnnModel::check_input(const FeaturedGraph& g) const {
  if (g.n_features != n_features)
    fail(ErrorKind::Validation, "feature dimension mismatch: model expects " + std::to_string(n_features) +
                                    ", data has " + std::to_string(g.n_features));
  if (g.n_nodes == 0) fail(ErrorKind::Argument, "cannot classify an empty graph");
  if (g.x.size() != g.n_nodes * g.n_features) fail(ErrorKind::Validation, "node feature matrix has the wrong size");
}

RowVectorXd GnnModel::logits(const FeaturedGraph& g) const {
  check_input(g);
  const auto s = GraphStructure::build(g.n_nodes, g.edges);
  MatrixXd h = input.apply(g);
  for (const auto& l : layers) h = forward_layer(l, h, s).out;
  return global_mean_pool(h) * head_w + head_b;
}

int GnnModel::predict(const FeaturedGraph& g) const { return argmax(logits(g)); }

double GnnModel::loss_and_grad(const FeaturedGraph& g, std::vector<MatrixXd>* grads, double weight,
                               int* predicted) const {
  check_input(g);
  if (g.label < 0 || static_cast<std::size_t>(g.label) >= n_classes)
    fail(ErrorKind::Validation, "graph label " + std::to_string(g.label) + " outside [0, " +
                                    std::to_string(n_classes) + ")");
  const auto s = GraphStructure::build(g.n_nodes, g.edges);
  std::vector<LayerCache> caches;
  MatrixXd h = input.apply(g);
  for (const auto& l : layers) {
    caches.push_back(forward_layer(l, h, s));
    h = caches.back().out;
  }
  const RowVectorXd pooled = global_mean_pool(h);
  const RowVectorXd z = pooled * head_w + head_b;
  if (predicted) *predicted = argmax(z);
  const double mx = z.maxCoeff();
  const RowVectorXd e = (z.array() - mx).exp().matrix();
  const double sum = e.sum();
  const double loss = -(z[g.label] - mx - std::log(sum));
  if (!grads) return loss;

  if (grads->empty())
    for (const auto* p : parameters()) grads->push_back(MatrixXd::Zero(p->rows(), p->cols()));
  RowVectorXd dz = e / sum;
  dz[g.label] -= 1.0;
  dz *= weight;
  auto& gr = *grads;
  const std::size_t hw = gr.size() - 2;
  gr[hw] += pooled.transpose() * dz;
  gr[hw + 1] += dz;
  const RowVectorXd dpool = dz * head_w.transpose();
  MatrixXd dh = MatrixXd::Ones(h.rows(), 1) * (dpool / static_cast<double>(h.rows()));

  std::vector<std::size_t> starts(layers.size());
  for (std::size_t l = 0, o = 0; l < layers.size(); o += layers[l].params.size(), ++l) starts[l] = o;
  for (std::size_t l = layers.size(); l-- > 0;)
    dh = backward_layer(layers[l], caches[l], s, dh, gr.data() + starts[l], l > 0);
  return loss;
}

ordered_json GnnModel::to_json() const {
  ordered_json j;
  j["format"] = "dwfs-gnn";
  j["version"] = 1;
  j["config"] = config.to_json();
  j["n_features"] = n_features;
  j["n_classes"] = n_classes;
  j["input"] = {{"log1p", input.log1p}, {"mean", input.mean}, {"scale", input.scale}};
  ordered_json ls = ordered_json::array();
  for (const auto& l : layers) {
    ordered_json ps = ordered_json::array();
    for (const auto& p : l.params) ps.push_back(matrix_to_json(p));
    ls.push_back({{"type", to_string(l.type)}, {"last", l.last}, {"params", std::move(ps)}});
  }
  j["layers"] = std::move(ls);
  j["head_w"] = matrix_to_json(head_w);
  j["head_b"] = matrix_to_json(head_b);
  return j;
}

GnnModel GnnModel::from_json(const json& j) {
  if (j.value("format", "") != "dwfs-gnn") fail(ErrorKind::Schema, "not a dwfs-gnn checkpoint");
  if (j.value("version", 0) != 1)
    fail(ErrorKind::Schema, "unsupported checkpoint version " + j.value("version", json()).dump());
  try {
    const auto cfg = GnnConfig::from_json(j.at("config"));
    GnnModel m = init(cfg, j.at("n_features").get<std::size_t>(), j.at("n_classes").get<std::size_t>());
    const auto& in = j.at("input");
    m.input.log1p = in.at("log1p").get<bool>();
    m.input.mean = in.at("mean").get<std::vector<double>>();
    m.input.scale = in.at("scale").get<std::vector<double>>();
    if (!m.input.mean.empty() && (m.input.mean.size() != m.n_features || m.input.scale.size() != m.n_features))
      fail(ErrorKind::Schema, "input standardizer does not match the feature dimension");
    const auto& ls = j.at("layers");
    if (ls.size() != m.layers.size()) fail(ErrorKind::Schema, "checkpoint layer count does not match its config");
    for (std::size_t l = 0; l < ls.size(); ++l) {
      const auto& ps = ls[l].at("params");
      auto& target = m.layers[l].params;
      if (ps.size() != target.size()) fail(ErrorKind::Schema, "layer " + std::to_string(l) + " has wrong tensor count");
      for (std::size_t i = 0; i < ps.size(); ++i) {
        MatrixXd p = matrix_from_json(ps[i]);
        if (p.rows() != target[i].rows() || p.cols() != target[i].cols())
          fail(ErrorKind::Schema, "layer " + std::to_string(l) + " tensor " + std::to_string(i) + " has wrong shape");
        target[i] = std::move(p);
      }
    }
    MatrixXd hw = matrix_from_json(j.at("head_w"));
    MatrixXd hb = matrix_from_json(j.at("head_b"));
    if (hw.rows() != m.head_w.rows() || hw.cols() != m.head_w.cols() || hb.cols() != m.head_b.cols() ||
        hb.rows() != 1)
      fail(ErrorKind::Schema, "classifier head has wrong shape");
    m.head_w = std::move(hw);
    m.head_b = std::move(hb);
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("gnn checkpoint: ") + e.what());
  }
}

TrainResult train_gnn(const GnnConfig& cfg, const std::vector<FeaturedGraph>& train_set,
                      const std::vector<FeaturedGraph>& val_set, std::size_t n_classes) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorKind::Argument, "training set is empty");
  const std::size_t d = train_set.front().n_features;
  for (const auto* set : {&train_set, &val_set})
    for (const auto& g : *set) {
      if (g.n_features != d)
        fail(ErrorKind::Validation, "inconsistent feature dimensions: " + std::to_string(d) + " vs " +
                                        std::to_string(g.n_features));
      if (g.n_nodes == 0) fail(ErrorKind::Argument, "empty graph in training data");
    }

  TrainResult res{GnnModel::init(cfg, d, n_classes), {}};
  GnnModel& model = res.model;
  std::vector<const FeaturedGraph*> ptrs;
  for (const auto& g : train_set) ptrs.push_back(&g);
  model.input = Standardizer::fit(ptrs);

  auto params = model.parameters();
  std::vector<MatrixXd> m1, m2;
  for (const auto* p : params) {
    m1.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    m2.push_back(MatrixXd::Zero(p->rows(), p->cols()));
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::size_t step = 0;

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::uint64_t shuffle_root = derive_seed(cfg.seed, "gnn-shuffle");

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(shuffle_root, epoch));
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
      std::sort(batch.begin(), batch.end());
      const std::size_t bs = batch.size();
      std::vector<std::vector<MatrixXd>> grads(bs);
      std::vector<double> losses(bs);
      std::vector<int> preds(bs);
      parallel_for(bs, [&](std::size_t i) {
        losses[i] = model.loss_and_grad(train_set[batch[i]], &grads[i], 1.0 / static_cast<double>(bs), &preds[i]);
      });
      for (std::size_t i = 0; i < bs; ++i) {
        if (!std::isfinite(losses[i])) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", batch starting at " << start << ", sample "
              << batch[i] << " (loss " << losses[i] << ", lr " << cfg.learning_rate << ")";
          fail(ErrorKind::Numeric, msg.str());
        }
        loss_sum += losses[i];
        correct += preds[i] == train_set[batch[i]].label;
      }
      for (std::size_t i = 1; i < bs; ++i)
        for (std::size_t p = 0; p < params.size(); ++p) grads[0][p] += grads[i][p];
      const auto& g = grads[0];
      ++step;
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (cfg.optimizer == OptimizerKind::Sgd) {
          *params[p] -= cfg.learning_rate * g[p];
          continue;
        }
        m1[p] = b1 * m1[p] + (1 - b1) * g[p];
        m2[p] = b2 * m2[p] + (1 - b2) * g[p].cwiseProduct(g[p]);
        const double c1 = 1 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1 - std::pow(b2, static_cast<double>(step));
        *params[p] -= (cfg.learning_rate * (m1[p] / c1).array() / ((m2[p] / c2).array().sqrt() + eps)).matrix();
      }
      for (const auto* p : params)
        if (!p->allFinite())
          fail(ErrorKind::Numeric, "non-finite weights after the update at epoch " + std::to_string(epoch));
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(n);
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!val_set.empty()) row.val_accuracy = gnn_accuracy(model, val_set);
    res.log.rows.push_back(row);
  }
  return res;
}

double gnn_accuracy(const GnnModel& model, const std::vector<FeaturedGraph>& graphs) {
  if (graphs.empty()) return 0.0;
  const auto cm = evaluate_gnn(model, graphs);
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

ConfusionMatrix evaluate_gnn(const GnnModel& model, const std::vector<FeaturedGraph>& graphs) {
  std::vector<int> truth(graphs.size()), pred(graphs.size());
  parallel_for(graphs.size(), [&](std::size_t i) {
    truth[i] = graphs[i].label;
    pred[i] = model.predict(graphs[i]);
  });
  return confusion(truth, pred, model.n_classes);
}

void save_model(const GnnModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, model.to_json().dump(1) + "\n");
}

GnnModel load_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return GnnModel::from_json(j);
}

}  // namespace dwfs
