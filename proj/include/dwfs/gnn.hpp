#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "dwfs/graph.hpp"
#include "dwfs/metrics.hpp"

namespace dwfs {

enum class LayerType { Gcn, Sage, Gat };
enum class OptimizerKind { Adam, Sgd };

std::string to_string(LayerType t);
LayerType parse_layer_type(const std::string& s);

struct GnnConfig {
  LayerType layer_type = LayerType::Gat;
  std::size_t n_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t n_heads = 4;  // GAT only; hidden_dim must be divisible by it
  double learning_rate = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static GnnConfig from_json(const nlohmann::json& j);
  static GnnConfig from_json(const nlohmann::json& j, const GnnConfig& defaults);
};

/// Adjacency views of one graph. GCN uses the symmetrized, self-looped and
/// degree-normalized matrix; SAGE and GAT use directed in-neighbors.
struct GraphStructure {
  std::size_t n = 0;
  Eigen::SparseMatrix<double, Eigen::RowMajor> gcn_norm;  // D^-1/2 (A_sym + I) D^-1/2
  Eigen::SparseMatrix<double, Eigen::RowMajor> in_mean;   // row v: 1/|N_in(v)| on each in-neighbor
  std::vector<std::vector<std::uint32_t>> attend;         // in-neighbors plus self, sorted

  static GraphStructure build(std::size_t n_nodes, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges);
};

/// Per-feature input transform fitted on training nodes: signed log1p, then standardization.
struct Standardizer {
  bool log1p = true;
  std::vector<double> mean;   // empty means identity after log1p
  std::vector<double> scale;

  static Standardizer fit(const std::vector<const FeaturedGraph*>& graphs, bool log1p = true);
  Eigen::MatrixXd apply(const FeaturedGraph& g) const;
};

struct GnnLayer {
  LayerType type = LayerType::Gcn;
  bool last = false;
  // gcn: {W}; sage: {W_self, W_nbr}; gat: per head {W, a_src, a_dst}
  std::vector<Eigen::MatrixXd> params;

  std::size_t heads() const { return type == LayerType::Gat ? params.size() / 3 : 1; }
  std::size_t out_dim() const;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
  double val_accuracy = -1;  // -1 when no validation set was given
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::string to_csv() const;
};

class GnnModel {
 public:
  GnnConfig config;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  Standardizer input;
  std::vector<GnnLayer> layers;
  Eigen::MatrixXd head_w;  // embedding x classes
  Eigen::MatrixXd head_b;  // 1 x classes

  /// Weights drawn uniformly from +-1/sqrt(fan_in) using config.seed.
  static GnnModel init(const GnnConfig& cfg, std::size_t n_features, std::size_t n_classes);

  /// All trainable tensors in a fixed order.
  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;

  Eigen::MatrixXd layer_forward(std::size_t layer, const Eigen::MatrixXd& h, const GraphStructure& g) const;
  /// Attention coefficients of one GAT head; row v holds weights over attend[v] in order.
  std::vector<std::vector<double>> attention(std::size_t layer, std::size_t head, const Eigen::MatrixXd& h,
                                             const GraphStructure& g) const;

  Eigen::RowVectorXd logits(const FeaturedGraph& g) const;
  /// Argmax of the logits; ties go to the lowest class id.
  int predict(const FeaturedGraph& g) const;

  /// Cross-entropy of one graph. When grads is non-null it receives d loss / d parameter,
  /// shaped like parameters(), scaled by `weight`, and accumulated into. `predicted`
  /// receives the argmax class of the same forward pass.
  double loss_and_grad(const FeaturedGraph& g, std::vector<Eigen::MatrixXd>* grads, double weight = 1.0,
                       int* predicted = nullptr) const;

  nlohmann::ordered_json to_json() const;
  static GnnModel from_json(const nlohmann::json& j);

 private:
  void check_input(const FeaturedGraph& g) const;
};

Eigen::RowVectorXd global_mean_pool(const Eigen::MatrixXd& h);

struct TrainResult {
  GnnModel model;
  TrainLog log;
};

/// Mini-batch training of whole graphs. The input standardizer is fitted on the
/// training graphs. A non-finite loss aborts with a Numeric error.
TrainResult train_gnn(const GnnConfig& cfg, const std::vector<FeaturedGraph>& train_set,
                      const std::vector<FeaturedGraph>& val_set, std::size_t n_classes);

double gnn_accuracy(const GnnModel& model, const std::vector<FeaturedGraph>& graphs);
ConfusionMatrix evaluate_gnn(const GnnModel& model, const std::vector<FeaturedGraph>& graphs);

void save_model(const GnnModel& model, const std::filesystem::path& path);
GnnModel load_model(const std::filesystem::path& path);

}  // namespace dwfs
