#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>

#include "dwfs/common.hpp"
#include "dwfs/gnn.hpp"
#include "dwfs/obfsim.hpp"

using namespace dwfs;
using Eigen::MatrixXd;

namespace {

FeaturedGraph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t d, int label) {
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  FeaturedGraph g;
  g.n_nodes = n;
  g.n_features = d;
  for (std::size_t i = 0; i < n * d; ++i) g.x.push_back(u(rng));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (rng() % 3 == 0) g.edges.emplace_back(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b));
  g.label = label;
  return g;
}

GnnConfig small_config(LayerType t, std::size_t layers = 2) {
  GnnConfig c;
  c.layer_type = t;
  c.n_layers = layers;
  c.hidden_dim = 4;
  c.n_heads = 2;
  c.seed = 7;
  return c;
}

MatrixXd to_matrix(const FeaturedGraph& g) {
  MatrixXd m(static_cast<Eigen::Index>(g.n_nodes), static_cast<Eigen::Index>(g.n_features));
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    for (std::size_t j = 0; j < g.n_features; ++j) m(i, j) = g.x[i * g.n_features + j];
  return m;
}

const LayerType kAll[] = {LayerType::Gcn, LayerType::Sage, LayerType::Gat};

}  // namespace

TEST(GnnLayer, SingleNodeGcnIsDense) {
  auto m = GnnModel::init(small_config(LayerType::Gcn, 1), 3, 2);
  MatrixXd h(1, 3);
  h << 0.5, -1.0, 2.0;
  auto s = GraphStructure::build(1, {});
  MatrixXd expect = (h * m.layers[0].params[0]).cwiseMax(0.0);
  EXPECT_TRUE(m.layer_forward(0, h, s).isApprox(expect, 1e-15));
}

TEST(GnnLayer, IsolatedSageIgnoresNeighborWeights) {
  auto m = GnnModel::init(small_config(LayerType::Sage, 1), 3, 2);
  MatrixXd h(2, 3);
  h << 0.5, -1.0, 2.0, 1.0, 1.0, -0.5;
  auto s = GraphStructure::build(2, {});
  MatrixXd expect = (h * m.layers[0].params[0]).cwiseMax(0.0);
  EXPECT_TRUE(m.layer_forward(0, h, s).isApprox(expect, 1e-15));
}

TEST(GnnLayer, GcnNormalizationOnAnEdge) {
  // one undirected edge: A_hat = [[1/2, 1/2], [1/2, 1/2]]
  auto s = GraphStructure::build(2, {{0, 1}});
  MatrixXd dense(s.gcn_norm);
  EXPECT_NEAR(dense(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(dense(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(dense(1, 0), 0.5, 1e-15);
  MatrixXd mean(s.in_mean);
  EXPECT_EQ(mean(0, 1), 0.0);  // directed: 1 has in-neighbor 0, not vice versa
  EXPECT_EQ(mean(1, 0), 1.0);
}

TEST(GnnLayer, GatSingleNeighborAttentionSumsToOne) {
  auto cfg = small_config(LayerType::Gat, 1);
  cfg.n_heads = 1;
  auto m = GnnModel::init(cfg, 3, 2);
  MatrixXd h(2, 3);
  h << 0.5, -1.0, 2.0, 1.0, 1.0, -0.5;
  auto s = GraphStructure::build(2, {{0, 1}});
  auto a = m.attention(0, 0, h, s);
  ASSERT_EQ(a[1].size(), 2u);
  EXPECT_NEAR(a[1][0] + a[1][1], 1.0, 1e-12);
  ASSERT_EQ(a[0].size(), 1u);
  EXPECT_EQ(a[0][0], 1.0);
}

TEST(GnnLayer, ShapeMismatchIsAnError) {
  auto m = GnnModel::init(small_config(LayerType::Gcn, 1), 3, 2);
  auto s = GraphStructure::build(2, {});
  EXPECT_THROW(m.layer_forward(0, MatrixXd::Zero(2, 4), s), Error);
  EXPECT_THROW(m.layer_forward(0, MatrixXd::Zero(3, 3), s), Error);
}

TEST(GnnPool, Examples) {
  MatrixXd one(1, 2);
  one << 4, 5;
  EXPECT_EQ(global_mean_pool(one), one.row(0));
  MatrixXd two(2, 2);
  two << 1, 3, 3, 1;
  EXPECT_EQ(global_mean_pool(two), Eigen::RowVector2d(2, 2));
  EXPECT_TRUE(global_mean_pool(MatrixXd::Zero(3, 4)).isZero(0));
  EXPECT_THROW(global_mean_pool(MatrixXd(0, 2)), Error);
}

TEST(GnnGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  for (auto type : kAll) {
    for (std::size_t layers : {1u, 2u}) {
      for (int trial = 0; trial < 3; ++trial) {
        auto cfg = small_config(type, layers);
        cfg.seed = static_cast<std::uint64_t>(trial);
        auto model = GnnModel::init(cfg, 3, 3);
        model.input.log1p = false;
        auto g = random_graph(rng, 2 + rng() % 5, 3, static_cast<int>(rng() % 3));
        std::vector<MatrixXd> grads;
        model.loss_and_grad(g, &grads);
        auto params = model.parameters();
        ASSERT_EQ(grads.size(), params.size());
        // a step of 1e-4 keeps cancellation error well below the tolerance for ~1e-8 gradients
        const double h = 1e-4;
        double worst = 0;
        for (std::size_t p = 0; p < params.size(); ++p) {
          for (Eigen::Index k = 0; k < params[p]->size(); ++k) {
            double& w = params[p]->data()[k];
            const double orig = w;
            w = orig + h;
            const double up = model.loss_and_grad(g, nullptr);
            w = orig - h;
            const double down = model.loss_and_grad(g, nullptr);
            w = orig;
            const double numeric = (up - down) / (2 * h);
            const double analytic = grads[p].data()[k];
            const double rel = std::abs(numeric - analytic) / std::max(1e-7, std::abs(numeric) + std::abs(analytic));
            worst = std::max(worst, rel);
          }
        }
        EXPECT_LT(worst, 1e-4) << to_string(type) << " layers=" << layers << " trial=" << trial;
      }
    }
  }
}

TEST(GnnProperty, PermutationEquivariance) {
  std::mt19937_64 rng(5);
  for (auto type : kAll) {
    for (int trial = 0; trial < 20; ++trial) {
      auto model = GnnModel::init(small_config(type, 2), 3, 2);
      const std::size_t n = 1 + rng() % 8;
      auto g = random_graph(rng, n, 3, 0);
      std::vector<std::uint32_t> perm(n);  // old index -> new index
      std::iota(perm.begin(), perm.end(), 0u);
      std::shuffle(perm.begin(), perm.end(), rng);
      FeaturedGraph pg = g;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) pg.x[perm[i] * 3 + j] = g.x[i * 3 + j];
      for (auto& [a, b] : pg.edges) {
        a = perm[a];
        b = perm[b];
      }
      MatrixXd h = to_matrix(g), ph = to_matrix(pg);
      auto s = GraphStructure::build(n, g.edges);
      auto ps = GraphStructure::build(n, pg.edges);
      MatrixXd out = model.layer_forward(0, h, s);
      MatrixXd pout = model.layer_forward(0, ph, ps);
      for (std::size_t i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < out.cols(); ++c) EXPECT_NEAR(pout(perm[i], c), out(i, c), 1e-9);
      auto l1 = model.logits(g), l2 = model.logits(pg);
      for (Eigen::Index c = 0; c < l1.size(); ++c) EXPECT_NEAR(l1[c], l2[c], 1e-9);
    }
  }
}

TEST(GnnProperty, AttentionRowsSumToOne) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    auto model = GnnModel::init(small_config(LayerType::Gat, 2), 3, 2);
    auto g = random_graph(rng, 1 + rng() % 10, 3, 0);
    auto s = GraphStructure::build(g.n_nodes, g.edges);
    MatrixXd h = to_matrix(g);
    for (std::size_t head = 0; head < 2; ++head)
      for (const auto& row : model.attention(0, head, h, s)) {
        double sum = 0;
        for (double a : row) {
          EXPECT_GE(a, 0.0);
          sum += a;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
  }
}

TEST(GnnProperty, SmallStepLossIsNonIncreasing) {
  std::mt19937_64 rng(3);
  for (auto type : kAll) {
    auto model = GnnModel::init(small_config(type, 2), 3, 2);
    std::vector<FeaturedGraph> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_graph(rng, 3 + rng() % 4, 3, i % 2));
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 20; ++step) {
      std::vector<MatrixXd> grads;
      double loss = 0;
      for (const auto& g : batch) loss += model.loss_and_grad(g, &grads, 1.0 / batch.size()) / batch.size();
      EXPECT_LE(loss, prev + 1e-15) << to_string(type) << " step " << step;
      prev = loss;
      auto params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) *params[p] -= 1e-4 * grads[p];
    }
  }
}

TEST(GnnTrain, ZeroLearningRateLeavesWeights) {
  std::mt19937_64 rng(1);
  std::vector<FeaturedGraph> set;
  for (int i = 0; i < 8; ++i) set.push_back(random_graph(rng, 4, 3, i % 2));
  for (auto opt : {OptimizerKind::Adam, OptimizerKind::Sgd}) {
    auto cfg = small_config(LayerType::Sage, 2);
    cfg.learning_rate = 0;
    cfg.epochs = 5;
    cfg.batch_size = 3;
    cfg.optimizer = opt;
    auto res = train_gnn(cfg, set, {}, 2);
    auto fresh = GnnModel::init(cfg, 3, 2);
    auto a = res.model.parameters();
    auto b = fresh.parameters();
    for (std::size_t p = 0; p < a.size(); ++p) EXPECT_EQ(*a[p], *b[p]);
  }
}

TEST(GnnTrain, SingleClassConverges) {
  std::mt19937_64 rng(2);
  std::vector<FeaturedGraph> set;
  for (int i = 0; i < 6; ++i) set.push_back(random_graph(rng, 4, 3, 1));
  auto cfg = small_config(LayerType::Gcn, 2);
  cfg.learning_rate = 0.05;
  cfg.epochs = 150;
  auto res = train_gnn(cfg, set, {}, 3);
  EXPECT_LT(res.log.rows.back().loss, 0.01);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(res.model.predict(random_graph(rng, 5, 3, 0)), 1);
}

TEST(GnnTrain, SeparableToyCorpus) {
  GeneratorConfig gc;
  gc.samples_per_family = 5;
  gc.dimension = 10;
  gc.min_nodes = 20;
  gc.max_nodes = 40;
  gc.robust_effect = 0.8;
  gc.fragile_effect = 0.8;
  gc.strategies = {};
  gc.seed = 4;
  auto corpus = generate_corpus(gc);
  std::vector<std::size_t> all(gc.dimension);
  std::iota(all.begin(), all.end(), 0);
  std::vector<FeaturedGraph> set;
  for (const auto& s : corpus.conditions[0].samples) {
    auto sbs = extract_sbs(s.graph, {1, HopOrigin::Sensitive});
    set.push_back(assign_node_features(sbs, all, corpus.schema));
  }
  ASSERT_EQ(set.size(), 10u);
  for (auto type : kAll) {
    GnnConfig cfg;
    cfg.layer_type = type;
    cfg.hidden_dim = 16;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 200;
    cfg.seed = 1;
    auto res = train_gnn(cfg, set, set, 2);
    EXPECT_GE(gnn_accuracy(res.model, set), 0.95) << to_string(type);
    EXPECT_EQ(res.log.rows.size(), 200u);
  }
}

TEST(GnnTrain, DeterministicAcrossThreadCounts) {
  std::mt19937_64 rng(8);
  std::vector<FeaturedGraph> set;
  for (int i = 0; i < 20; ++i) set.push_back(random_graph(rng, 3 + rng() % 5, 3, i % 3));
  auto cfg = small_config(LayerType::Gat, 2);
  cfg.epochs = 10;
  cfg.batch_size = 7;
  setenv("DWFS_THREADS", "1", 1);
  auto a = train_gnn(cfg, set, set, 3);
  setenv("DWFS_THREADS", "4", 1);
  auto b = train_gnn(cfg, set, set, 3);
  unsetenv("DWFS_THREADS");
  EXPECT_EQ(a.model.to_json().dump(), b.model.to_json().dump());
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
}

TEST(GnnTrain, NonFiniteLossAborts) {
  std::mt19937_64 rng(8);
  std::vector<FeaturedGraph> set;
  for (int i = 0; i < 4; ++i) set.push_back(random_graph(rng, 3, 3, i % 2));
  set[2].x[1] = std::numeric_limits<double>::quiet_NaN();
  auto cfg = small_config(LayerType::Gcn, 1);
  cfg.epochs = 2;
  try {
    train_gnn(cfg, set, {}, 2);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(GnnTrain, InputErrors) {
  std::mt19937_64 rng(8);
  auto cfg = small_config(LayerType::Gcn, 1);
  EXPECT_THROW(train_gnn(cfg, {}, {}, 2), Error);
  std::vector<FeaturedGraph> set{random_graph(rng, 3, 3, 0), random_graph(rng, 3, 4, 1)};
  EXPECT_THROW(train_gnn(cfg, set, {}, 2), Error);
  std::vector<FeaturedGraph> bad_label{random_graph(rng, 3, 3, 5)};
  EXPECT_THROW(train_gnn(cfg, bad_label, {}, 2), Error);
  FeaturedGraph empty;
  empty.n_features = 3;
  empty.label = 0;
  EXPECT_THROW(train_gnn(cfg, {empty}, {}, 2), Error);
}

TEST(GnnModel, DimensionMismatchNamesBothDims) {
  std::mt19937_64 rng(8);
  auto m = GnnModel::init(small_config(LayerType::Gcn, 1), 5, 2);
  try {
    m.predict(random_graph(rng, 3, 3, 0));
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("5"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
}

TEST(GnnModel, CheckpointRoundTripIsExact) {
  std::mt19937_64 rng(8);
  std::vector<FeaturedGraph> set;
  for (int i = 0; i < 10; ++i) set.push_back(random_graph(rng, 4, 3, i % 2));
  for (auto type : kAll) {
    auto cfg = small_config(type, 2);
    cfg.epochs = 3;
    auto res = train_gnn(cfg, set, {}, 2);
    auto path = std::filesystem::temp_directory_path() / ("dwfs_gnn_" + to_string(type) + ".json");
    save_model(res.model, path);
    auto back = load_model(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.to_json().dump(), res.model.to_json().dump());
    for (const auto& g : set) EXPECT_EQ(back.logits(g), res.model.logits(g));
  }
  nlohmann::json j = GnnModel::init(small_config(LayerType::Gcn, 1), 3, 2).to_json();
  j["version"] = 2;
  EXPECT_THROW(GnnModel::from_json(j), Error);
  j["version"] = 1;
  j["head_w"]["rows"] = 99;
  EXPECT_THROW(GnnModel::from_json(j), Error);
}

TEST(GnnModel, PredictTiesGoToLowestClass) {
  auto m = GnnModel::init(small_config(LayerType::Gcn, 1), 2, 3);
  m.head_w.setZero();
  m.head_b.setZero();
  FeaturedGraph g;
  g.n_nodes = 1;
  g.n_features = 2;
  g.x = {1, 1};
  EXPECT_EQ(m.predict(g), 0);
  m.head_b(0, 2) = 1;
  EXPECT_EQ(m.predict(g), 2);
}

TEST(GnnConfigTest, ValidationAndJson) {
  GnnConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), Error);
  c = GnnConfig{};
  c.hidden_dim = 10;
  c.n_heads = 4;
  EXPECT_THROW(c.validate(), Error);
  c.layer_type = LayerType::Sage;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), Error);
  GnnConfig d;
  d.layer_type = LayerType::Gcn;
  d.optimizer = OptimizerKind::Sgd;
  d.seed = 99;
  auto back = GnnConfig::from_json(nlohmann::json(d.to_json()));
  EXPECT_EQ(back.to_json().dump(), d.to_json().dump());
  EXPECT_THROW(GnnConfig::from_json(nlohmann::json{{"layer_type", "tagcn"}}), Error);
}

TEST(GnnLog, Csv) {
  TrainLog log;
  log.rows.push_back({1, 0.5, 0.75, -1});
  log.rows.push_back({2, 0.25, 1.0, 0.5});
  EXPECT_EQ(log.to_csv(), "epoch,loss,train_accuracy,val_accuracy\n1,0.5,0.75,\n2,0.25,1,0.5\n");
}
