#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <set>

#include "dwfs/common.hpp"
#include "dwfs/graph.hpp"

using namespace dwfs;

namespace {

CallGraph make_graph(const std::vector<std::string>& sigs, const std::vector<std::pair<int, int>>& edges,
                     const std::set<int>& sensitive = {}) {
  CallGraph g;
  for (std::size_t i = 0; i < sigs.size(); ++i)
    g.nodes.push_back({static_cast<std::int64_t>(i), sigs[i], sensitive.count(static_cast<int>(i)) > 0, {}});
  for (auto [u, v] : edges) g.edges.emplace_back(u, v);
  g.normalize();
  return g;
}

std::set<std::string> sig_set(const CallGraph& g) {
  std::set<std::string> s;
  for (const auto& n : g.nodes) s.insert(n.signature);
  return s;
}

std::set<std::pair<std::string, std::string>> edge_set(const CallGraph& g) {
  std::set<std::pair<std::string, std::string>> s;
  for (auto [u, v] : g.edges) s.emplace(g.nodes[u].signature, g.nodes[v].signature);
  return s;
}

std::set<std::int64_t> id_set(const CallGraph& g) {
  std::set<std::int64_t> s;
  for (const auto& n : g.nodes) s.insert(n.id);
  return s;
}

CallGraph random_graph(Rng& rng, std::size_t max_nodes) {
  CallGraph g;
  const std::size_t n = 1 + rng.index(max_nodes);
  const double p_edge = rng.uniform(0.01, 0.15);
  const double p_sens = rng.uniform(0.0, 0.2);
  for (std::size_t i = 0; i < n; ++i)
    g.nodes.push_back({static_cast<std::int64_t>(i * 7 + 3), "m" + std::to_string(i), rng.bernoulli(p_sens), {}});
  for (std::uint32_t u = 0; u < n; ++u)
    for (std::uint32_t v = 0; v < n; ++v)
      if (rng.bernoulli(p_edge)) g.edges.emplace_back(u, v);
  g.normalize();
  return g;
}

// Reference: undirected all-pairs distances by Floyd-Warshall, then every node
// within the retention radius of some sensitive node, with induced edges.
std::set<std::int64_t> oracle_ids(const CallGraph& g, std::size_t hops, HopOrigin origin) {
  const std::size_t n = g.nodes.size();
  constexpr std::size_t inf = std::numeric_limits<std::size_t>::max() / 4;
  std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (auto [u, v] : g.edges)
    if (u != v) d[u][v] = d[v][u] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  const std::size_t radius = hops == 0 ? 1 : origin == HopOrigin::Sensitive ? std::max<std::size_t>(1, hops) : hops + 1;
  std::set<std::int64_t> out;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t s = 0; s < n; ++s)
      if (g.nodes[s].sensitive && d[s][u] <= radius) out.insert(g.nodes[u].id);
  return out;
}

}  // namespace

TEST(MarkSensitive, Examples) {
  const auto g = make_graph({"Lcom/app/Main;->onCreate", "Landroid/telephony/TelephonyManager;->getDeviceId",
                             "Lcom/app/Util;->send", "Landroid/location/LocationManager;->getLastKnownLocation",
                             "Lcom/app/Util;->log"},
                            {{0, 1}, {0, 2}});
  SensitiveApiList list{{"Landroid/telephony/TelephonyManager;->getDeviceId"}};
  auto m = mark_sensitive(g, list);
  EXPECT_EQ(m.sensitive_count(), 1u);
  EXPECT_TRUE(m.nodes[1].sensitive);
  EXPECT_EQ(mark_sensitive(g, SensitiveApiList{}).sensitive_count(), 0u);
  EXPECT_EQ(mark_sensitive(g, SensitiveApiList{{"Landroid/*"}}).sensitive_count(), 2u);
  EXPECT_FALSE(g.nodes[1].sensitive);  // input untouched
}

TEST(GlobMatch, Basics) {
  EXPECT_TRUE(glob_match("a*c", "abbbc"));
  EXPECT_TRUE(glob_match("*", ""));
  EXPECT_TRUE(glob_match("a*b*c", "aXbYc"));
  EXPECT_FALSE(glob_match("a*c", "abd"));
  EXPECT_FALSE(glob_match("abc", "abcd"));
  const auto list = SensitiveApiList::parse("# comment\n\n  Landroid/*;->send*  \n");
  ASSERT_EQ(list.patterns.size(), 1u);
  EXPECT_TRUE(list.matches("Landroid/telephony/SmsManager;->sendTextMessage"));
}

TEST(ExtractSbs, ChainKeepsDirectNeighbors) {
  const auto g = make_graph({"a", "s", "b"}, {{0, 1}, {1, 2}}, {1});
  const auto sbs = extract_sbs(g, {0});
  EXPECT_EQ(sig_set(sbs), (std::set<std::string>{"a", "s", "b"}));
  EXPECT_EQ(edge_set(sbs), (std::set<std::pair<std::string, std::string>>{{"a", "s"}, {"s", "b"}}));
}

TEST(ExtractSbs, HopSemantics) {
  const auto g = make_graph({"p2", "p1", "s"}, {{0, 1}, {1, 2}}, {2});
  EXPECT_EQ(sig_set(extract_sbs(g, {0})), (std::set<std::string>{"p1", "s"}));
  // BFS depth counts from the sensitive node itself, so one hop adds nothing
  // beyond the direct neighbors and two hops reach p2.
  EXPECT_EQ(sig_set(extract_sbs(g, {1})), (std::set<std::string>{"p1", "s"}));
  EXPECT_EQ(sig_set(extract_sbs(g, {2})), (std::set<std::string>{"p2", "p1", "s"}));
  // Measured from the neighbor frontier instead, one hop reaches p2.
  EXPECT_EQ(sig_set(extract_sbs(g, {1, HopOrigin::Neighbors})), (std::set<std::string>{"p2", "p1", "s"}));
}

TEST(ExtractSbs, SharedNeighborKeepsBothBehaviorsConnected) {
  const auto g = make_graph({"s1", "x", "s2", "y"}, {{0, 1}, {1, 2}, {3, 1}}, {0, 2});
  const auto sbs = extract_sbs(g, {0});
  EXPECT_EQ(sig_set(sbs), (std::set<std::string>{"s1", "x", "s2"}));
  EXPECT_EQ(edge_set(sbs), (std::set<std::pair<std::string, std::string>>{{"s1", "x"}, {"x", "s2"}}));
}

TEST(ExtractSbs, InducedEdgesBetweenRetainedNeighbors) {
  // a and b are both neighbors of s; their mutual edge is kept.
  const auto g = make_graph({"a", "s", "b"}, {{0, 1}, {1, 2}, {2, 0}}, {1});
  EXPECT_EQ(extract_sbs(g, {0}).edges.size(), 3u);
}

TEST(ExtractSbs, NoSensitiveNodesGivesEmptyGraph) {
  const auto g = make_graph({"a", "b"}, {{0, 1}});
  const auto sbs = extract_sbs(g, {3});
  EXPECT_TRUE(sbs.nodes.empty());
  EXPECT_TRUE(sbs.edges.empty());
}

TEST(ExtractSbs, MatchesBruteForceOracleAndProperties) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_graph(rng, 50);
    std::set<std::int64_t> prev;
    for (HopOrigin origin : {HopOrigin::Sensitive, HopOrigin::Neighbors}) {
      prev.clear();
      for (std::size_t hops = 0; hops <= 3; ++hops) {
        const SbsConfig cfg{hops, origin};
        const auto sbs = extract_sbs(g, cfg);
        const auto ids = id_set(sbs);
        ASSERT_EQ(ids, oracle_ids(g, hops, origin)) << "trial " << trial << " N=" << hops;

        // induced edges, all present in the input
        std::set<std::pair<std::int64_t, std::int64_t>> expected_edges, got_edges;
        for (auto [u, v] : g.edges)
          if (ids.count(g.nodes[u].id) && ids.count(g.nodes[v].id)) expected_edges.emplace(g.nodes[u].id, g.nodes[v].id);
        for (auto [u, v] : sbs.edges) got_edges.emplace(sbs.nodes[u].id, sbs.nodes[v].id);
        EXPECT_EQ(got_edges, expected_edges);

        EXPECT_EQ(sbs.sensitive_count(), g.sensitive_count());
        EXPECT_TRUE(std::includes(ids.begin(), ids.end(), prev.begin(), prev.end())) << "monotone in N";
        prev = ids;

        const auto twice = extract_sbs(sbs, cfg);
        EXPECT_EQ(twice.to_json().dump(), sbs.to_json().dump()) << "idempotent";
      }
    }
  }
}

TEST(ExtractSbs, IndependentOfNodeAndEdgeOrder) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_graph(rng, 40);
    std::vector<std::uint32_t> perm(g.nodes.size());
    for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    CallGraph h;
    std::vector<std::uint32_t> where(perm.size());
    for (std::uint32_t k = 0; k < perm.size(); ++k) {
      h.nodes.push_back(g.nodes[perm[k]]);
      where[perm[k]] = k;
    }
    for (auto [u, v] : g.edges) h.edges.emplace_back(where[u], where[v]);
    rng.shuffle(h.edges);
    for (std::size_t hops = 0; hops <= 2; ++hops)
      EXPECT_EQ(id_set(extract_sbs(g, {hops})), id_set(extract_sbs(h, {hops})));
  }
}

TEST(CallGraph, JsonRoundTripAndValidation) {
  const auto doc = nlohmann::json::parse(R"({"nodes":[{"id":10,"sig":"a","sensitive":false,"features":{"3":5.0}},
      {"id":4,"sig":"b","sensitive":true,"features":{}}],"edges":[[10,4],[10,4],[4,10]],"label":2,
      "app_features":{"7":1}})");
  const auto g = CallGraph::from_json(doc);
  EXPECT_EQ(g.edges.size(), 2u);  // parallel calls collapse
  EXPECT_EQ(g.label, 2);
  EXPECT_EQ(g.nodes[0].features, (SparseFeatures{{3, 5.0}}));
  EXPECT_EQ(CallGraph::from_json(nlohmann::json::parse(g.serialize())).serialize(), g.serialize());

  EXPECT_THROW(CallGraph::from_json(nlohmann::json::parse(R"({"nodes":[{"id":1},{"id":1}],"edges":[]})")), Error);
  EXPECT_THROW(CallGraph::from_json(nlohmann::json::parse(R"({"nodes":[{"id":1}],"edges":[[1,2]]})")), Error);
  EXPECT_THROW(CallGraph::from_json(nlohmann::json::parse(R"({"nodes":[]})")), Error);

  const auto dir = std::filesystem::temp_directory_path() / "dwfs_graph_test";
  std::filesystem::create_directories(dir);
  save_graph(g, dir / "g.json");
  EXPECT_EQ(load_graph(dir / "g.json").serialize(), g.serialize());
  std::filesystem::remove_all(dir);
}

TEST(AssignNodeFeatures, Examples) {
  const auto schema = FeatureSchema::from_names({"op:0", "op:1", "op:2", "op:3", "api:0", "perm:0"});
  CallGraph g = make_graph({"a", "b"}, {{0, 1}});
  g.nodes[0].features = {{3, 5.0}, {4, 1.0}};
  g.app_features = {{5, 1.0}};

  auto fg = assign_node_features(g, {3}, schema);
  ASSERT_EQ(fg.n_features, 1u);
  EXPECT_EQ(fg.x, (std::vector<double>{5.0, 0.0}));

  fg = assign_node_features(g, {}, schema);
  EXPECT_EQ(fg.n_features, 0u);
  EXPECT_EQ(fg.n_nodes, 2u);
  EXPECT_EQ(fg.warnings.size(), 1u);

  fg = assign_node_features(g, {4, 5}, schema);
  EXPECT_EQ(fg.x, (std::vector<double>{1.0, 1.0, 0.0, 1.0}));

  EXPECT_THROW(assign_node_features(g, {6}, schema), Error);
}

TEST(GraphStats, MeansMediansAndReduction) {
  const FamilyLabelMap fam({"a", "b", "c"});
  const std::vector<GraphSummary> reduced{{0, 10, 4, 100}, {0, 20, 6, 200}, {2, 5, 1, 50}};
  const std::vector<GraphSummary> original{{0, 40, 40, 0}, {0, 60, 60, 0}, {2, 10, 10, 0}};
  const auto st = graph_stats(reduced, fam, &original);
  ASSERT_EQ(st.rows.size(), 3u);  // family "b" omitted
  EXPECT_EQ(st.rows[0].group, "a");
  EXPECT_EQ(st.rows[0].mean_nodes, 15.0);
  EXPECT_EQ(st.rows[0].median_nodes, 15.0);
  EXPECT_EQ(st.rows[0].total_bytes, 300u);
  EXPECT_DOUBLE_EQ(*st.rows[0].node_reduction, 0.7);
  EXPECT_EQ(st.rows[1].group, "c");
  EXPECT_EQ(st.overall().graphs, 3u);
  EXPECT_DOUBLE_EQ(st.overall().median_nodes, 10.0);
  EXPECT_DOUBLE_EQ(*st.overall().combined_reduction, 1.0 - 46.0 / 220.0);
  EXPECT_FALSE(graph_stats(reduced, fam).rows[0].node_reduction.has_value());
  EXPECT_NE(st.to_markdown().find("| c | 1 |"), std::string::npos);
  EXPECT_TRUE(graph_stats({}, fam).rows.empty());
}
