#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dwfs/common.hpp"
#include "dwfs/dwfs.hpp"
#include "dwfs/strategy.hpp"

using namespace dwfs;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> random_profile(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double s = 0;
  for (auto& x : v) s += (x = rng.uniform());
  for (auto& x : v) x /= s;
  return v;
}

// Straight-line reference for the scoring pipeline, written without the
// library's helpers.
struct Reference {
  std::vector<double> scores;
  std::vector<std::size_t> selected;
};

Reference reference_scores(const ImportanceProfile& base, const std::vector<ImportanceProfile>& obf, double beta,
                           double theta_q) {
  const std::size_t m = obf.size(), d = base.importances.size();
  std::vector<double> a(m);
  double sum = 0;
  for (std::size_t j = 0; j < m; ++j) {
    a[j] = (base.accuracy - obf[j].accuracy) / base.accuracy;
    if (a[j] < 0) a[j] = 0;
    sum += a[j];
  }
  for (auto& x : a) x = sum > 0 ? x / sum : 1.0 / double(m);
  double abar = 0;
  for (double x : a) abar += x;
  abar /= double(m);
  const double w2 = beta * abar, w1 = 1.0 - w2;
  Reference out;
  for (std::size_t i = 0; i < d; ++i) {
    double delta = 0;
    for (std::size_t j = 0; j < m; ++j) delta += a[j] * std::fabs(base.importances[i] - obf[j].importances[i]);
    out.scores.push_back(w1 * base.importances[i] - w2 * delta);
  }
  std::vector<double> sorted = out.scores;
  std::sort(sorted.begin(), sorted.end());
  const double h = double(d - 1) * theta_q;
  const std::size_t lo = std::size_t(h);
  const double theta =
      lo + 1 < d ? sorted[lo] + (h - double(lo)) * (sorted[lo + 1] - sorted[lo]) : sorted[lo];
  for (std::size_t i = 0; i < d; ++i)
    if (out.scores[i] > theta) out.selected.push_back(i);
  return out;
}

LabeledFeatureDataset planted(std::size_t n, bool destroy_fragile, std::uint64_t seed) {
  // col 0: class signal, kept under obfuscation; col 1: same signal, zeroed
  // under obfuscation; cols 2..5: noise.
  Rng rng(seed);
  LabeledFeatureDataset ds;
  ds.schema = FeatureSchema::from_names({"robust", "fragile", "n0", "n1", "n2", "n3"});
  ds.rows = n;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = static_cast<int>(r % 2);
    const bool flip = rng.bernoulli(0.2);
    ds.values.push_back(rng.uniform() + ((y ^ int(flip)) ? 0.8 : 0.0));
    const bool flip2 = rng.bernoulli(0.2);
    const double fragile = rng.uniform() + ((y ^ int(flip2)) ? 0.8 : 0.0);
    ds.values.push_back(destroy_fragile ? 0.0 : fragile);
    for (int k = 0; k < 4; ++k) ds.values.push_back(rng.uniform());
    ds.labels.push_back(y);
  }
  return ds;
}

}  // namespace

TEST(ImpactFactor, Examples) {
  EXPECT_NEAR(impact_factor(0.90, 0.81), 0.10, 1e-12);
  EXPECT_EQ(impact_factor(0.90, 0.90), 0.0);
  EXPECT_NEAR(impact_factor(0.80, 0.88), -0.10, 1e-12);
  try {
    impact_factor(0.0, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
}

TEST(NormalizeImpacts, Examples) {
  const auto a = normalize_impacts(std::vector<double>{0.2, 0.3, 0.5});
  EXPECT_NEAR(a[0], 0.2, 1e-15);
  EXPECT_NEAR(a[1], 0.3, 1e-15);
  EXPECT_NEAR(a[2], 0.5, 1e-15);
  EXPECT_EQ(normalize_impacts(std::vector<double>{0.1, 0.1}), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(normalize_impacts(std::vector<double>{-0.2, 0.0}), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(normalize_impacts(std::vector<double>{-0.3, 0.2}), (std::vector<double>{0.0, 1.0}));
}

TEST(NormalizeImpacts, SumsToOneAndNonNegative) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(1 + rng.index(10));
    for (auto& x : a) x = rng.uniform(-0.5, 0.8);
    const auto n = normalize_impacts(a);
    double s = 0;
    for (double x : n) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(StabilityDelta, Examples) {
  const std::vector<double> I{0.6, 0.4};
  const std::vector<std::vector<double>> obf{{0.4, 0.6}};
  const auto d = stability_delta(I, obf, std::vector<double>{1.0});
  EXPECT_NEAR(d[0], 0.2, 1e-15);
  EXPECT_NEAR(d[1], 0.2, 1e-15);

  const std::vector<std::vector<double>> same{I, I};
  EXPECT_EQ(stability_delta(I, same, std::vector<double>{0.5, 0.5}), (std::vector<double>{0, 0}));

  const std::vector<double> one{0.5};
  const std::vector<std::vector<double>> two{{0.7}, {0.5}};
  EXPECT_NEAR(stability_delta(one, two, std::vector<double>{0.5, 0.5})[0], 0.1, 1e-15);

  const std::vector<std::vector<double>> bad{{0.1}};
  EXPECT_THROW(stability_delta(I, bad, std::vector<double>{1.0}), Error);
  EXPECT_THROW(stability_delta(I, obf, std::vector<double>{0.5, 0.5}), Error);
}

TEST(MeanImpact, Examples) {
  EXPECT_NEAR(mean_impact(normalize_impacts(std::vector<double>{0.2, 0.3, 0.5})), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(mean_impact(std::vector<double>{1.0}), 1.0);
  EXPECT_EQ(mean_impact(normalize_impacts(std::vector<double>{0.1, 0.2, 0.3, 0.4})), 0.25);
  EXPECT_THROW(mean_impact(std::vector<double>{}), Error);
}

TEST(Weights, Examples) {
  auto w = weights(0.0, 0.4);
  EXPECT_EQ(w.importance, 1.0);
  EXPECT_EQ(w.stability, 0.0);
  w = weights(1.0, 0.25);
  EXPECT_EQ(w.importance, 0.75);
  EXPECT_EQ(w.stability, 0.25);
  w = weights(0.7, 0.0);
  EXPECT_EQ(w.importance, 1.0);
  EXPECT_EQ(w.stability, 0.0);
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const auto v = weights(rng.uniform(), rng.uniform());
    EXPECT_NEAR(v.importance + v.stability, 1.0, 1e-12);
  }
}

TEST(CompositeScores, Examples) {
  EXPECT_EQ(composite_scores(std::vector<double>{0.7, 0.3}, std::vector<double>{0.5, 0.9}, 1, 0),
            (std::vector<double>{0.7, 0.3}));
  EXPECT_NEAR(composite_scores(std::vector<double>{0.4}, std::vector<double>{0.4}, 0.75, 0.25)[0], 0.2, 1e-15);
  EXPECT_LT(composite_scores(std::vector<double>{0.0}, std::vector<double>{0.1}, 0.9, 0.1)[0], 0.0);
  EXPECT_THROW(composite_scores(std::vector<double>{0.1}, std::vector<double>{0.1, 0.2}, 1, 0), Error);
}

TEST(CompositeScores, Monotone) {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    const double w2 = rng.uniform(0.01, 1), w1 = 1 - w2;
    std::vector<double> I{rng.uniform()}, d{rng.uniform()};
    const double s = composite_scores(I, d, w1, w2)[0];
    std::vector<double> d2{d[0] + rng.uniform(0.01, 0.5)}, I2{I[0] + rng.uniform(0.01, 0.5)};
    EXPECT_LT(composite_scores(I, d2, w1, w2)[0], s);
    if (w1 > 0) EXPECT_GT(composite_scores(I2, d, w1, w2)[0], s);
  }
}

TEST(SelectFeatures, Examples) {
  const std::vector<double> s{0.5, 0.1, 0.3};
  EXPECT_EQ(select_features(s, 0.2), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(select_features(s, 0.5).empty());
  EXPECT_EQ(select_features(s, -kInf), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SelectFeatures, MonotoneInTheta) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(1 + rng.index(20));
    for (auto& x : s) x = rng.uniform(-1, 1);
    const double a = rng.uniform(-1, 1), b = a + rng.uniform(0, 1);
    const auto lo = select_features(s, a), hi = select_features(s, b);
    EXPECT_TRUE(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
  }
}

TEST(Quantile, Interpolates) {
  const std::vector<double> v{4, 1, 3, 2};
  EXPECT_EQ(quantile(v, 0.0), 1.0);
  EXPECT_EQ(quantile(v, 1.0), 4.0);
  EXPECT_EQ(quantile(v, 0.5), 2.5);
  EXPECT_EQ(quantile(v, 0.75), 3.25);
  EXPECT_EQ(quantile(std::vector<double>{7}, 0.75), 7.0);
}

TEST(Strategies, ClassesAndIds) {
  EXPECT_EQ(all_strategies().size(), 11u);
  EXPECT_EQ(strategy_class(parse_strategy("manifest")), StrategyClass::Trivial);
  EXPECT_EQ(strategy_class(parse_strategy("alignment")), StrategyClass::Trivial);
  EXPECT_EQ(strategy_class(parse_strategy("reflection")), StrategyClass::NonTrivial);
  EXPECT_EQ(default_strategies().size(), 7u);
  EXPECT_THROW(parse_strategy("rot13"), Error);
}

TEST(CombineProfiles, MatchesStraightLineReferenceBitForBit) {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const std::size_t d = 1 + rng.index(10), m = 1 + rng.index(3);
    ImportanceProfile base{random_profile(rng, d), rng.uniform(0.5, 1.0)};
    std::vector<ImportanceProfile> obf;
    std::vector<StrategyImpact> per;
    for (std::size_t j = 0; j < m; ++j) {
      obf.push_back({random_profile(rng, d), rng.uniform(0.3, 1.0)});
      per.push_back({"c" + std::to_string(j), obf.back(), 0, 0});
    }
    DwfsConfig cfg;
    cfg.beta = rng.uniform();
    const auto r = combine_profiles(FeatureSchema::from_names([&] {
                                      std::vector<std::string> n;
                                      for (std::size_t i = 0; i < d; ++i) n.push_back("f" + std::to_string(i));
                                      return n;
                                    }()),
                                    base, per, cfg);
    const auto ref = reference_scores(base, obf, cfg.beta, cfg.theta_quantile);
    EXPECT_EQ(r.scores, ref.scores) << "trial " << t;
    EXPECT_EQ(r.selected, ref.selected) << "trial " << t;
    EXPECT_NEAR(r.w1 + r.w2, 1.0, 1e-12);
    for (double x : r.delta_importance) EXPECT_GE(x, 0.0);
  }
}

TEST(CombineProfiles, NoAccuracyDropFallsBackToUniform) {
  const auto schema = FeatureSchema::from_names({"a", "b"});
  ImportanceProfile base{{0.6, 0.4}, 0.9};
  const auto r = combine_profiles(schema, base, {{"x", {{0.5, 0.5}, 0.9}, 0, 0}}, DwfsConfig{});
  EXPECT_EQ(r.per_strategy[0].alpha_raw, 0.0);
  EXPECT_EQ(r.per_strategy[0].alpha_norm, 1.0);
  EXPECT_EQ(r.alpha_bar, 1.0);
  EXPECT_EQ(r.w2, 0.5);
  EXPECT_TRUE(std::isfinite(r.scores[0]) && std::isfinite(r.scores[1]));
}

TEST(CombineProfiles, RawAlphaBarSwitch) {
  const auto schema = FeatureSchema::from_names({"a", "b"});
  ImportanceProfile base{{0.6, 0.4}, 1.0};
  std::vector<StrategyImpact> per{{"x", {{0.5, 0.5}, 0.9}, 0, 0}, {"y", {{0.4, 0.6}, 0.7}, 0, 0}};
  DwfsConfig cfg;
  cfg.alpha_bar_source = AlphaBarSource::Raw;
  EXPECT_NEAR(combine_profiles(schema, base, per, cfg).alpha_bar, 0.2, 1e-12);
  cfg.alpha_bar_source = AlphaBarSource::Normalized;
  EXPECT_EQ(combine_profiles(schema, base, per, cfg).alpha_bar, 0.5);
}

TEST(RunDwfs, KeepsInvariantFeatureAndDropsDestroyedOne) {
  DwfsCorpus corpus;
  corpus.unobfuscated = planted(300, false, 10);
  for (std::uint64_t j = 0; j < 2; ++j) {
    auto obf = planted(300, true, 10);
    obf.condition = "obf" + std::to_string(j);
    corpus.obfuscated.push_back(obf);
  }
  DwfsConfig cfg;
  cfg.beta = 1.0;
  cfg.theta_quantile = 0.5;
  cfg.forest.n_trees = 50;
  cfg.forest.seed = 3;
  const auto r = run_dwfs(corpus, cfg);
  EXPECT_TRUE(std::count(r.selected.begin(), r.selected.end(), 0u));
  EXPECT_FALSE(std::count(r.selected.begin(), r.selected.end(), 1u));
  EXPECT_EQ(r.manifest["conditions"].size(), 3u);
}

TEST(RunDwfs, BetaZeroIgnoresObfuscatedContents) {
  DwfsCorpus a;
  a.unobfuscated = planted(120, false, 11);
  a.obfuscated = {planted(120, true, 12), planted(120, false, 13)};
  DwfsCorpus b = a;
  b.obfuscated = {planted(120, true, 99), planted(120, true, 98)};
  DwfsConfig cfg;
  cfg.beta = 0.0;
  cfg.forest.n_trees = 10;
  const auto ra = run_dwfs(a, cfg), rb = run_dwfs(b, cfg);
  EXPECT_EQ(ra.selected, rb.selected);
  EXPECT_EQ(ra.scores, ra.unobfuscated.importances);
}

TEST(RunDwfs, DeterministicAndJsonRoundTrip) {
  DwfsCorpus c;
  c.unobfuscated = planted(100, false, 1);
  c.obfuscated = {planted(100, true, 2)};
  DwfsConfig cfg;
  cfg.forest.n_trees = 8;
  const auto r1 = run_dwfs(c, cfg), r2 = run_dwfs(c, cfg);
  EXPECT_EQ(r1.to_json().dump(), r2.to_json().dump());
  const auto back = DwfsResult::from_json(nlohmann::ordered_json::parse(r1.to_json().dump()));
  EXPECT_EQ(back.to_json().dump(), r1.to_json().dump());

  cfg.theta = -kInf;
  const auto all = run_dwfs(c, cfg);
  EXPECT_EQ(all.selected.size(), 6u);
  EXPECT_EQ(DwfsResult::from_json(nlohmann::ordered_json::parse(all.to_json().dump())).theta, -kInf);
}

TEST(RunDwfs, Errors) {
  DwfsCorpus c;
  c.unobfuscated = planted(20, false, 1);
  EXPECT_THROW(run_dwfs(c, DwfsConfig{}), Error);
  DwfsConfig bad;
  bad.beta = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  CorpusManifest m;
  m.schema = c.unobfuscated.schema;
  EXPECT_THROW(run_dwfs(m, DwfsConfig{}), Error);
}
