#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "bimanual/errors.hpp"
#include "bimanual/evaluation.hpp"
#include "oracles.hpp"

using namespace bimanual;

namespace {

std::vector<double> peaked(Action a, double p = 0.9) {
  std::vector<double> d(kNumActions, (1.0 - p) / (kNumActions - 1));
  d[index(a)] = p;
  return d;
}

std::vector<double> random_distribution(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> d(kNumActions);
  for (double& x : d) x = u(rng);
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  for (double& x : d) x /= s;
  return d;
}

}  // namespace

TEST(Score, PerfectPredictions) {
  std::vector<Action> truth{Action::idle, Action::pour, Action::stir, Action::pour};
  std::vector<std::vector<double>> pred;
  for (Action a : truth) pred.push_back(peaked(a));
  const MetricsReport r = score(pred, truth, 1);
  EXPECT_EQ(r.macro.f1, 1.0);
  EXPECT_EQ(r.micro.f1, 1.0);
  for (std::size_t t = 0; t < kNumActions; ++t)
    for (std::size_t p = 0; p < kNumActions; ++p)
      if (t != p) EXPECT_EQ(r.confusion.counts[t][p], 0);
}

TEST(Score, WorkedFourFrameExample) {
  const Action a = Action::approach, b = Action::lift;
  const std::vector<Action> truth{a, a, b, b};
  const std::vector<std::vector<double>> pred{peaked(a), peaked(b), peaked(b), peaked(b)};
  const MetricsReport r = score(pred, truth, 1);
  EXPECT_DOUBLE_EQ(r.per_class[index(a)].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[index(a)].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[index(a)].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[index(b)].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[index(b)].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[index(b)].f1, 0.8);
  EXPECT_DOUBLE_EQ(r.macro.f1, (2.0 / 3.0 + 0.8) / 2.0);
  EXPECT_NEAR(r.macro.f1, 0.733, 5e-4);
}

TEST(Score, TopKMembership) {
  std::vector<double> d(kNumActions, 0.0);
  d[index(Action::place)] = 0.5;
  d[index(Action::pour)] = 0.3;
  d[index(Action::hold)] = 0.2;
  const std::vector<Action> truth{Action::pour};
  EXPECT_EQ(score({d}, truth, 3).accuracy, 1.0);
  EXPECT_EQ(score({d}, truth, 1).accuracy, 0.0);
  const MetricsReport r3 = score({d}, truth, 3);
  EXPECT_EQ(r3.confusion.counts[index(Action::pour)][index(Action::pour)], 1);
  const MetricsReport r1 = score({d}, truth, 1);
  EXPECT_EQ(r1.confusion.counts[index(Action::pour)][index(Action::place)], 1);
}

TEST(Score, TiesBreakByCanonicalIndex) {
  const std::vector<double> flat(kNumActions, 1.0 / kNumActions);
  const auto ranked = ranked_classes(flat);
  for (std::size_t i = 0; i < ranked.size(); ++i) EXPECT_EQ(ranked[i], static_cast<int>(i));
  EXPECT_EQ(score({flat}, std::vector<Action>{Action::retreat}, 3).accuracy, 1.0);
  EXPECT_EQ(score({flat}, std::vector<Action>{Action::lift}, 3).accuracy, 0.0);
}

TEST(Score, LengthMismatch) {
  EXPECT_THROW(score({peaked(Action::idle)}, std::vector<Action>{}, 1), InvalidArgument);
}

TEST(Score, FuzzedIdentitiesAndOracle) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<std::vector<double>> pred;
    std::vector<Action> truth;
    std::vector<int> argmax, truth_idx;
    for (std::size_t i = 0; i < n; ++i) {
      pred.push_back(random_distribution(rng));
      truth.push_back(static_cast<Action>(rng() % 5));
      argmax.push_back(static_cast<int>(std::max_element(pred.back().begin(), pred.back().end()) - pred.back().begin()));
      truth_idx.push_back(static_cast<int>(index(truth.back())));
    }
    const MetricsReport r1 = score(pred, truth, 1);
    ASSERT_DOUBLE_EQ(r1.micro.precision, r1.accuracy);
    ASSERT_DOUBLE_EQ(r1.micro.recall, r1.accuracy);
    ASSERT_DOUBLE_EQ(r1.micro.f1, r1.accuracy);
    ASSERT_NEAR(r1.macro.f1, oracle::macro_f1(oracle::top1_counts(argmax, truth_idx)), 1e-12);
    const MetricsReport r3 = score(pred, truth, 3);
    ASSERT_GE(r3.accuracy, r1.accuracy);
    const auto norm = r1.confusion.normalized();
    for (std::size_t t = 0; t < kNumActions; ++t) {
      if (r1.confusion.support(static_cast<Action>(t)) == 0) continue;
      ASSERT_NEAR(std::accumulate(norm[t].begin(), norm[t].end(), 0.0), 1.0, 1e-9);
    }
    for (const auto* rep : {&r1, &r3}) {
      for (const ClassMetrics& m : rep->per_class) {
        ASSERT_GE(m.f1, 0.0);
        ASSERT_LE(m.f1, 1.0);
      }
    }
  }
}

TEST(Score, MacroInvariantUnderRelabeling) {
  std::mt19937_64 rng(53);
  std::vector<int> perm(kNumActions);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> pred, pred_p;
    std::vector<Action> truth, truth_p;
    for (int i = 0; i < 40; ++i) {
      // Distinct probabilities so no tie-breaking is involved.
      std::vector<double> d(kNumActions);
      std::iota(d.begin(), d.end(), 1.0);
      std::shuffle(d.begin(), d.end(), rng);
      std::vector<double> dp(kNumActions);
      for (std::size_t k = 0; k < kNumActions; ++k) dp[static_cast<std::size_t>(perm[k])] = d[k];
      pred.push_back(d);
      pred_p.push_back(dp);
      const int t = static_cast<int>(rng() % kNumActions);
      truth.push_back(static_cast<Action>(t));
      truth_p.push_back(static_cast<Action>(perm[static_cast<std::size_t>(t)]));
    }
    ASSERT_NEAR(score(pred, truth, 1).macro.f1, score(pred_p, truth_p, 1).macro.f1, 1e-12);
    ASSERT_NEAR(score(pred, truth, 3).macro.f1, score(pred_p, truth_p, 3).macro.f1, 1e-12);
  }
}

TEST(Segments, Pooling) {
  const std::vector<Action> labels{Action::idle, Action::idle, Action::approach, Action::approach, Action::approach};
  const auto segs = pool_segments(labels);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0], (Segment{Action::idle, 0, 1}));
  EXPECT_EQ(segs[1], (Segment{Action::approach, 2, 4}));
  EXPECT_EQ(pool_segments(std::vector<Action>{Action::cut}).size(), 1u);
  std::vector<Action> alt;
  for (int i = 0; i < 9; ++i) alt.push_back(i % 2 ? Action::saw : Action::hold);
  EXPECT_EQ(pool_segments(alt).size(), 9u);
  EXPECT_THROW(pool_segments(std::vector<Action>{}), InvalidArgument);
}

TEST(Segments, ExpandInvertsPool) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Action> labels;
    for (int i = 0, n = 1 + static_cast<int>(rng() % 80); i < n; ++i)
      labels.push_back(static_cast<Action>(rng() % 3));
    ASSERT_EQ(expand_segments(pool_segments(labels)), labels);
  }
}

TEST(Ablation, Transforms) {
  Sample s;
  for (int f = 0; f < 10; ++f) {
    s.graph.nodes.push_back({ObjectClass::cup, 0, f, {}});
    s.graph.nodes.push_back({ObjectClass::right_hand, 1, f, {}});
    s.centroids.push_back({100.0 * f, 0, 500});
    s.centroids.push_back({0, 200, 500});
  }
  for (int f = 0; f < 10; ++f) {
    s.graph.edges.push_back({{RelationSet{Relation::contact, Relation::above}, false}, 2 * f, 2 * f + 1});
    s.graph.edges.push_back({{RelationSet{Relation::below}, false}, 2 * f + 1, 2 * f});
    if (f > 0) {
      s.graph.edges.push_back({{RelationSet{}, true}, 2 * (f - 1), 2 * f});
      s.graph.edges.push_back({{RelationSet{}, true}, 2 * (f - 1) + 1, 2 * f + 1});
    }
  }
  ASSERT_EQ(check_invariants(s.graph), "");

  const Sample full = ablation_transform(s, AblationMode::full);
  EXPECT_EQ(full.graph, s.graph);
  EXPECT_EQ(full.centroids, s.centroids);

  const Sample contact = ablation_transform(s, AblationMode::contact_only);
  EXPECT_EQ(contact.graph.edges.size(), s.graph.edges.size());
  EXPECT_EQ(contact.graph.edges[0].attr.relations, RelationSet{Relation::contact});
  EXPECT_TRUE(contact.graph.edges[1].attr.relations.empty());
  EXPECT_EQ(contact.graph.temporal_edge_count(), 18u);

  const Sample cent = ablation_transform(s, AblationMode::centroids);
  EXPECT_EQ(cent.graph.spatial_edge_count(), 0u);
  EXPECT_EQ(cent.graph.temporal_edge_count(), 18u);
  EXPECT_EQ(cent.graph.node_width(), 17u);
  EXPECT_DOUBLE_EQ(cent.graph.nodes[18].extra[0], 0.9);
  EXPECT_DOUBLE_EQ(cent.graph.nodes[19].extra[1], 0.2);

  const Sample single = ablation_transform(s, AblationMode::no_temporal);
  EXPECT_EQ(single.graph.nodes.size(), 2u);
  EXPECT_EQ(single.graph.temporal_edge_count(), 0u);
  EXPECT_EQ(single.graph.spatial_edge_count(), 2u);
  for (const SceneNode& n : single.graph.nodes) EXPECT_EQ(n.frame, 9);
  for (const Sample* x : {&contact, &cent, &single}) EXPECT_EQ(check_invariants(x->graph), "");
}

TEST(Ablation, Names) {
  for (auto m : {AblationMode::full, AblationMode::contact_only, AblationMode::centroids, AblationMode::no_temporal})
    EXPECT_EQ(parse_ablation(ablation_name(m)), m);
  EXPECT_THROW(parse_ablation("relations_only"), ConfigError);
}

TEST(Reports, MetricsCsvLayout) {
  const std::vector<Action> truth{Action::idle, Action::idle, Action::pour, Action::pour};
  const std::vector<std::vector<double>> pred{peaked(Action::idle), peaked(Action::pour), peaked(Action::pour),
                                              peaked(Action::pour)};
  std::ostringstream out;
  write_metrics_csv(out, score(pred, truth, 1), score(pred, truth, 3));
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0].substr(0, 16), "class,top1_preci");
  EXPECT_EQ(lines[1].substr(0, 5), "idle,");
  EXPECT_EQ(lines[2].substr(0, 5), "pour,");
  EXPECT_EQ(lines[3].substr(0, 6), "Micro,");
  EXPECT_EQ(lines[4].substr(0, 6), "Macro,");
  EXPECT_EQ(lines[5].substr(0, 9), "Weighted,");
}

TEST(Reports, SvgOutputsAreWellFormed) {
  ConfusionMatrix cm;
  cm.counts[0][0] = 3;
  cm.counts[0][1] = 1;
  std::ostringstream a, b;
  write_confusion_svg(a, cm, "t <1>");
  write_timeline_svg(b, {{"right", {{Action::idle, 0, 9}, {Action::pour, 10, 30}}}}, 30.0);
  for (const std::string& s : {a.str(), b.str()}) {
    EXPECT_EQ(s.rfind("<svg", 0) == 0 || s.rfind("<?xml", 0) == 0, true);
    EXPECT_NE(s.find("</svg>"), std::string::npos);
  }
  EXPECT_NE(a.str().find("t &lt;1&gt;"), std::string::npos);
  EXPECT_NE(b.str().find(default_palette()[index(Action::pour)]), std::string::npos);
}
