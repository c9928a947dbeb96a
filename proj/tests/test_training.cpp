#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "bimanual/data.hpp"
#include "bimanual/errors.hpp"
#include "bimanual/evaluation.hpp"
#include "bimanual/training.hpp"

using namespace bimanual;

namespace {

Recording small_recording(int frames_limit = 100) {
  const auto scripts = builtin_scripts("kitchen-mini");
  Recording r;
  r.id = "s0-t0-r0";
  r.fps = scripts[0].fps;
  r.frames = generate(scripts[0], 5);
  r.frames.resize(std::min<std::size_t>(r.frames.size(), static_cast<std::size_t>(frames_limit)));
  for (FrameRecord& f : r.frames) f.recording_id = r.id;
  return r;
}

Sample toy_sample(ObjectClass c, Action target) {
  Sample s;
  s.graph.nodes = {{c, 0, 0, {}}, {ObjectClass::right_hand, 1, 0, {}}};
  s.graph.edges = {{{RelationSet{Relation::contact}, false}, 1, 0}, {{RelationSet{Relation::contact}, false}, 0, 1}};
  s.target = target;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.shape.latent = 16;
  c.shape.steps = 2;
  c.core_init_gain = 1.0;  // a two-step core does not need damping
  c.batch_size = 16;
  c.max_epochs = 20;
  c.patience = 20;
  c.seed = 3;
  return c;
}

std::vector<double> flat(const GraphNetWeights<double>& w) {
  std::vector<double> out;
  w.for_each([&](const std::string&, const Mat<double>& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

}  // namespace

TEST(Samples, TwoPerFrameWithMirroredLeft) {
  const Recording rec = small_recording();
  const auto graphs = recording_graphs(rec, RelationConfig{}, SmoothingConfig{});
  ASSERT_EQ(graphs.size(), rec.frames.size());
  const auto samples = make_samples(rec, graphs);
  ASSERT_EQ(samples.size(), 2 * rec.frames.size());
  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    const Sample& right = samples[2 * i];
    const Sample& left = samples[2 * i + 1];
    EXPECT_FALSE(right.mirrored);
    EXPECT_TRUE(left.mirrored);
    EXPECT_EQ(right.target, rec.frames[i].truth_right);
    EXPECT_EQ(left.target, rec.frames[i].truth_left);
    EXPECT_EQ(left.graph, mirror(right.graph));
    EXPECT_EQ(check_invariants(right.graph), "");
  }
  // Frame 0 has a window of one frame.
  std::set<std::int64_t> frames;
  for (const SceneNode& n : samples[0].graph.nodes) frames.insert(n.frame);
  EXPECT_EQ(frames.size(), 1u);
  std::set<std::int64_t> later;
  for (const SceneNode& n : samples[40].graph.nodes) later.insert(n.frame);
  EXPECT_EQ(later.size(), 10u);
}

TEST(Samples, StrideAndMisalignment) {
  const Recording rec = small_recording();
  auto graphs = recording_graphs(rec, RelationConfig{}, SmoothingConfig{});
  EXPECT_EQ(make_samples(rec, graphs, 10, 4).size(), 2 * ((rec.frames.size() + 3) / 4));
  graphs.pop_back();
  EXPECT_THROW(make_samples(rec, graphs), DataError);
}

TEST(Batches, IdleRetainedOneInThree) {
  const std::vector<Action> idle(300, Action::idle);
  const auto batches = make_batches(idle, 512, 1);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), 100u);
}

TEST(Batches, PlainShuffleWithoutIdleOrHold) {
  std::vector<Action> t;
  for (int i = 0; i < 100; ++i) t.push_back(i % 2 ? Action::pour : Action::stir);
  const auto batches = make_batches(t, 32, 7);
  ASSERT_EQ(batches.size(), 4u);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::vector<std::size_t> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(all, sorted);
  EXPECT_EQ(make_batches(t, 32, 7), batches);
  EXPECT_NE(make_batches(t, 32, 8), batches);
}

TEST(Batches, NonRebalancedAlwaysKept) {
  std::vector<Action> t;
  for (int i = 0; i < 1000; ++i)
    t.push_back(i % 5 == 0 ? Action::cut : (i % 2 ? Action::hold : Action::idle));
  const auto batches = make_batches(t, 64, 3);
  std::size_t cuts = 0, rebalanced = 0;
  for (const auto& b : batches) {
    EXPECT_LE(b.size(), 64u);
    for (std::size_t i : b) (t[i] == Action::cut ? cuts : rebalanced)++;
  }
  EXPECT_EQ(cuts, 200u);
  EXPECT_NEAR(static_cast<double>(rebalanced), 800.0 / 3, 40);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  NetworkShape s;
  s.latent = 4;
  s.steps = 1;
  auto w = init_weights<double>(s, 1);
  const auto before = flat(w);
  auto st = OptimizerState<double>::for_weights(w);
  adam_step(w, w.zeros_like(), st);
  EXPECT_EQ(flat(w), before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  NetworkShape s;
  s.latent = 4;
  s.steps = 1;
  auto w = init_weights<double>(s, 1);
  auto g = w.zeros_like();
  g.head.bias(0, 0) = 1.0;
  const double before = w.head.bias(0, 0);
  auto st = OptimizerState<double>::for_weights(w, 1e-3);
  adam_step(w, g, st);
  EXPECT_NEAR(before - w.head.bias(0, 0), 1e-3, 1e-10);
}

TEST(Adam, NonFiniteGradientDiverges) {
  NetworkShape s;
  s.latent = 4;
  s.steps = 1;
  auto w = init_weights<double>(s, 1);
  auto g = w.zeros_like();
  g.head.bias(0, 0) = NAN;
  auto st = OptimizerState<double>::for_weights(w);
  EXPECT_THROW(adam_step(w, g, st), DivergenceError);
}

TEST(Adam, RepeatedBatchLossMostlyDecreases) {
  NetworkShape s;
  s.latent = 8;
  s.steps = 2;
  auto w = init_weights<double>(s, 2, 0.5);
  auto st = OptimizerState<double>::for_weights(w, 1e-3);
  std::vector<Sample> data;
  for (int i = 0; i < 8; ++i) data.push_back(toy_sample(i % 2 ? ObjectClass::cup : ObjectClass::bowl, i % 2 ? Action::pour : Action::stir));
  std::vector<const SceneGraph*> graphs;
  std::vector<int> targets;
  for (const Sample& x : data) {
    graphs.push_back(&x.graph);
    targets.push_back(static_cast<int>(index(x.target)));
  }
  const Graph<double> batch = make_batch<double>(graphs);
  double prev = INFINITY;
  int violations = 0;
  for (int step = 0; step < 50; ++step) {
    auto grad = w.zeros_like();
    const auto fwd = encode_process_decode_forward(batch, w, true);
    const double loss = backward(*fwd.cache, targets, 1.0 / 8, grad);
    if (loss > prev + 1e-12) ++violations;
    prev = loss;
    adam_step(w, grad, st);
  }
  EXPECT_LE(violations, 5);
}

TEST(Train, SeparableTwoClassProblem) {
  std::vector<Sample> train_set, val_set;
  for (int i = 0; i < 64; ++i) {
    train_set.push_back(toy_sample(ObjectClass::cup, Action::pour));
    train_set.push_back(toy_sample(ObjectClass::banana, Action::cut));
  }
  for (int i = 0; i < 8; ++i) {
    val_set.push_back(toy_sample(ObjectClass::cup, Action::pour));
    val_set.push_back(toy_sample(ObjectClass::banana, Action::cut));
  }
  const TrainResult r = train(train_set, val_set, tiny_config());
  EXPECT_GE(r.best_val_macro_f1, 0.99);
  EXPECT_LE(r.best_epoch, 20);
  // Retained weights are the ones from the logged best epoch.
  const auto pred = predict_samples(val_set, r.weights);
  std::vector<Action> truth;
  for (const Sample& s : val_set) truth.push_back(s.target);
  EXPECT_DOUBLE_EQ(score(pred, truth, 1).macro.f1, r.log[static_cast<std::size_t>(r.best_epoch - 1)].val_macro_f1);
}

TEST(Train, DeterministicForFixedSeed) {
  std::vector<Sample> train_set, val_set;
  for (int i = 0; i < 20; ++i) train_set.push_back(toy_sample(i % 3 ? ObjectClass::cup : ObjectClass::knife, i % 3 ? Action::hold : Action::cut));
  val_set = train_set;
  TrainConfig c = tiny_config();
  c.max_epochs = 4;
  const TrainResult a = train(train_set, val_set, c);
  const TrainResult b = train(train_set, val_set, c);
  EXPECT_EQ(flat(a.weights), flat(b.weights));
  c.seed = 4;
  EXPECT_NE(flat(train(train_set, val_set, c).weights), flat(a.weights));
}

TEST(Train, EmptySetsAreErrors) {
  std::vector<Sample> some{toy_sample(ObjectClass::cup, Action::pour)};
  EXPECT_THROW(train({}, some, tiny_config()), DataError);
  EXPECT_THROW(train(some, {}, tiny_config()), DataError);
}

TEST(Train, EarlyStoppingHonoursPatience) {
  std::vector<Sample> train_set, val_set;
  for (int i = 0; i < 32; ++i) train_set.push_back(toy_sample(ObjectClass::cup, Action::pour));
  val_set = train_set;
  TrainConfig c = tiny_config();
  c.patience = 3;
  c.max_epochs = 50;
  const TrainResult r = train(train_set, val_set, c);
  EXPECT_EQ(static_cast<int>(r.log.size()), r.best_epoch + 3);
}

TEST(Split, TestSubjectNeverLeaks) {
  const Dataset ds = build_suite(3, builtin_scripts("workshop-mini"), 3, 4);
  for (int s = 0; s < 3; ++s) {
    const SplitIndices idx = split_recordings(ds.recordings, {s, 0});
    std::set<std::size_t> seen;
    for (std::size_t i : idx.train) {
      EXPECT_NE(ds.recordings[i].subject, s);
      EXPECT_NE(ds.recordings[i].repetition, 0);
      seen.insert(i);
    }
    for (std::size_t i : idx.validation) {
      EXPECT_NE(ds.recordings[i].subject, s);
      EXPECT_EQ(ds.recordings[i].repetition, 0);
      EXPECT_TRUE(seen.insert(i).second);
    }
    for (std::size_t i : idx.test) {
      EXPECT_EQ(ds.recordings[i].subject, s);
      EXPECT_TRUE(seen.insert(i).second);
    }
    EXPECT_EQ(seen.size(), ds.recordings.size());
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
