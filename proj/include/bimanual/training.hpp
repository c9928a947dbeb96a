#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bimanual/data.hpp"
#include "bimanual/geometry.hpp"
#include "bimanual/graph_network.hpp"
#include "bimanual/scene_graph.hpp"
#include "bimanual/tracking.hpp"

namespace bimanual {

// Scene graph of one frame plus the smoothed centroid (mm) of each node.
struct FrameGraph {
  SceneGraph graph;
  std::vector<Vec3> centroids;
};

// Tracking, smoothing and relation extraction over a whole recording.
std::vector<FrameGraph> recording_graphs(const Recording& rec, const RelationConfig& rel,
                                         const SmoothingConfig& smoothing);

struct Sample {
  SceneGraph graph;  // temporal concatenation, global unset
  std::vector<Vec3> centroids;  // per node; x negated for mirrored samples
  Action target = Action::idle;
  int subject = 0;
  int task = 0;
  int repetition = 0;
  std::int64_t frame = 0;
  bool mirrored = false;
};

// Two samples per frame: the graph as-is labeled with the right hand's action,
// then its mirror labeled with the left hand's action. Frames with index
// modulo `stride` != 0 are skipped.
std::vector<Sample> make_samples(const Recording& rec, const std::vector<FrameGraph>& graphs,
                                 std::size_t window = 10, std::size_t stride = 1);

struct SplitSpec {
  int test_subject = 0;
  int validation_repetition = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, validation, test;  // recording indices
};

// Leave-one-subject-out: the test subject's recordings are held out; of the
// rest, repetition `validation_repetition` of every task validates.
SplitIndices split_recordings(const std::vector<Recording>& recs, const SplitSpec& spec);

inline bool is_rebalanced(Action a) { return a == Action::idle || a == Action::hold; }

// Seeded shuffle, then batches assembled in draw order. Among idle/hold
// draws (one joint counter per batch) only every third is kept.
std::vector<std::vector<std::size_t>> make_batches(std::span<const Action> targets,
                                                   std::size_t batch_size, std::uint64_t seed);

template <typename S>
struct OptimizerState {
  GraphNetWeights<S> m, v;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_weights(const GraphNetWeights<S>& w, double lr = 1e-3);
};

// Bias-corrected Adam. Throws DivergenceError("diverged") when a gradient or
// updated weight is not finite.
template <typename S>
void adam_step(GraphNetWeights<S>& w, const GraphNetWeights<S>& grad, OptimizerState<S>& state);

enum class Precision { float64, float32 };

struct TrainConfig {
  NetworkShape shape;
  double lr = 1e-3;
  std::size_t batch_size = 512;
  int patience = 10;
  int max_epochs = 200;
  std::uint64_t seed = 1;
  std::size_t chunk = 64;  // graphs per forward/backward call
  // Scales the core's initial weights. Sum aggregation over ~150 edges makes
  // the recurrent core expansive at gain 1; below ~0.6 it starts contractive.
  double core_init_gain = 0.5;
  Precision precision = Precision::float64;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;  // mean training cross-entropy
  double val_macro_f1 = 0.0;
  double val_accuracy = 0.0;
  std::size_t samples = 0;  // retained training samples
};

struct TrainResult {
  GraphNetWeights<double> weights;  // best validation epoch
  int best_epoch = 0;
  double best_val_macro_f1 = -1.0;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(std::span<const Sample> train_set, std::span<const Sample> validation_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log);

// Class distributions for every sample graph.
std::vector<std::vector<double>> predict_samples(std::span<const Sample> samples,
                                                 const GraphNetWeights<double>& w,
                                                 Precision precision = Precision::float64,
                                                 std::size_t chunk = 64);

}  // namespace bimanual
