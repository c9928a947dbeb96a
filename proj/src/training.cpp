#include "bimanual/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "bimanual/errors.hpp"
#include "bimanual/evaluation.hpp"

namespace bimanual {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<FrameGraph> recording_graphs(const Recording& rec, const RelationConfig& rel,
                                         const SmoothingConfig& smoothing) {
  rel.validate();
  smoothing.validate();
  Tracker tracker(rec.fps, smoothing, rel.dyn_window);
  std::vector<FrameGraph> out;
  out.reserve(rec.frames.size());
  for (const FrameRecord& f : rec.frames) {
    const auto objects = tracker.update(f.frame, f.detections);
    FrameGraph fg;
    fg.graph = build_tracked_frame_graph(tracker, objects, f.frame, rel);
    fg.centroids.reserve(objects.size());
    for (const TrackedBox& o : objects) fg.centroids.push_back(centroid(o.box));
    out.push_back(std::move(fg));
  }
  return out;
}

std::vector<Sample> make_samples(const Recording& rec, const std::vector<FrameGraph>& graphs,
                                 std::size_t window, std::size_t stride) {
  if (graphs.size() != rec.frames.size())
    throw DataError("recording \"" + rec.id + "\": " + std::to_string(rec.frames.size()) +
                    " labeled frames but " + std::to_string(graphs.size()) + " graphs");
  if (window < 1 || window > 10) throw InvalidArgument("window must be in 1..10");
  if (stride < 1) throw InvalidArgument("stride must be positive");

  std::vector<Sample> out;
  out.reserve(2 * (graphs.size() / stride + 1));
  std::vector<SceneGraph> slice;
  for (std::size_t f = 0; f < graphs.size(); f += stride) {
    const std::size_t first = f + 1 >= window ? f + 1 - window : 0;
    slice.clear();
    Sample right;
    for (std::size_t t = first; t <= f; ++t) {
      slice.push_back(graphs[t].graph);
      right.centroids.insert(right.centroids.end(), graphs[t].centroids.begin(),
                             graphs[t].centroids.end());
    }
    right.graph = temporal_concat(slice, window);
    right.graph.global.reset();
    right.subject = rec.subject;
    right.task = rec.task;
    right.repetition = rec.repetition;
    right.frame = rec.frames[f].frame;
    right.target = rec.frames[f].truth_right;

    Sample left = right;
    left.graph = mirror(right.graph);
    for (Vec3& c : left.centroids) c[0] = -c[0];
    left.target = rec.frames[f].truth_left;
    left.mirrored = true;

    out.push_back(std::move(right));
    out.push_back(std::move(left));
  }
  return out;
}

SplitIndices split_recordings(const std::vector<Recording>& recs, const SplitSpec& spec) {
  SplitIndices out;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const Recording& r = recs[i];
    if (r.subject == spec.test_subject)
      out.test.push_back(i);
    else if (r.repetition == spec.validation_repetition)
      out.validation.push_back(i);
    else
      out.train.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const Action> targets,
                                                   std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with a modulo-free bounded draw.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do r = rng();
    while (r >= limit);
    std::swap(order[i - 1], order[static_cast<std::size_t>(r % bound)]);
  }

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> batch;
  std::size_t rebalanced_draws = 0;
  for (std::size_t idx : order) {
    if (is_rebalanced(targets[idx])) {
      const bool keep = rebalanced_draws % 3 == 2;
      ++rebalanced_draws;
      if (!keep) continue;
    }
    batch.push_back(idx);
    if (batch.size() == batch_size) {
      batches.push_back(std::move(batch));
      batch.clear();
      rebalanced_draws = 0;
    }
  }
  if (!batch.empty()) batches.push_back(std::move(batch));
  return batches;
}

template <typename S>
OptimizerState<S> OptimizerState<S>::for_weights(const GraphNetWeights<S>& w, double lr) {
  OptimizerState st;
  st.m = w.zeros_like();
  st.v = w.zeros_like();
  st.lr = lr;
  return st;
}

template <typename S>
void adam_step(GraphNetWeights<S>& w, const GraphNetWeights<S>& grad, OptimizerState<S>& state) {
  std::vector<Mat<S>*> params, ms, vs;
  std::vector<const Mat<S>*> grads;
  w.for_each([&](const std::string&, Mat<S>& m) { params.push_back(&m); });
  state.m.for_each([&](const std::string&, Mat<S>& m) { ms.push_back(&m); });
  state.v.for_each([&](const std::string&, Mat<S>& m) { vs.push_back(&m); });
  grad.for_each([&](const std::string&, const Mat<S>& m) { grads.push_back(&m); });
  if (grads.size() != params.size() || ms.size() != params.size())
    throw InvalidArgument("optimizer state does not match weights");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p]->rows() != params[p]->rows() || grads[p]->cols() != params[p]->cols())
      throw InvalidArgument("gradient shape mismatch");
    if (!grads[p]->allFinite()) throw DivergenceError("diverged");
  }

  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    S* x = params[p]->data();
    S* m = ms[p]->data();
    S* v = vs[p]->data();
    const S* g = grads[p]->data();
    const Eigen::Index n = params[p]->size();
    for (Eigen::Index i = 0; i < n; ++i) {
      m[i] = static_cast<S>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<S>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      x[i] = static_cast<S>(x[i] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
    if (!params[p]->allFinite()) throw DivergenceError("diverged");
  }
}

void TrainConfig::validate() const {
  shape.validate();
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (patience < 1) throw ConfigError("patience must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (chunk < 1) throw ConfigError("chunk must be positive");
  if (!(core_init_gain > 0.0)) throw ConfigError("core_init_gain must be positive");
}

namespace {

template <typename S>
std::vector<std::vector<double>> predict_impl(std::span<const Sample> samples,
                                              const GraphNetWeights<S>& w, std::size_t chunk) {
  std::vector<const SceneGraph*> ptrs;
  ptrs.reserve(samples.size());
  for (const Sample& s : samples) ptrs.push_back(&s.graph);
  return predict_distributions<S>(ptrs, w, chunk);
}

template <typename S>
void set_zero(GraphNetWeights<S>& g) {
  g.for_each([](const std::string&, Mat<S>& m) { m.setZero(); });
}

template <typename S>
TrainResult train_impl(std::span<const Sample> train_set, std::span<const Sample> validation_set,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  GraphNetWeights<S> w = init_weights<S>(cfg.shape, cfg.seed, cfg.core_init_gain);
  OptimizerState<S> state = OptimizerState<S>::for_weights(w, cfg.lr);
  GraphNetWeights<S> grad = w.zeros_like();

  std::vector<Action> targets;
  targets.reserve(train_set.size());
  for (const Sample& s : train_set) targets.push_back(s.target);
  std::vector<Action> val_truth;
  for (const Sample& s : validation_set) val_truth.push_back(s.target);

  TrainResult result;
  int since_best = 0;
  std::vector<const SceneGraph*> chunk_graphs;
  std::vector<int> chunk_targets;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = make_batches(targets, cfg.batch_size,
                                      splitmix(cfg.seed ^ splitmix(static_cast<std::uint64_t>(epoch))));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : batches) {
      set_zero(grad);
      const S scale = static_cast<S>(1.0 / static_cast<double>(batch.size()));
      for (std::size_t begin = 0; begin < batch.size(); begin += cfg.chunk) {
        const std::size_t end = std::min(batch.size(), begin + cfg.chunk);
        chunk_graphs.clear();
        chunk_targets.clear();
        for (std::size_t i = begin; i < end; ++i) {
          chunk_graphs.push_back(&train_set[batch[i]].graph);
          chunk_targets.push_back(static_cast<int>(index(train_set[batch[i]].target)));
        }
        const Graph<S> g = make_batch<S>(chunk_graphs);
        const auto fwd = encode_process_decode_forward(g, w, true);
        loss_sum += static_cast<double>(backward(*fwd.cache, chunk_targets, scale, grad));
      }
      seen += batch.size();
      adam_step(w, grad, state);
    }

    EpochLog row;
    row.epoch = epoch;
    row.samples = seen;
    row.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    if (!std::isfinite(row.loss)) throw DivergenceError("diverged");
    const auto val_pred = predict_impl(validation_set, w, cfg.chunk);
    const MetricsReport rep = score(val_pred, val_truth, 1);
    row.val_macro_f1 = rep.macro.f1;
    row.val_accuracy = rep.accuracy;
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_macro_f1 > result.best_val_macro_f1) {
      result.best_val_macro_f1 = row.val_macro_f1;
      result.best_epoch = epoch;
      result.weights = w.template cast<double>();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace

TrainResult train(std::span<const Sample> train_set, std::span<const Sample> validation_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("empty training set");
  if (validation_set.empty()) throw DataError("empty validation set");
  if (cfg.precision == Precision::float32)
    return train_impl<float>(train_set, validation_set, cfg, on_epoch);
  return train_impl<double>(train_set, validation_set, cfg, on_epoch);
}

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,loss,val_macro_f1,val_accuracy,samples\n";
  char buf[160];
  for (const EpochLog& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%zu\n", r.epoch, r.loss, r.val_macro_f1,
                  r.val_accuracy, r.samples);
    out << buf;
  }
}

std::vector<std::vector<double>> predict_samples(std::span<const Sample> samples,
                                                 const GraphNetWeights<double>& w,
                                                 Precision precision, std::size_t chunk) {
  if (precision == Precision::float32) return predict_impl(samples, w.cast<float>(), chunk);
  return predict_impl(samples, w, chunk);
}

template struct OptimizerState<double>;
template struct OptimizerState<float>;
template void adam_step<double>(GraphNetWeights<double>&, const GraphNetWeights<double>&,
                                OptimizerState<double>&);
template void adam_step<float>(GraphNetWeights<float>&, const GraphNetWeights<float>&,
                               OptimizerState<float>&);

}  // namespace bimanual
