#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bimanual/scene_graph.hpp"
#include "bimanual/vocab.hpp"

namespace bimanual {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Sizes of the encode-process-decode network. Defaults follow the reference
// configuration: 2-layer MLPs of width 256 and 10 core steps.
struct NetworkShape {
  int edge_in = static_cast<int>(kEdgeWidth);
  int node_in = static_cast<int>(kNumObjectClasses);
  int global_in = static_cast<int>(kNumActions);
  int latent = 256;
  int layers = 2;
  int steps = 10;
  int outputs = static_cast<int>(kNumActions);

  void validate() const;
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

// y = relu(x W + b), rows are entities.
template <typename S>
struct Linear {
  Mat<S> weight;  // in x out
  Mat<S> bias;    // 1 x out
};

template <typename S>
struct Mlp {
  std::vector<Linear<S>> layers;
  int in_width() const { return static_cast<int>(layers.front().weight.rows()); }
  int out_width() const { return static_cast<int>(layers.back().weight.cols()); }
};

template <typename S>
struct BlockParams {
  Mlp<S> edge, node, global;
};

template <typename S>
struct GraphNetWeights {
  NetworkShape shape;
  BlockParams<S> encoder, core, decoder;
  Linear<S> head;  // latent -> outputs, no activation

  // Visits every tensor in a fixed order with its stable name.
  void for_each(const std::function<void(const std::string&, Mat<S>&)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat<S>&)>& fn) const;
  std::size_t parameter_count() const;
  // Same shapes, all zeros.
  GraphNetWeights zeros_like() const;
  bool all_finite() const;

  template <typename T>
  GraphNetWeights<T> cast() const;
};

// Glorot-uniform weights, zero biases, from a seeded generator. Core weights
// are multiplied by core_gain.
template <typename S>
GraphNetWeights<S> init_weights(const NetworkShape& shape, std::uint64_t seed,
                                double core_gain = 1.0);

// Shapes of a (possibly batched) graph. Indices refer to rows of the
// attribute matrices; aggregation always walks edges/nodes in ascending order.
struct Topology {
  int num_graphs = 1;
  std::vector<int> senders, receivers;
  std::vector<int> node_graph, edge_graph;

  int num_nodes() const { return static_cast<int>(node_graph.size()); }
  int num_edges() const { return static_cast<int>(senders.size()); }
};

template <typename S>
struct Graph {
  std::shared_ptr<const Topology> topology;
  Mat<S> nodes;    // num_nodes x width
  Mat<S> edges;    // num_edges x width
  Mat<S> globals;  // num_graphs x width
};

// Node/edge order with frames, instances and classes sorted, so isomorphic
// inputs produce identical arithmetic.
SceneGraph canonicalize(const SceneGraph& g);

// Disjoint union of canonicalized graphs with one-hot attributes. Input
// globals are always zero.
template <typename S>
Graph<S> make_batch(std::span<const SceneGraph* const> graphs);
template <typename S>
Graph<S> make_batch(const SceneGraph& g);

template <typename S>
Mat<S> mlp_forward(const Mlp<S>& mlp, const Mat<S>& x);

// e' = phi_e(e), v' = phi_v(v), u' = phi_u(u).
template <typename S>
Graph<S> independent_block_forward(const Graph<S>& g, const BlockParams<S>& p);

// e'_k = phi_e([e_k, v_s, v_r, u]); v'_i = phi_v([sum of incoming e', v_i, u]);
// u' = phi_u([sum e', sum v', u]).
template <typename S>
Graph<S> full_block_forward(const Graph<S>& g, const BlockParams<S>& p);

// Activations retained by the forward pass for backward().
template <typename S>
struct ForwardCache;

template <typename S>
struct ForwardResult {
  Mat<S> logits;  // num_graphs x outputs
  std::shared_ptr<ForwardCache<S>> cache;
};

// Encoder, `steps` core iterations on [latent0, latent_prev], decoder and
// output head. The cache is only filled when keep_cache is set.
template <typename S>
ForwardResult<S> encode_process_decode_forward(const Graph<S>& g, const GraphNetWeights<S>& w,
                                               bool keep_cache = true);

// Hash of which ReLU units were active; equal signatures mean the forward
// passes took the same piecewise-linear branch.
template <typename S>
std::uint64_t activation_signature(const ForwardCache<S>& cache);

template <typename S>
Mat<S> softmax(const Mat<S>& logits);
template <typename S>
S cross_entropy(std::span<const S> probabilities, int target);

// Reverse pass of the mean cross-entropy. Accumulates `scale` times the
// gradient of the summed per-graph losses into `grad` and returns the summed
// loss.
template <typename S>
S backward(const ForwardCache<S>& cache, std::span<const int> targets, S scale,
           GraphNetWeights<S>& grad);

struct BimanualPrediction {
  std::vector<double> right;
  std::vector<double> left;
};

// Right hand from the graph as-is, left hand from its mirror image.
template <typename S>
BimanualPrediction predict_bimanual(const SceneGraph& g, const GraphNetWeights<S>& w);

// Class probabilities for a list of graphs, evaluated in chunks.
template <typename S>
std::vector<std::vector<double>> predict_distributions(std::span<const SceneGraph* const> graphs,
                                                       const GraphNetWeights<S>& w,
                                                       std::size_t chunk = 64);

}  // namespace bimanual
