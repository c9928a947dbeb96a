#include "bimanual/graph_network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "bimanual/errors.hpp"

namespace bimanual {

void NetworkShape::validate() const {
  if (edge_in <= 0 || node_in <= 0 || global_in <= 0 || latent <= 0 || outputs <= 0)
    throw InvalidArgument("network widths must be positive");
  if (layers < 1) throw InvalidArgument("MLPs need at least one layer");
  if (steps < 1) throw InvalidArgument("the core needs at least one step");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename S, typename Fn>
void visit_mlp(const std::string& prefix, Mlp<S>& mlp, Fn&& fn) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    fn(prefix + "." + std::to_string(l) + ".weight", mlp.layers[l].weight);
    fn(prefix + "." + std::to_string(l) + ".bias", mlp.layers[l].bias);
  }
}

template <typename S, typename Fn>
void visit_block(const std::string& prefix, BlockParams<S>& b, Fn&& fn) {
  visit_mlp(prefix + ".edge", b.edge, fn);
  visit_mlp(prefix + ".node", b.node, fn);
  visit_mlp(prefix + ".global", b.global, fn);
}

template <typename S>
Mlp<S> make_mlp(int in, int width, int layers) {
  Mlp<S> m;
  for (int l = 0; l < layers; ++l) {
    m.layers.push_back({Mat<S>::Zero(l == 0 ? in : width, width), Mat<S>::Zero(1, width)});
  }
  return m;
}

template <typename S>
GraphNetWeights<S> zero_weights(const NetworkShape& s) {
  s.validate();
  const int L = s.latent;
  GraphNetWeights<S> w;
  w.shape = s;
  w.encoder = {make_mlp<S>(s.edge_in, L, s.layers), make_mlp<S>(s.node_in, L, s.layers),
               make_mlp<S>(s.global_in, L, s.layers)};
  w.core = {make_mlp<S>(8 * L, L, s.layers), make_mlp<S>(5 * L, L, s.layers),
            make_mlp<S>(4 * L, L, s.layers)};
  w.decoder = {make_mlp<S>(L, L, s.layers), make_mlp<S>(L, L, s.layers),
               make_mlp<S>(L, L, s.layers)};
  w.head = {Mat<S>::Zero(L, s.outputs), Mat<S>::Zero(1, s.outputs)};
  return w;
}

}  // namespace

template <typename S>
void GraphNetWeights<S>::for_each(const std::function<void(const std::string&, Mat<S>&)>& fn) {
  visit_block("encoder", encoder, fn);
  visit_block("core", core, fn);
  visit_block("decoder", decoder, fn);
  fn("head.weight", head.weight);
  fn("head.bias", head.bias);
}

template <typename S>
void GraphNetWeights<S>::for_each(
    const std::function<void(const std::string&, const Mat<S>&)>& fn) const {
  const_cast<GraphNetWeights<S>*>(this)->for_each(
      [&](const std::string& name, Mat<S>& m) { fn(name, m); });
}

template <typename S>
std::size_t GraphNetWeights<S>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename S>
GraphNetWeights<S> GraphNetWeights<S>::zeros_like() const {
  return zero_weights<S>(shape);
}

template <typename S>
bool GraphNetWeights<S>::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat<S>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename S>
template <typename T>
GraphNetWeights<T> GraphNetWeights<S>::cast() const {
  GraphNetWeights<T> out = zero_weights<T>(shape);
  std::vector<const Mat<S>*> src;
  for_each([&](const std::string&, const Mat<S>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.for_each([&](const std::string&, Mat<T>& m) { m = src[i++]->template cast<T>(); });
  return out;
}

template <typename S>
GraphNetWeights<S> init_weights(const NetworkShape& shape, std::uint64_t seed, double core_gain) {
  GraphNetWeights<S> w = zero_weights<S>(shape);
  std::mt19937_64 rng(seed);
  w.for_each([&](const std::string& name, Mat<S>& m) {
    if (name.ends_with(".bias")) return;
    double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    if (name.starts_with("core.")) limit *= core_gain;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      // 53 random bits mapped to [0, 1); independent of libstdc++ distributions.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      m.data()[i] = static_cast<S>((2.0 * u - 1.0) * limit);
    }
  });
  return w;
}

// ---------------------------------------------------------------------------
// Graph batching

SceneGraph canonicalize(const SceneGraph& g) {
  std::vector<int> order(g.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const SceneNode& x = g.nodes[static_cast<std::size_t>(a)];
    const SceneNode& y = g.nodes[static_cast<std::size_t>(b)];
    return std::tie(x.frame, x.instance_id, x.object_class, x.extra) <
           std::tie(y.frame, y.instance_id, y.object_class, y.extra);
  });
  std::vector<int> position(g.nodes.size());
  SceneGraph out;
  out.global = g.global;
  out.nodes.reserve(g.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    position[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
    out.nodes.push_back(g.nodes[static_cast<std::size_t>(order[i])]);
  }
  out.edges.reserve(g.edges.size());
  for (const SceneEdge& e : g.edges) {
    out.edges.push_back({e.attr, position[static_cast<std::size_t>(e.sender)],
                         position[static_cast<std::size_t>(e.receiver)]});
  }
  std::stable_sort(out.edges.begin(), out.edges.end(), [](const SceneEdge& a, const SceneEdge& b) {
    return std::make_tuple(a.sender, a.receiver, a.attr.mask()) <
           std::make_tuple(b.sender, b.receiver, b.attr.mask());
  });
  return out;
}

template <typename S>
Graph<S> make_batch(std::span<const SceneGraph* const> graphs) {
  auto topo = std::make_shared<Topology>();
  topo->num_graphs = static_cast<int>(graphs.size());
  std::size_t n_nodes = 0, n_edges = 0, node_width = 0;
  for (const SceneGraph* g : graphs) {
    n_nodes += g->nodes.size();
    n_edges += g->edges.size();
    if (!g->nodes.empty()) {
      const std::size_t wdt = g->node_width();
      if (node_width != 0 && wdt != node_width)
        throw InvalidArgument("graphs in a batch disagree on node width");
      node_width = wdt;
    }
  }
  if (node_width == 0) node_width = kNumObjectClasses;

  Graph<S> out;
  out.nodes = Mat<S>::Zero(static_cast<Eigen::Index>(n_nodes), static_cast<Eigen::Index>(node_width));
  out.edges = Mat<S>::Zero(static_cast<Eigen::Index>(n_edges), static_cast<Eigen::Index>(kEdgeWidth));
  out.globals = Mat<S>::Zero(topo->num_graphs, static_cast<Eigen::Index>(kNumActions));
  topo->senders.reserve(n_edges);
  topo->receivers.reserve(n_edges);
  topo->edge_graph.reserve(n_edges);
  topo->node_graph.reserve(n_nodes);

  Eigen::Index node_row = 0, edge_row = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const SceneGraph c = canonicalize(*graphs[gi]);
    const auto offset = static_cast<int>(node_row);
    for (const SceneNode& n : c.nodes) {
      out.nodes(node_row, static_cast<Eigen::Index>(index(n.object_class))) = S(1);
      for (std::size_t x = 0; x < n.extra.size(); ++x)
        out.nodes(node_row, static_cast<Eigen::Index>(kNumObjectClasses + x)) = static_cast<S>(n.extra[x]);
      topo->node_graph.push_back(static_cast<int>(gi));
      ++node_row;
    }
    for (const SceneEdge& e : c.edges) {
      const std::uint16_t mask = e.attr.mask();
      for (std::size_t s = 0; s < kEdgeWidth; ++s) {
        if (mask & (1u << s)) out.edges(edge_row, static_cast<Eigen::Index>(s)) = S(1);
      }
      topo->senders.push_back(e.sender + offset);
      topo->receivers.push_back(e.receiver + offset);
      topo->edge_graph.push_back(static_cast<int>(gi));
      ++edge_row;
    }
  }
  out.topology = std::move(topo);
  return out;
}

template <typename S>
Graph<S> make_batch(const SceneGraph& g) {
  const SceneGraph* ptr = &g;
  return make_batch<S>(std::span<const SceneGraph* const>(&ptr, 1));
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <typename S>
Mat<S> gather(const Mat<S>& x, const std::vector<int>& idx) {
  Mat<S> out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  return out;
}

// out[idx[k]] += d[k], k ascending.
template <typename S>
Mat<S> scatter_add(const Mat<S>& d, const std::vector<int>& idx, int rows) {
  Mat<S> out = Mat<S>::Zero(rows, d.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(idx[k]) += d.row(static_cast<Eigen::Index>(k));
  return out;
}

template <typename S>
void add_bias(Mat<S>& z, const Mat<S>& bias) {
  z.rowwise() += bias.row(0);
}

template <typename S>
void relu(Mat<S>& z) {
  z = z.cwiseMax(S(0));
}

// Zero the gradient wherever the ReLU output was clamped.
template <typename S>
void relu_mask(Mat<S>& d, const Mat<S>& out) {
  d = (out.array() > S(0)).select(d, S(0));
}

template <typename S>
void check_width(const Mat<S>& m, int expected, const char* what) {
  if (m.cols() != expected)
    throw InvalidArgument(std::string("shape mismatch: ") + what + " width " +
                          std::to_string(m.cols()) + ", expected " + std::to_string(expected));
}

template <typename S>
void check_topology(const Graph<S>& g) {
  if (!g.topology) throw InvalidArgument("graph has no topology");
  const Topology& t = *g.topology;
  if (g.nodes.rows() != t.num_nodes() || g.edges.rows() != t.num_edges() ||
      g.globals.rows() != t.num_graphs)
    throw InvalidArgument("shape mismatch: attribute rows disagree with topology");
}

// Activations of one MLP: its input and every post-ReLU layer output.
template <typename S>
struct MlpTrace {
  Mat<S> input;
  std::vector<Mat<S>> acts;
};

// Runs the MLP from the first layer's pre-activation (bias included).
template <typename S>
Mat<S> mlp_tail(const Mlp<S>& mlp, Mat<S> z, MlpTrace<S>* trace) {
  relu(z);
  for (std::size_t l = 1; l < mlp.layers.size(); ++l) {
    Mat<S> next = z * mlp.layers[l].weight;
    add_bias(next, mlp.layers[l].bias);
    relu(next);
    if (trace) trace->acts.push_back(std::move(z));
    z = std::move(next);
  }
  if (trace) trace->acts.push_back(z);
  return z;
}

template <typename S>
Mat<S> mlp_run(const Mlp<S>& mlp, const Mat<S>& x, MlpTrace<S>* trace) {
  Mat<S> z = x * mlp.layers[0].weight;
  add_bias(z, mlp.layers[0].bias);
  if (trace) trace->input = x;
  return mlp_tail(mlp, std::move(z), trace);
}

// Back through layers 1..n; returns the gradient at layer 0's
// pre-activation. Layer 0's weight/bias gradients are left to the caller.
template <typename S>
Mat<S> mlp_tail_backward(const Mlp<S>& mlp, const MlpTrace<S>& trace, Mat<S> d, Mlp<S>& grad) {
  for (std::size_t l = mlp.layers.size() - 1; l >= 1; --l) {
    relu_mask(d, trace.acts[l]);
    grad.layers[l].weight.noalias() += trace.acts[l - 1].transpose() * d;
    grad.layers[l].bias += d.colwise().sum();
    d = d * mlp.layers[l].weight.transpose();
  }
  relu_mask(d, trace.acts[0]);
  return d;
}

template <typename S>
void first_layer_backward(const Mat<S>& input, const Mat<S>& dz, Linear<S>& grad) {
  grad.weight.noalias() += input.transpose() * dz;
  grad.bias += dz.colwise().sum();
}

}  // namespace

template <typename S>
Mat<S> mlp_forward(const Mlp<S>& mlp, const Mat<S>& x) {
  check_width(x, mlp.in_width(), "mlp input");
  return mlp_run<S>(mlp, x, nullptr);
}

template <typename S>
Graph<S> independent_block_forward(const Graph<S>& g, const BlockParams<S>& p) {
  check_topology(g);
  Graph<S> out;
  out.topology = g.topology;
  out.edges = mlp_forward(p.edge, g.edges);
  out.nodes = mlp_forward(p.node, g.nodes);
  out.globals = mlp_forward(p.global, g.globals);
  return out;
}

template <typename S>
Graph<S> full_block_forward(const Graph<S>& g, const BlockParams<S>& p) {
  check_topology(g);
  const Topology& t = *g.topology;
  const auto de = g.edges.cols(), dv = g.nodes.cols(), du = g.globals.cols();

  Mat<S> edge_in(t.num_edges(), de + 2 * dv + du);
  edge_in << g.edges, gather(g.nodes, t.senders), gather(g.nodes, t.receivers),
      gather(g.globals, t.edge_graph);
  Graph<S> out;
  out.topology = g.topology;
  out.edges = mlp_forward(p.edge, edge_in);

  const Mat<S> incoming = scatter_add(out.edges, t.receivers, t.num_nodes());
  Mat<S> node_in(t.num_nodes(), incoming.cols() + dv + du);
  node_in << incoming, g.nodes, gather(g.globals, t.node_graph);
  out.nodes = mlp_forward(p.node, node_in);

  Mat<S> global_in(t.num_graphs, out.edges.cols() + out.nodes.cols() + du);
  global_in << scatter_add(out.edges, t.edge_graph, t.num_graphs),
      scatter_add(out.nodes, t.node_graph, t.num_graphs), g.globals;
  out.globals = mlp_forward(p.global, global_in);
  return out;
}

// ---------------------------------------------------------------------------
// Encode-process-decode

// The core's first layers act on concatenations [latent0, latent_prev, ...].
// Their weight matrices are applied block-wise: the latent0 blocks are
// evaluated once per forward pass and reused by every step.
template <typename S>
struct ForwardCache {
  // Weights of the forward pass; must outlive the cache.
  const GraphNetWeights<S>* weights = nullptr;
  Graph<S> input;
  MlpTrace<S> enc_edge, enc_node, enc_global;
  Mat<S> e0, v0, u0;

  struct Step {
    MlpTrace<S> edge, node, global;
    Mat<S> incoming, edge_sum, node_sum;
    const Mat<S>& e_out() const { return edge.acts.back(); }
    const Mat<S>& v_out() const { return node.acts.back(); }
    const Mat<S>& u_out() const { return global.acts.back(); }
  };
  std::vector<Step> steps;
  MlpTrace<S> dec_global;
  Mat<S> decoded_global;
  Mat<S> logits;
};

namespace {

template <typename S>
auto rows_block(const Mat<S>& w, int block, int width) {
  return w.middleRows(static_cast<Eigen::Index>(block) * width, width);
}

template <typename S>
auto rows_block(Mat<S>& w, int block, int width) {
  return w.middleRows(static_cast<Eigen::Index>(block) * width, width);
}

}  // namespace

template <typename S>
ForwardResult<S> encode_process_decode_forward(const Graph<S>& g, const GraphNetWeights<S>& w,
                                               bool keep_cache) {
  check_topology(g);
  const NetworkShape& s = w.shape;
  check_width(g.edges, s.edge_in, "edge attribute");
  check_width(g.nodes, s.node_in, "node attribute");
  check_width(g.globals, s.global_in, "global attribute");
  const Topology& t = *g.topology;
  const int L = s.latent;
  const int N = t.num_nodes(), G = t.num_graphs;

  auto cache = std::make_shared<ForwardCache<S>>();
  ForwardCache<S>& c = *cache;
  c.weights = &w;
  c.input = g;

  // Encoder.
  c.e0 = mlp_run(w.encoder.edge, g.edges, &c.enc_edge);
  c.v0 = mlp_run(w.encoder.node, g.nodes, &c.enc_node);
  c.u0 = mlp_run(w.encoder.global, g.globals, &c.enc_global);

  // Core weight blocks; see the row layout of each first layer:
  // edge [e0 | ep | vs0 | vsp | vr0 | vrp | u0 | up], node [in | v0 | vp | u0 | up],
  // global [esum | vsum | u0 | up].
  const Mat<S>& we = w.core.edge.layers[0].weight;
  const Mat<S>& wv = w.core.node.layers[0].weight;
  const Mat<S>& wu = w.core.global.layers[0].weight;

  Mat<S> const_e = c.e0 * rows_block(we, 0, L);
  const_e += gather<S>(c.v0 * rows_block(we, 2, L), t.senders);
  const_e += gather<S>(c.v0 * rows_block(we, 4, L), t.receivers);
  const_e += gather<S>(c.u0 * rows_block(we, 6, L), t.edge_graph);
  add_bias(const_e, w.core.edge.layers[0].bias);

  Mat<S> const_v = c.v0 * rows_block(wv, 1, L);
  const_v += gather<S>(c.u0 * rows_block(wv, 3, L), t.node_graph);
  add_bias(const_v, w.core.node.layers[0].bias);

  Mat<S> const_u = c.u0 * rows_block(wu, 2, L);
  add_bias(const_u, w.core.global.layers[0].bias);

  c.steps.resize(static_cast<std::size_t>(s.steps));
  Mat<S> ep = c.e0, vp = c.v0, up = c.u0;
  for (int step = 0; step < s.steps; ++step) {
    auto& st = c.steps[static_cast<std::size_t>(step)];

    Mat<S> ze = const_e;
    ze.noalias() += ep * rows_block(we, 1, L);
    ze += gather<S>(vp * rows_block(we, 3, L), t.senders);
    ze += gather<S>(vp * rows_block(we, 5, L), t.receivers);
    ze += gather<S>(up * rows_block(we, 7, L), t.edge_graph);
    Mat<S> e_new = mlp_tail(w.core.edge, std::move(ze), &st.edge);

    st.incoming = scatter_add(e_new, t.receivers, N);
    Mat<S> zv = const_v;
    zv.noalias() += st.incoming * rows_block(wv, 0, L);
    zv.noalias() += vp * rows_block(wv, 2, L);
    zv += gather<S>(up * rows_block(wv, 4, L), t.node_graph);
    Mat<S> v_new = mlp_tail(w.core.node, std::move(zv), &st.node);

    st.edge_sum = scatter_add(e_new, t.edge_graph, G);
    st.node_sum = scatter_add(v_new, t.node_graph, G);
    Mat<S> zu = const_u;
    zu.noalias() += st.edge_sum * rows_block(wu, 0, L);
    zu.noalias() += st.node_sum * rows_block(wu, 1, L);
    zu.noalias() += up * rows_block(wu, 3, L);
    Mat<S> u_new = mlp_tail(w.core.global, std::move(zu), &st.global);

    ep = std::move(e_new);
    vp = std::move(v_new);
    up = std::move(u_new);
  }

  // Decoder. Edge and node outputs are computed but not consumed.
  (void)mlp_run<S>(w.decoder.edge, ep, nullptr);
  (void)mlp_run<S>(w.decoder.node, vp, nullptr);
  c.decoded_global = mlp_run(w.decoder.global, up, &c.dec_global);

  c.logits = c.decoded_global * w.head.weight;
  add_bias(c.logits, w.head.bias);

  ForwardResult<S> result;
  result.logits = c.logits;
  if (keep_cache) result.cache = std::move(cache);
  return result;
}

template <typename S>
std::uint64_t activation_signature(const ForwardCache<S>& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const MlpTrace<S>& trace) {
    for (const Mat<S>& a : trace.acts) {
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        h ^= a.data()[i] > S(0) ? 1u : 2u;
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(c.enc_edge);
  mix(c.enc_node);
  mix(c.enc_global);
  for (const auto& st : c.steps) {
    mix(st.edge);
    mix(st.node);
    mix(st.global);
  }
  mix(c.dec_global);
  return h;
}

template <typename S>
Mat<S> softmax(const Mat<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const S peak = logits.row(i).maxCoeff();
    // Scalar exp: the vectorized one clamps deep underflow to ~1e-308 instead of 0.
    p.row(i) = (logits.row(i).array() - peak).unaryExpr([](S x) { return std::exp(x); });
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename S>
S cross_entropy(std::span<const S> probabilities, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probabilities.size())
    throw InvalidArgument("target index out of range");
  return -std::log(probabilities[static_cast<std::size_t>(target)]);
}

template <typename S>
S backward(const ForwardCache<S>& c, std::span<const int> targets, S scale,
           GraphNetWeights<S>& grad) {
  if (c.weights == nullptr || c.steps.empty()) throw InvalidArgument("forward cache is empty");
  const GraphNetWeights<S>& w = *c.weights;
  if (!(grad.shape == w.shape)) throw InvalidArgument("shape mismatch: gradient container");
  const Topology& t = *c.input.topology;
  const int L = w.shape.latent;
  const int N = t.num_nodes(), G = t.num_graphs;
  if (static_cast<int>(targets.size()) != G)
    throw InvalidArgument("one target per graph is required");

  // Loss and its gradient at the logits, via log-softmax.
  S loss = 0;
  Mat<S> dlogits(G, c.logits.cols());
  for (int i = 0; i < G; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c.logits.cols()) throw InvalidArgument("target index out of range");
    const S peak = c.logits.row(i).maxCoeff();
    const auto shifted = (c.logits.row(i).array() - peak).eval();
    const auto e = shifted.unaryExpr([](S x) { return std::exp(x); }).eval();
    const S log_norm = std::log(e.sum());
    loss += log_norm - shifted(y);
    dlogits.row(i) = (shifted - log_norm).unaryExpr([](S x) { return std::exp(x); }).matrix();
    dlogits(i, y) -= S(1);
  }
  dlogits *= scale;

  // Head and decoder (only the global path reaches the loss).
  grad.head.weight.noalias() += c.decoded_global.transpose() * dlogits;
  grad.head.bias += dlogits.colwise().sum();
  Mat<S> d_dec = dlogits * w.head.weight.transpose();
  Mat<S> dz = mlp_tail_backward(w.decoder.global, c.dec_global, std::move(d_dec), grad.decoder.global);
  first_layer_backward(c.dec_global.input, dz, grad.decoder.global.layers[0]);
  Mat<S> du = dz * w.decoder.global.layers[0].weight.transpose();
  Mat<S> de = Mat<S>::Zero(t.num_edges(), L);
  Mat<S> dv = Mat<S>::Zero(N, L);

  const Mat<S>& we = w.core.edge.layers[0].weight;
  const Mat<S>& wv = w.core.node.layers[0].weight;
  const Mat<S>& wu = w.core.global.layers[0].weight;
  Mat<S>& gwe = grad.core.edge.layers[0].weight;
  Mat<S>& gwv = grad.core.node.layers[0].weight;
  Mat<S>& gwu = grad.core.global.layers[0].weight;

  // Gradients of the latent0-only pre-activation terms, summed over steps.
  Mat<S> d_const_e = Mat<S>::Zero(t.num_edges(), L);
  Mat<S> d_const_v = Mat<S>::Zero(N, L);
  Mat<S> d_const_u = Mat<S>::Zero(G, L);

  for (int step = static_cast<int>(c.steps.size()) - 1; step >= 0; --step) {
    const auto& st = c.steps[static_cast<std::size_t>(step)];
    const Mat<S>& ep = step == 0 ? c.e0 : c.steps[static_cast<std::size_t>(step) - 1].e_out();
    const Mat<S>& vp = step == 0 ? c.v0 : c.steps[static_cast<std::size_t>(step) - 1].v_out();
    const Mat<S>& up = step == 0 ? c.u0 : c.steps[static_cast<std::size_t>(step) - 1].u_out();

    // Global update.
    Mat<S> dzu = mlp_tail_backward(w.core.global, st.global, std::move(du), grad.core.global);
    rows_block(gwu, 0, L).noalias() += st.edge_sum.transpose() * dzu;
    rows_block(gwu, 1, L).noalias() += st.node_sum.transpose() * dzu;
    rows_block(gwu, 3, L).noalias() += up.transpose() * dzu;
    d_const_u += dzu;
    const Mat<S> d_edge_sum = dzu * rows_block(wu, 0, L).transpose();
    const Mat<S> d_node_sum = dzu * rows_block(wu, 1, L).transpose();
    Mat<S> dup = dzu * rows_block(wu, 3, L).transpose();

    // Node update.
    dv += gather(d_node_sum, t.node_graph);
    Mat<S> dzv = mlp_tail_backward(w.core.node, st.node, std::move(dv), grad.core.node);
    rows_block(gwv, 0, L).noalias() += st.incoming.transpose() * dzv;
    rows_block(gwv, 2, L).noalias() += vp.transpose() * dzv;
    const Mat<S> dzv_graph = scatter_add(dzv, t.node_graph, G);
    rows_block(gwv, 4, L).noalias() += up.transpose() * dzv_graph;
    d_const_v += dzv;
    const Mat<S> d_incoming = dzv * rows_block(wv, 0, L).transpose();
    Mat<S> dvp = dzv * rows_block(wv, 2, L).transpose();
    dup.noalias() += dzv_graph * rows_block(wv, 4, L).transpose();

    // Edge update.
    de += gather(d_incoming, t.receivers);
    de += gather(d_edge_sum, t.edge_graph);
    Mat<S> dze = mlp_tail_backward(w.core.edge, st.edge, std::move(de), grad.core.edge);
    rows_block(gwe, 1, L).noalias() += ep.transpose() * dze;
    const Mat<S> dze_s = scatter_add(dze, t.senders, N);
    const Mat<S> dze_r = scatter_add(dze, t.receivers, N);
    const Mat<S> dze_g = scatter_add(dze, t.edge_graph, G);
    rows_block(gwe, 3, L).noalias() += vp.transpose() * dze_s;
    rows_block(gwe, 5, L).noalias() += vp.transpose() * dze_r;
    rows_block(gwe, 7, L).noalias() += up.transpose() * dze_g;
    d_const_e += dze;
    Mat<S> dep = dze * rows_block(we, 1, L).transpose();
    dvp.noalias() += dze_s * rows_block(we, 3, L).transpose();
    dvp.noalias() += dze_r * rows_block(we, 5, L).transpose();
    dup.noalias() += dze_g * rows_block(we, 7, L).transpose();

    de = std::move(dep);
    dv = std::move(dvp);
    du = std::move(dup);
  }
  // de/dv/du now hold the gradient reaching latent0 through the first step's
  // "previous latent" inputs; add the latent0 blocks of every step.
  {
    grad.core.edge.layers[0].bias += d_const_e.colwise().sum();
    rows_block(gwe, 0, L).noalias() += c.e0.transpose() * d_const_e;
    const Mat<S> ds = scatter_add(d_const_e, t.senders, N);
    const Mat<S> dr = scatter_add(d_const_e, t.receivers, N);
    const Mat<S> dg = scatter_add(d_const_e, t.edge_graph, G);
    rows_block(gwe, 2, L).noalias() += c.v0.transpose() * ds;
    rows_block(gwe, 4, L).noalias() += c.v0.transpose() * dr;
    rows_block(gwe, 6, L).noalias() += c.u0.transpose() * dg;
    de.noalias() += d_const_e * rows_block(we, 0, L).transpose();
    dv.noalias() += ds * rows_block(we, 2, L).transpose();
    dv.noalias() += dr * rows_block(we, 4, L).transpose();
    du.noalias() += dg * rows_block(we, 6, L).transpose();

    grad.core.node.layers[0].bias += d_const_v.colwise().sum();
    rows_block(gwv, 1, L).noalias() += c.v0.transpose() * d_const_v;
    const Mat<S> dvg = scatter_add(d_const_v, t.node_graph, G);
    rows_block(gwv, 3, L).noalias() += c.u0.transpose() * dvg;
    dv.noalias() += d_const_v * rows_block(wv, 1, L).transpose();
    du.noalias() += dvg * rows_block(wv, 3, L).transpose();

    grad.core.global.layers[0].bias += d_const_u.colwise().sum();
    rows_block(gwu, 2, L).noalias() += c.u0.transpose() * d_const_u;
    du.noalias() += d_const_u * rows_block(wu, 2, L).transpose();
  }

  // Encoder.
  Mat<S> dze0 = mlp_tail_backward(w.encoder.edge, c.enc_edge, std::move(de), grad.encoder.edge);
  first_layer_backward(c.enc_edge.input, dze0, grad.encoder.edge.layers[0]);
  Mat<S> dzv0 = mlp_tail_backward(w.encoder.node, c.enc_node, std::move(dv), grad.encoder.node);
  first_layer_backward(c.enc_node.input, dzv0, grad.encoder.node.layers[0]);
  Mat<S> dzu0 = mlp_tail_backward(w.encoder.global, c.enc_global, std::move(du), grad.encoder.global);
  first_layer_backward(c.enc_global.input, dzu0, grad.encoder.global.layers[0]);
  return loss;
}

template <typename S>
BimanualPrediction predict_bimanual(const SceneGraph& g, const GraphNetWeights<S>& w) {
  const SceneGraph mirrored = mirror(g);
  const SceneGraph* graphs[2] = {&g, &mirrored};
  const auto dists = predict_distributions<S>(std::span<const SceneGraph* const>(graphs, 2), w);
  return {dists[0], dists[1]};
}

template <typename S>
std::vector<std::vector<double>> predict_distributions(std::span<const SceneGraph* const> graphs,
                                                       const GraphNetWeights<S>& w,
                                                       std::size_t chunk) {
  std::vector<std::vector<double>> out;
  out.reserve(graphs.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < graphs.size(); begin += chunk) {
    const auto part = graphs.subspan(begin, std::min(chunk, graphs.size() - begin));
    const Graph<S> batch = make_batch<S>(part);
    const Mat<double> logits =
        encode_process_decode_forward(batch, w, false).logits.template cast<double>();
    const Mat<double> probs = softmax<double>(logits);
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
      out.emplace_back(probs.row(i).data(), probs.row(i).data() + probs.cols());
  }
  return out;
}

#define BIMANUAL_INSTANTIATE(S)                                                                  \
  template struct GraphNetWeights<S>;                                                            \
  template GraphNetWeights<S> init_weights<S>(const NetworkShape&, std::uint64_t, double);            \
  template Graph<S> make_batch<S>(std::span<const SceneGraph* const>);                           \
  template Graph<S> make_batch<S>(const SceneGraph&);                                            \
  template Mat<S> mlp_forward<S>(const Mlp<S>&, const Mat<S>&);                                  \
  template Graph<S> independent_block_forward<S>(const Graph<S>&, const BlockParams<S>&);        \
  template Graph<S> full_block_forward<S>(const Graph<S>&, const BlockParams<S>&);               \
  template ForwardResult<S> encode_process_decode_forward<S>(const Graph<S>&,                    \
                                                             const GraphNetWeights<S>&, bool);   \
  template Mat<S> softmax<S>(const Mat<S>&);                                                     \
  template std::uint64_t activation_signature<S>(const ForwardCache<S>&);                        \
  template S cross_entropy<S>(std::span<const S>, int);                                          \
  template S backward<S>(const ForwardCache<S>&, std::span<const int>, S, GraphNetWeights<S>&);  \
  template BimanualPrediction predict_bimanual<S>(const SceneGraph&, const GraphNetWeights<S>&); \
  template std::vector<std::vector<double>> predict_distributions<S>(                            \
      std::span<const SceneGraph* const>, const GraphNetWeights<S>&, std::size_t);

BIMANUAL_INSTANTIATE(double)
BIMANUAL_INSTANTIATE(float)
#undef BIMANUAL_INSTANTIATE

template GraphNetWeights<float> GraphNetWeights<double>::cast<float>() const;
template GraphNetWeights<double> GraphNetWeights<float>::cast<double>() const;
template GraphNetWeights<double> GraphNetWeights<double>::cast<double>() const;

}  // namespace bimanual
