#include "bimanual/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace bimanual {

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

struct Probe {
  double loss;
  std::uint64_t signature;
};

Probe probe(const Graph<double>& batch, const GraphNetWeights<double>& w, int target) {
  const auto fwd = encode_process_decode_forward(batch, w, true);
  // log-sum-exp form; logits of untrained deep cores can exceed 1e3.
  const double peak = fwd.logits.row(0).maxCoeff();
  const double lse = peak + std::log((fwd.logits.row(0).array() - peak).exp().sum());
  return {lse - fwd.logits(0, target), activation_signature(*fwd.cache)};
}

// Central difference; the step shrinks while a ReLU kink lies within it,
// since the loss is only piecewise smooth.
double central_difference(const Graph<double>& batch, GraphNetWeights<double>& w, double& param,
                          int target, double step, std::uint64_t base_signature) {
  const double saved = param;
  double numeric = 0.0;
  for (int refine = 0; refine < 6; ++refine, step *= 0.1) {
    param = saved + step;
    const Probe up = probe(batch, w, target);
    param = saved - step;
    const Probe down = probe(batch, w, target);
    numeric = (up.loss - down.loss) / (2.0 * step);
    if (up.signature == base_signature && down.signature == base_signature) break;
  }
  param = saved;
  return numeric;
}

}  // namespace

SceneGraph random_scene_graph(std::mt19937_64& rng, int min_nodes, int max_nodes) {
  SceneGraph g;
  const int n = uniform_int(rng, min_nodes, max_nodes);
  const int frames = uniform_int(rng, 1, std::max(1, n / 2));
  for (int i = 0; i < n; ++i) {
    SceneNode node;
    node.object_class = static_cast<ObjectClass>(uniform_int(rng, 0, kNumObjectClasses - 1));
    node.frame = i % frames;
    node.instance_id = i / frames;
    g.nodes.push_back(node);
  }
  for (int s = 0; s < n; ++s) {
    for (int r = 0; r < n; ++r) {
      if (s == r) continue;
      const SceneNode& a = g.nodes[static_cast<std::size_t>(s)];
      const SceneNode& b = g.nodes[static_cast<std::size_t>(r)];
      if (a.frame == b.frame) {
        if (rng() % 3 == 0) continue;
        auto mask = static_cast<std::uint16_t>(rng() & RelationSet::kAllMask);
        if (mask == 0) mask = 1;
        g.edges.push_back({{RelationSet::from_mask(mask), false}, s, r});
      } else if (a.instance_id == b.instance_id && b.frame == a.frame + 1) {
        g.edges.push_back({{RelationSet{}, true}, s, r});
      }
    }
  }
  return g;
}

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  GradCheckReport report;
  std::mt19937_64 rng(opts.seed);
  for (int gi = 0; gi < opts.graphs; ++gi) {
    const SceneGraph scene = random_scene_graph(rng, opts.min_nodes, opts.max_nodes);
    const Graph<double> batch = make_batch<double>(scene);
    GraphNetWeights<double> w = init_weights<double>(opts.shape, rng());
    // Non-zero biases so every bias path is exercised.
    w.for_each([&](const std::string& name, Mat<double>& m) {
      if (!name.ends_with(".bias")) return;
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = 0.1 * (static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5);
    });
    const int target = uniform_int(rng, 0, opts.shape.outputs - 1);

    GraphNetWeights<double> grad = w.zeros_like();
    std::uint64_t base_signature = 0;
    {
      const auto fwd = encode_process_decode_forward(batch, w, true);
      const int targets[1] = {target};
      backward(*fwd.cache, std::span<const int>(targets, 1), 1.0, grad);
      base_signature = activation_signature(*fwd.cache);
    }

    std::vector<Mat<double>*> params;
    std::vector<std::string> names;
    w.for_each([&](const std::string& name, Mat<double>& m) {
      params.push_back(&m);
      names.push_back(name);
    });
    std::vector<const Mat<double>*> grads;
    grad.for_each([&](const std::string&, const Mat<double>& m) { grads.push_back(&m); });

    for (std::size_t p = 0; p < params.size(); ++p) {
      Mat<double>& m = *params[p];
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double numeric =
            central_difference(batch, w, m.data()[i], target, opts.step, base_signature);
        const double analytic = grads[p]->data()[i];
        const double denom =
            std::max({std::abs(analytic), std::abs(numeric), opts.denominator_floor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++report.parameters_checked;
        if (rel > report.max_relative_error) {
          report.max_relative_error = rel;
          report.worst_parameter = names[p] + "[" + std::to_string(i) + "]";
          report.worst_graph = gi;
        }
      }
    }
    ++report.graphs;
  }
  report.passed = report.max_relative_error < opts.tolerance;
  return report;
}

}  // namespace bimanual
