#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bimanual/graph_network.hpp"
#include "bimanual/scene_graph.hpp"

namespace bimanual {

// Random valid scene graph: classes, instances over `frames` frames,
// random spatial relation sets and temporal links.
SceneGraph random_scene_graph(std::mt19937_64& rng, int min_nodes, int max_nodes);

struct GradCheckOptions {
  int graphs = 100;
  int min_nodes = 2;
  int max_nodes = 6;
  double step = 1e-5;           // central difference h
  double tolerance = 1e-4;      // max relative error
  double denominator_floor = 1e-5;  // |a-n| / max(|a|, |n|, floor)
  NetworkShape shape{.latent = 8, .steps = 10};
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  int graphs = 0;
  std::size_t parameters_checked = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  int worst_graph = -1;
  bool passed = false;
};

// Compares backward() against central finite differences of the forward loss
// for every parameter, one random graph and weight set at a time.
GradCheckReport run_gradcheck(const GradCheckOptions& opts);

}  // namespace bimanual
