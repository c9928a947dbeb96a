#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bimanual/geometry.hpp"
#include "bimanual/tracking.hpp"
#include "bimanual/vocab.hpp"

namespace bimanual {

std::vector<double> encode_action(Action a);
std::vector<double> encode_object(ObjectClass c);
// Multi-hot over the 15 spatial slots; slot 15 marks a temporal edge.
// Throws InvalidArgument when temporal is requested with spatial relations.
std::vector<double> encode_relations(RelationSet rs, bool temporal);

struct EdgeAttr {
  RelationSet relations;
  bool temporal = false;

  std::uint16_t mask() const {
    return static_cast<std::uint16_t>(relations.mask() | (temporal ? (1u << kTemporalSlot) : 0u));
  }
  friend bool operator==(const EdgeAttr&, const EdgeAttr&) = default;
};

struct SceneNode {
  ObjectClass object_class = ObjectClass::cup;
  std::int64_t instance_id = 0;
  std::int64_t frame = 0;
  // Appended after the one-hot class (centroid ablation); usually empty.
  std::vector<double> extra;

  friend bool operator==(const SceneNode&, const SceneNode&) = default;
};

struct SceneEdge {
  EdgeAttr attr;
  int sender = 0;
  int receiver = 0;

  friend bool operator==(const SceneEdge&, const SceneEdge&) = default;
};

// Node ids are positions in `nodes`. `global` is empty for unlabeled
// graphs (all-zero u) or holds the one-hot action.
struct SceneGraph {
  std::optional<Action> global;
  std::vector<SceneNode> nodes;
  std::vector<SceneEdge> edges;

  std::vector<double> global_attr() const;
  std::vector<double> node_attr(std::size_t i) const;
  std::vector<double> edge_attr(std::size_t k) const;
  std::size_t node_width() const;
  std::size_t spatial_edge_count() const;
  std::size_t temporal_edge_count() const;

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

// Empty string when every structural invariant holds, else the first
// violation found.
std::string check_invariants(const SceneGraph& g);

struct RelationEvaluator {
  // Relations of the object at index i relative to the object at index j.
  std::function<RelationSet(std::size_t i, std::size_t j)> relations;
};

RelationEvaluator static_evaluator(std::span<const TrackedBox> objects, const RelationConfig& cfg);

// One node per object (input order), one edge i->j for every ordered pair
// with a non-empty relation set.
SceneGraph build_frame_graph(std::span<const TrackedBox> objects, std::int64_t frame,
                             const RelationEvaluator& evaluator);

// Full stage-3 evaluation for the current tracker state: static relations on
// the smoothed boxes plus dynamic relations over the shared smoothed history.
SceneGraph build_tracked_frame_graph(const Tracker& tracker, std::span<const TrackedBox> objects,
                                     std::int64_t frame, const RelationConfig& cfg);

// Disjoint union of the graphs (oldest first) plus temporal edges linking an
// instance's nodes in consecutive graphs. Global attribute from the newest.
SceneGraph temporal_concat(std::span<const SceneGraph> graphs, std::size_t window = 10);

// Exchange the hand classes and the left/right relation slots.
SceneGraph mirror(const SceneGraph& g);

// Line-delimited JSON, one graph per line.
std::string to_json_line(const SceneGraph& g);
SceneGraph from_json_line(const std::string& line);
void write_graphs(std::ostream& out, std::span<const SceneGraph> graphs);
std::vector<SceneGraph> read_graphs(std::istream& in);

}  // namespace bimanual
