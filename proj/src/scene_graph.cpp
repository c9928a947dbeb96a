#include "bimanual/scene_graph.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "bimanual/errors.hpp"

namespace bimanual {

using nlohmann::json;

std::vector<double> encode_action(Action a) {
  std::vector<double> v(kNumActions, 0.0);
  v[index(a)] = 1.0;
  return v;
}

std::vector<double> encode_object(ObjectClass c) {
  std::vector<double> v(kNumObjectClasses, 0.0);
  v[index(c)] = 1.0;
  return v;
}

std::vector<double> encode_relations(RelationSet rs, bool temporal) {
  if (temporal && !rs.empty())
    throw InvalidArgument("temporal edges cannot carry spatial relations");
  std::vector<double> v(kEdgeWidth, 0.0);
  for (std::size_t i = 0; i < kNumRelations; ++i) {
    if (rs.contains(static_cast<Relation>(i))) v[i] = 1.0;
  }
  if (temporal) v[kTemporalSlot] = 1.0;
  return v;
}

std::vector<double> SceneGraph::global_attr() const {
  if (!global) return std::vector<double>(kNumActions, 0.0);
  return encode_action(*global);
}

std::vector<double> SceneGraph::node_attr(std::size_t i) const {
  std::vector<double> v = encode_object(nodes.at(i).object_class);
  v.insert(v.end(), nodes[i].extra.begin(), nodes[i].extra.end());
  return v;
}

std::vector<double> SceneGraph::edge_attr(std::size_t k) const {
  return encode_relations(edges.at(k).attr.relations, edges[k].attr.temporal);
}

std::size_t SceneGraph::node_width() const {
  return kNumObjectClasses + (nodes.empty() ? 0 : nodes.front().extra.size());
}

std::size_t SceneGraph::spatial_edge_count() const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [](const SceneEdge& e) { return !e.attr.temporal; }));
}

std::size_t SceneGraph::temporal_edge_count() const { return edges.size() - spatial_edge_count(); }

std::string check_invariants(const SceneGraph& g) {
  const auto n = static_cast<int>(g.nodes.size());
  const std::size_t extra = g.nodes.empty() ? 0 : g.nodes.front().extra.size();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const int c = static_cast<int>(g.nodes[i].object_class);
    if (c < 0 || c >= static_cast<int>(kNumObjectClasses))
      return "node " + std::to_string(i) + " has an invalid class";
    if (g.nodes[i].extra.size() != extra)
      return "node " + std::to_string(i) + " has inconsistent attribute width";
  }
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const SceneEdge& e = g.edges[k];
    const std::string id = "edge " + std::to_string(k);
    if (e.sender < 0 || e.sender >= n || e.receiver < 0 || e.receiver >= n)
      return id + " references a missing node";
    if (e.sender == e.receiver) return id + " is a self loop";
    if (e.attr.temporal && !e.attr.relations.empty())
      return id + " mixes temporal and spatial slots";
    if (e.attr.temporal) {
      const SceneNode& s = g.nodes[static_cast<std::size_t>(e.sender)];
      const SceneNode& r = g.nodes[static_cast<std::size_t>(e.receiver)];
      if (s.instance_id != r.instance_id || r.frame <= s.frame)
        return id + " is temporal but does not link one instance forward in time";
    } else if (g.nodes[static_cast<std::size_t>(e.sender)].frame !=
               g.nodes[static_cast<std::size_t>(e.receiver)].frame) {
      return id + " is spatial but spans frames";
    }
  }
  if (g.global) {
    const int a = static_cast<int>(*g.global);
    if (a < 0 || a >= static_cast<int>(kNumActions)) return "global attribute is not a valid action";
  }
  return {};
}

RelationEvaluator static_evaluator(std::span<const TrackedBox> objects, const RelationConfig& cfg) {
  return {[objects, cfg](std::size_t i, std::size_t j) {
    return evaluate_static_relations(objects[i].box, objects[j].box, cfg);
  }};
}

SceneGraph build_frame_graph(std::span<const TrackedBox> objects, std::int64_t frame,
                             const RelationEvaluator& evaluator) {
  SceneGraph g;
  g.nodes.reserve(objects.size());
  for (const TrackedBox& o : objects) g.nodes.push_back({o.object_class, o.instance_id, frame, {}});
  for (std::size_t i = 0; i < objects.size(); ++i) {
    for (std::size_t j = 0; j < objects.size(); ++j) {
      if (i == j) continue;
      const RelationSet rs = evaluator.relations(i, j);
      if (rs.empty()) continue;
      g.edges.push_back({{rs, false}, static_cast<int>(i), static_cast<int>(j)});
    }
  }
  return g;
}

namespace {

// Boxes of the longest run of consecutive frames, ending at `frame`, where
// both tracks were observed.
void shared_history(const TrackedObject& a, const TrackedObject& b, std::int64_t frame,
                    std::vector<AABB3>& out_a, std::vector<AABB3>& out_b) {
  out_a.clear();
  out_b.clear();
  auto ia = a.smoothed_history.rbegin();
  auto ib = b.smoothed_history.rbegin();
  std::int64_t expected = frame;
  while (ia != a.smoothed_history.rend() && ib != b.smoothed_history.rend() &&
         ia->frame == expected && ib->frame == expected) {
    out_a.push_back(ia->box);
    out_b.push_back(ib->box);
    ++ia;
    ++ib;
    --expected;
  }
  std::reverse(out_a.begin(), out_a.end());
  std::reverse(out_b.begin(), out_b.end());
}

}  // namespace

SceneGraph build_tracked_frame_graph(const Tracker& tracker, std::span<const TrackedBox> objects,
                                     std::int64_t frame, const RelationConfig& cfg) {
  std::vector<const TrackedObject*> tracks;
  tracks.reserve(objects.size());
  for (const TrackedBox& o : objects) tracks.push_back(tracker.find(o.instance_id));
  const double dt = 1.0 / tracker.fps();
  std::vector<AABB3> ha, hb;
  RelationEvaluator evaluator{[&](std::size_t i, std::size_t j) {
    RelationSet rs = evaluate_static_relations(objects[i].box, objects[j].box, cfg);
    if (tracks[i] != nullptr && tracks[j] != nullptr) {
      shared_history(*tracks[i], *tracks[j], frame, ha, hb);
      if (ha.size() >= 2) rs = rs | evaluate_dynamic_relations(ha, hb, dt, cfg);
    }
    return rs;
  }};
  return build_frame_graph(objects, frame, evaluator);
}

SceneGraph temporal_concat(std::span<const SceneGraph> graphs, std::size_t window) {
  if (graphs.empty()) throw InvalidArgument("temporal_concat needs at least one graph");
  if (window == 0) throw InvalidArgument("window must be positive");
  if (graphs.size() > window) graphs = graphs.last(window);

  SceneGraph out;
  out.global = graphs.back().global;
  std::size_t total_nodes = 0, total_edges = 0;
  for (const SceneGraph& g : graphs) {
    total_nodes += g.nodes.size();
    total_edges += g.edges.size() + g.nodes.size();
  }
  out.nodes.reserve(total_nodes);
  out.edges.reserve(total_edges);

  std::unordered_map<std::int64_t, int> previous;  // instance -> node id in previous graph
  std::unordered_map<std::int64_t, int> current;
  for (const SceneGraph& g : graphs) {
    const int offset = static_cast<int>(out.nodes.size());
    current.clear();
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      out.nodes.push_back(g.nodes[i]);
      current[g.nodes[i].instance_id] = offset + static_cast<int>(i);
    }
    for (const SceneEdge& e : g.edges)
      out.edges.push_back({e.attr, e.sender + offset, e.receiver + offset});
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      auto it = previous.find(g.nodes[i].instance_id);
      if (it == previous.end()) continue;
      out.edges.push_back({{RelationSet{}, true}, it->second, offset + static_cast<int>(i)});
    }
    std::swap(previous, current);
  }
  return out;
}

SceneGraph mirror(const SceneGraph& g) {
  SceneGraph out = g;
  for (SceneNode& n : out.nodes) {
    if (n.object_class == ObjectClass::left_hand)
      n.object_class = ObjectClass::right_hand;
    else if (n.object_class == ObjectClass::right_hand)
      n.object_class = ObjectClass::left_hand;
  }
  for (SceneEdge& e : out.edges) {
    RelationSet& rs = e.attr.relations;
    const bool had_left = rs.contains(Relation::left);
    const bool had_right = rs.contains(Relation::right);
    rs.erase(Relation::left);
    rs.erase(Relation::right);
    if (had_left) rs.insert(Relation::right);
    if (had_right) rs.insert(Relation::left);
  }
  return out;
}

std::string to_json_line(const SceneGraph& g) {
  json j;
  j["u"] = g.global ? json(static_cast<int>(*g.global)) : json(nullptr);
  json nodes = json::array();
  for (const SceneNode& n : g.nodes) {
    json row = {static_cast<int>(n.object_class), n.instance_id, n.frame};
    if (!n.extra.empty()) row.push_back(n.extra);
    nodes.push_back(std::move(row));
  }
  j["nodes"] = std::move(nodes);
  json edges = json::array();
  for (const SceneEdge& e : g.edges) {
    json slots = json::array();
    const std::uint16_t mask = e.attr.mask();
    for (std::size_t s = 0; s < kEdgeWidth; ++s) {
      if (mask & (1u << s)) slots.push_back(s);
    }
    edges.push_back({e.sender, e.receiver, std::move(slots)});
  }
  j["edges"] = std::move(edges);
  return j.dump();
}

SceneGraph from_json_line(const std::string& line) {
  SceneGraph g;
  try {
    const json j = json::parse(line);
    if (!j.at("u").is_null()) {
      const int a = j.at("u").get<int>();
      if (a < 0 || a >= static_cast<int>(kNumActions)) throw DataError("global slot out of range");
      g.global = static_cast<Action>(a);
    }
    for (const json& row : j.at("nodes")) {
      SceneNode n;
      const int c = row.at(0).get<int>();
      if (c < 0 || c >= static_cast<int>(kNumObjectClasses)) throw DataError("node class out of range");
      n.object_class = static_cast<ObjectClass>(c);
      n.instance_id = row.at(1).get<std::int64_t>();
      n.frame = row.at(2).get<std::int64_t>();
      if (row.size() > 3) n.extra = row.at(3).get<std::vector<double>>();
      g.nodes.push_back(std::move(n));
    }
    for (const json& row : j.at("edges")) {
      SceneEdge e;
      e.sender = row.at(0).get<int>();
      e.receiver = row.at(1).get<int>();
      for (const json& slot : row.at(2)) {
        const auto s = slot.get<std::size_t>();
        if (s == kTemporalSlot)
          e.attr.temporal = true;
        else if (s < kNumRelations)
          e.attr.relations.insert(static_cast<Relation>(s));
        else
          throw DataError("edge slot out of range");
      }
      g.edges.push_back(e);
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed scene graph: ") + ex.what());
  }
  if (auto err = check_invariants(g); !err.empty()) throw DataError("invalid scene graph: " + err);
  return g;
}

void write_graphs(std::ostream& out, std::span<const SceneGraph> graphs) {
  for (const SceneGraph& g : graphs) out << to_json_line(g) << '\n';
}

std::vector<SceneGraph> read_graphs(std::istream& in) {
  std::vector<SceneGraph> graphs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      graphs.push_back(from_json_line(line));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return graphs;
}

}  // namespace bimanual
