#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "bimanual/errors.hpp"
#include "bimanual/experiment.hpp"
#include "bimanual/gradcheck.hpp"
#include "bimanual/weights_io.hpp"

namespace py = pybind11;
using namespace bimanual;

namespace {

// (xmin, ymin, zmin, xmax, ymax, zmax)
AABB3 to_box(const std::vector<double>& v) {
  if (v.size() != 6) throw InvalidArgument("a box needs 6 numbers, got " + std::to_string(v.size()));
  AABB3 b{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
  if (!b.valid()) throw InvalidArgument("box has min > max or non-finite values");
  return b;
}

std::vector<std::string> names(RelationSet rs) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kNumRelations; ++i)
    if (rs.contains(static_cast<Relation>(i))) out.emplace_back(kRelationNames[i]);
  return out;
}

RelationConfig relation_config(double tol, double gap) {
  RelationConfig c;
  c.contact_tolerance = tol;
  c.dir_gap = gap;
  c.validate();
  return c;
}

template <std::size_t N>
std::vector<std::string> to_list(const std::array<std::string_view, N>& a) {
  return {a.begin(), a.end()};
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict per_class;
  for (std::size_t c = 0; c < kNumActions; ++c) {
    const ClassMetrics& m = r.per_class[c];
    if (m.support == 0) continue;
    per_class[py::str(std::string(kActionNames[c]))] =
        py::dict(py::arg("precision") = m.precision, py::arg("recall") = m.recall, py::arg("f1") = m.f1,
                 py::arg("support") = m.support);
  }
  auto avg = [](const Averages& a) {
    return py::dict(py::arg("precision") = a.precision, py::arg("recall") = a.recall, py::arg("f1") = a.f1);
  };
  return py::dict(py::arg("k") = r.k, py::arg("accuracy") = r.accuracy, py::arg("micro") = avg(r.micro),
                  py::arg("macro") = avg(r.macro), py::arg("weighted") = avg(r.weighted),
                  py::arg("per_class") = per_class);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Scene-graph construction, graph network inference and scoring";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  m.attr("ACTIONS") = to_list(kActionNames);
  m.attr("OBJECTS") = to_list(kObjectNames);
  m.attr("RELATIONS") = to_list(kRelationNames);

  m.def(
      "static_relations",
      [](const std::vector<double>& a, const std::vector<double>& b, double tol, double gap) {
        return names(evaluate_static_relations(to_box(a), to_box(b), relation_config(tol, gap)));
      },
      py::arg("a"), py::arg("b"), py::arg("contact_tolerance") = 10.0, py::arg("dir_gap") = 10.0,
      "Static relations of box a relative to box b. Boxes are (xmin, ymin, zmin, xmax, ymax, zmax) in mm.");

  m.def(
      "dynamic_relations",
      [](const std::vector<std::vector<double>>& ha, const std::vector<std::vector<double>>& hb, double dt) {
        std::vector<AABB3> a, b;
        for (const auto& v : ha) a.push_back(to_box(v));
        for (const auto& v : hb) b.push_back(to_box(v));
        return names(evaluate_dynamic_relations(a, b, dt, RelationConfig{}));
      },
      py::arg("history_a"), py::arg("history_b"), py::arg("dt") = 1.0 / 30,
      "Dynamic relations over two equally long box histories, oldest first.");

  m.def(
      "frame_graphs",
      [](const std::string& frames_path) {
        std::ifstream in(frames_path);
        if (!in) throw DataError("cannot open " + frames_path);
        Recording rec;
        rec.frames = load_frames(in, &rec.fps);
        std::vector<std::string> out;
        for (const FrameGraph& g : recording_graphs(rec, RelationConfig{}, SmoothingConfig{}))
          out.push_back(to_json_line(g.graph));
        return out;
      },
      py::arg("frames_path"), "Per-frame scene graphs (JSON lines) for a frame stream file.");

  m.def(
      "temporal_concat",
      [](const std::vector<std::string>& graphs, std::size_t window) {
        std::vector<SceneGraph> seq;
        for (const auto& s : graphs) seq.push_back(from_json_line(s));
        return to_json_line(temporal_concat(seq, window));
      },
      py::arg("graphs"), py::arg("window") = 10);

  m.def(
      "mirror", [](const std::string& graph) { return to_json_line(mirror(from_json_line(graph))); },
      py::arg("graph"), "Swap hands and left/right relations.");

  m.def(
      "predict",
      [](const std::string& weights_path, const std::string& graph) {
        const auto w = load_weights(std::filesystem::path(weights_path));
        const BimanualPrediction p = predict_bimanual(from_json_line(graph), w);
        return py::dict(py::arg("right") = p.right, py::arg("left") = p.left);
      },
      py::arg("weights_path"), py::arg("graph"),
      "Class probabilities for both hands of a (temporally concatenated) scene graph.");

  m.def(
      "score",
      [](const std::vector<std::vector<double>>& predictions, const std::vector<std::string>& truth, int k) {
        std::vector<Action> t;
        for (const auto& s : truth) {
          const auto a = parse_action(s);
          if (!a) throw InvalidArgument("unknown action \"" + s + "\"");
          t.push_back(*a);
        }
        return metrics_dict(score(predictions, t, k));
      },
      py::arg("predictions"), py::arg("truth"), py::arg("k") = 1);

  m.def(
      "generate_dataset",
      [](const std::string& config_json, const std::string& out_dir) {
        const RunConfig cfg = parse_run_config(config_json);
        const Dataset ds = generate_dataset(cfg);
        save_dataset(out_dir, ds);
        return ds.recordings.size();
      },
      py::arg("config_json"), py::arg("out_dir"), "Generate a synthetic suite; returns the recording count.");

  m.def(
      "gradcheck",
      [](int graphs, int latent, int steps, std::uint64_t seed) {
        GradCheckOptions o;
        o.graphs = graphs;
        o.shape.latent = latent;
        o.shape.steps = steps;
        o.seed = seed;
        GradCheckReport r;
        {
          py::gil_scoped_release release;
          r = run_gradcheck(o);
        }
        return py::dict(py::arg("passed") = r.passed, py::arg("max_relative_error") = r.max_relative_error,
                        py::arg("parameters_checked") = r.parameters_checked,
                        py::arg("worst_parameter") = r.worst_parameter);
      },
      py::arg("graphs") = 10, py::arg("latent") = 8, py::arg("steps") = 10, py::arg("seed") = 7);
}
