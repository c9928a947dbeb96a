#include "bimanual/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bimanual/errors.hpp"
#include "bimanual/io_util.hpp"

namespace bimanual {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

// Reads keys out of an object, remembering which were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key \"" + path_ + "." + key + "\"");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, int> ||
                    std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_integer()) throw ConfigError("");
        if constexpr (!std::is_same_v<T, int>)
          if (it->template get<std::int64_t>() < 0) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError("bad value for \"" + path_ + "." + key + "\"");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string precision_name(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& s) {
  if (s == "float64") return Precision::float64;
  if (s == "float32") return Precision::float32;
  throw ConfigError("unknown precision \"" + s + "\"");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  {
    Section root(j, "config");
    root.get("seed", cfg.seed);
    root.get("output_dir", cfg.output_dir);
    if (const json* s = root.child("suite")) {
      Section sec(*s, "suite");
      sec.get("name", cfg.suite.name);
      sec.get("scripts_dir", cfg.suite.scripts_dir);
      sec.get("subjects", cfg.suite.subjects);
      sec.get("repetitions", cfg.suite.repetitions);
    }
    ExperimentConfig& e = cfg.experiment;
    if (const json* s = root.child("relations")) {
      Section sec(*s, "relations");
      sec.get("contact_tolerance", e.relations.contact_tolerance);
      sec.get("dir_gap", e.relations.dir_gap);
      sec.get("dyn_window", e.relations.dyn_window);
      sec.get("v_min", e.relations.v_min);
      sec.get("eps_rel", e.relations.eps_rel);
      sec.get("eps_dist", e.relations.eps_dist);
      sec.get("eps_fixed", e.relations.eps_fixed);
    }
    if (const json* s = root.child("smoothing")) {
      Section sec(*s, "smoothing");
      sec.get("three_sigma", e.smoothing.three_sigma);
      sec.get("gate_distance", e.smoothing.gate_distance);
      sec.get("max_lost_frames", e.smoothing.max_lost_frames);
    }
    if (const json* s = root.child("network")) {
      Section sec(*s, "network");
      sec.get("latent", e.training.shape.latent);
      sec.get("layers", e.training.shape.layers);
      sec.get("steps", e.training.shape.steps);
    }
    if (const json* s = root.child("training")) {
      Section sec(*s, "training");
      sec.get("lr", e.training.lr);
      sec.get("batch_size", e.training.batch_size);
      sec.get("patience", e.training.patience);
      sec.get("max_epochs", e.training.max_epochs);
      sec.get("chunk", e.training.chunk);
      sec.get("core_init_gain", e.training.core_init_gain);
      std::string precision = precision_name(e.training.precision);
      sec.get("precision", precision);
      e.training.precision = parse_precision(precision);
      sec.get("window", e.window);
      sec.get("train_stride", e.train_stride);
      sec.get("val_stride", e.val_stride);
    }
    if (const json* s = root.child("evaluation")) {
      Section sec(*s, "evaluation");
      std::string mode = ablation_name(e.ablation);
      sec.get("ablation", mode);
      e.ablation = parse_ablation(mode);
      sec.get("top_k", e.top_k);
    }
  }

  ExperimentConfig& e = cfg.experiment;
  try {
    e.relations.validate();
    e.smoothing.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what());
  }
  e.training.validate();
  if (e.window < 1 || e.window > 10) throw ConfigError("training.window must be in 1..10");
  if (e.train_stride < 1 || e.val_stride < 1) throw ConfigError("strides must be positive");
  if (e.top_k < 1 || e.top_k > static_cast<int>(kNumActions))
    throw ConfigError("evaluation.top_k must be in 1..14");
  if (cfg.suite.subjects < 2) throw ConfigError("suite.subjects must be at least 2");
  if (cfg.suite.repetitions < 2)
    throw ConfigError("suite.repetitions must be at least 2 (one validates)");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  const ExperimentConfig& e = cfg.experiment;
  ordered_json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["suite"] = {{"name", cfg.suite.name},
                {"scripts_dir", cfg.suite.scripts_dir},
                {"subjects", cfg.suite.subjects},
                {"repetitions", cfg.suite.repetitions}};
  j["relations"] = {{"contact_tolerance", e.relations.contact_tolerance},
                    {"dir_gap", e.relations.dir_gap},
                    {"dyn_window", e.relations.dyn_window},
                    {"v_min", e.relations.v_min},
                    {"eps_rel", e.relations.eps_rel},
                    {"eps_dist", e.relations.eps_dist},
                    {"eps_fixed", e.relations.eps_fixed}};
  j["smoothing"] = {{"three_sigma", e.smoothing.three_sigma},
                    {"gate_distance", e.smoothing.gate_distance},
                    {"max_lost_frames", e.smoothing.max_lost_frames}};
  j["network"] = {{"latent", e.training.shape.latent},
                  {"layers", e.training.shape.layers},
                  {"steps", e.training.shape.steps}};
  j["training"] = {{"lr", e.training.lr},
                   {"batch_size", e.training.batch_size},
                   {"patience", e.training.patience},
                   {"max_epochs", e.training.max_epochs},
                   {"chunk", e.training.chunk},
                   {"core_init_gain", e.training.core_init_gain},
                   {"precision", precision_name(e.training.precision)},
                   {"window", e.window},
                   {"train_stride", e.train_stride},
                   {"val_stride", e.val_stride}};
  j["evaluation"] = {{"ablation", ablation_name(e.ablation)}, {"top_k", e.top_k}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg, const std::string& salt) {
  const std::uint64_t h = fnv1a(salt, fnv1a(run_config_to_json(cfg)));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<ScenarioScript> load_scripts(const SuiteConfig& suite) {
  if (suite.scripts_dir.empty()) return builtin_scripts(suite.name);
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(suite.scripts_dir, ec))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  if (ec) throw ConfigError("cannot list scripts in " + suite.scripts_dir);
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no scenario scripts in " + suite.scripts_dir);
  std::vector<ScenarioScript> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      out.push_back(script_from_json(ss.str()));
    } catch (const ConfigError& e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  return out;
}

Dataset generate_dataset(const RunConfig& cfg) {
  return build_suite(cfg.suite.subjects, load_scripts(cfg.suite), cfg.suite.repetitions, cfg.seed);
}

std::vector<std::vector<FrameGraph>> build_all_graphs(const Dataset& ds, const RelationConfig& rel,
                                                      const SmoothingConfig& smoothing) {
  std::vector<std::vector<FrameGraph>> out;
  out.reserve(ds.recordings.size());
  for (const Recording& r : ds.recordings) out.push_back(recording_graphs(r, rel, smoothing));
  return out;
}

std::vector<Sample> collect_samples(const Dataset& ds,
                                    const std::vector<std::vector<FrameGraph>>& graphs,
                                    const std::vector<std::size_t>& recordings, std::size_t window,
                                    std::size_t stride, AblationMode mode) {
  std::vector<Sample> out;
  for (std::size_t i : recordings) {
    auto samples = make_samples(ds.recordings[i], graphs[i], window, stride);
    for (Sample& s : samples)
      out.push_back(mode == AblationMode::full ? std::move(s) : ablation_transform(s, mode));
  }
  return out;
}

NetworkShape effective_shape(const ExperimentConfig& cfg) {
  NetworkShape shape = cfg.training.shape;
  if (cfg.ablation == AblationMode::centroids) shape.node_in = static_cast<int>(kNumObjectClasses) + 3;
  return shape;
}

std::vector<int> subjects_of(const Dataset& ds) {
  std::set<int> s;
  for (const Recording& r : ds.recordings) s.insert(r.subject);
  return {s.begin(), s.end()};
}

namespace {

void score_fold(FoldOutcome& out, int k) {
  out.top1 = score(out.predictions, out.truth, 1);
  out.topk = score(out.predictions, out.truth, k);
}

}  // namespace

FoldOutcome evaluate_fold(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs,
                          int test_subject, const GraphNetWeights<double>& w,
                          const ExperimentConfig& cfg) {
  const SplitIndices split = split_recordings(ds.recordings, SplitSpec{test_subject, 0});
  if (split.test.empty())
    throw DataError("no recordings for test subject " + std::to_string(test_subject));
  if (!(w.shape == effective_shape(cfg)))
    throw DataError("manifest mismatch: weights do not match the configured network");
  FoldOutcome out;
  out.test_subject = test_subject;
  // Streamed per recording to bound memory.
  for (std::size_t i : split.test) {
    const auto samples = collect_samples(ds, graphs, {i}, cfg.window, 1, cfg.ablation);
    auto pred = predict_samples(samples, w, cfg.training.precision, cfg.training.chunk);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      out.predictions.push_back(std::move(pred[s]));
      out.truth.push_back(samples[s].target);
    }
  }
  score_fold(out, cfg.top_k);
  return out;
}

FoldOutcome run_fold(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs,
                     int test_subject, const ExperimentConfig& cfg, const ProgressFn& progress) {
  const SplitIndices split = split_recordings(ds.recordings, SplitSpec{test_subject, 0});
  const auto train_set =
      collect_samples(ds, graphs, split.train, cfg.window, cfg.train_stride, cfg.ablation);
  const auto val_set =
      collect_samples(ds, graphs, split.validation, cfg.window, cfg.val_stride, cfg.ablation);
  TrainConfig tc = cfg.training;
  tc.shape = effective_shape(cfg);
  TrainResult result = train(train_set, val_set, tc, [&](const EpochLog& e) {
    if (progress) progress(test_subject, e);
  });
  FoldOutcome out = evaluate_fold(ds, graphs, test_subject, result.weights, cfg);
  out.training = std::move(result);
  return out;
}

MetricsReport pooled_score(const std::vector<FoldOutcome>& folds, int k) {
  std::vector<std::vector<double>> pred;
  std::vector<Action> truth;
  for (const FoldOutcome& f : folds) {
    pred.insert(pred.end(), f.predictions.begin(), f.predictions.end());
    truth.insert(truth.end(), f.truth.begin(), f.truth.end());
  }
  return score(pred, truth, k);
}

LosoOutcome run_loso(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs,
                     const ExperimentConfig& cfg, const ProgressFn& progress) {
  const auto subjects = subjects_of(ds);
  if (subjects.size() < 2) throw DataError("leave-one-subject-out needs at least 2 subjects");
  LosoOutcome out;
  for (int s : subjects) out.folds.push_back(run_fold(ds, graphs, s, cfg, progress));
  out.pooled_top1 = pooled_score(out.folds, 1);
  out.pooled_topk = pooled_score(out.folds, cfg.top_k);
  return out;
}

}  // namespace bimanual
