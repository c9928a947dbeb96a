// Command-line entry point: gen, scripts, relations, train, predict, eval, gradcheck.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "bimanual/data.hpp"
#include "bimanual/errors.hpp"
#include "bimanual/evaluation.hpp"
#include "bimanual/experiment.hpp"
#include "bimanual/gradcheck.hpp"
#include "bimanual/io_util.hpp"
#include "bimanual/scene_graph.hpp"
#include "bimanual/weights_io.hpp"

namespace fs = std::filesystem;
using namespace bimanual;

namespace {

constexpr const char* kConfigEnv = "BIMANUAL_CONFIG";

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path,
                  std::string("JSON run config; falls back to $") + kConfigEnv + ", then built-in defaults");
  cmd->add_option("--seed", c.seed, "Seed for every random choice (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory (default: <output_dir>/<command>-<config hash>)");
  cmd->add_flag("--quiet", c.quiet, "Suppress progress on stderr");
}

RunConfig resolve_config(const Common& c) {
  std::string path = c.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  RunConfig cfg = path.empty() ? parse_run_config("{}") : load_run_config(path);
  if (c.seed) cfg.seed = *c.seed;
  cfg.experiment.training.seed = cfg.seed;
  return cfg;
}

fs::path output_dir(const Common& c, const RunConfig& cfg, const std::string& command,
                    const std::string& salt) {
  if (!c.out.empty()) return c.out;
  return fs::path(cfg.output_dir) / (command + "-" + config_hash(cfg, command + "|" + salt));
}

void write_text(const fs::path& path, const std::string& text) {
  write_atomically(path, [&](std::ostream& out) { out << text; });
}

void log(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << '\n';
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

// A dataset directory or a single frame-stream file.
Dataset load_any(const fs::path& p) {
  require_exists(p, "input");
  if (fs::is_directory(p)) return load_dataset(p);
  Dataset ds;
  ds.recordings = load_recordings(p);
  return ds;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen(const Common& c, std::optional<int> subjects, std::optional<int> reps,
            const std::string& suite, const std::string& scripts) {
  RunConfig cfg = resolve_config(c);
  if (subjects) cfg.suite.subjects = *subjects;
  if (reps) cfg.suite.repetitions = *reps;
  if (!suite.empty()) cfg.suite.name = suite;
  if (!scripts.empty()) cfg.suite.scripts_dir = scripts;
  cfg = parse_run_config(run_config_to_json(cfg));  // re-validate overrides
  const fs::path out = output_dir(c, cfg, "gen", "");
  const Dataset ds = generate_dataset(cfg);
  save_dataset(out, ds);
  write_text(out / "config.json", run_config_to_json(cfg));
  std::size_t frames = 0;
  for (const Recording& r : ds.recordings) frames += r.frames.size();
  log(c, "generated " + std::to_string(ds.recordings.size()) + " recordings, " +
             std::to_string(frames) + " frames");
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_scripts(const Common& c, const std::string& suite) {
  const fs::path out = c.out.empty() ? fs::path("scenarios") / suite : fs::path(c.out);
  for (const ScenarioScript& s : builtin_scripts(suite))
    write_text(out / (s.name + ".json"), script_to_json(s));
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_relations(const Common& c, const std::string& frames) {
  const RunConfig cfg = resolve_config(c);
  const Dataset ds = load_any(frames);
  const fs::path out = output_dir(c, cfg, "relations", fs::absolute(frames).string());
  for (const Recording& r : ds.recordings) {
    const auto graphs = recording_graphs(r, cfg.experiment.relations, cfg.experiment.smoothing);
    std::vector<SceneGraph> plain;
    plain.reserve(graphs.size());
    for (const FrameGraph& g : graphs) plain.push_back(g.graph);
    write_atomically(out / "graphs" / (r.id + ".jsonl"),
                     [&](std::ostream& o) { write_graphs(o, plain); });
  }
  write_text(out / "config.json", run_config_to_json(cfg));
  log(c, "wrote scene graphs for " + std::to_string(ds.recordings.size()) + " recordings");
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& dataset, std::optional<int> test_subject,
              bool loso, const std::string& ablation) {
  RunConfig cfg = resolve_config(c);
  if (!ablation.empty()) cfg.experiment.ablation = parse_ablation(ablation);
  const Dataset ds = load_any(dataset);
  std::vector<int> subjects = subjects_of(ds);
  if (subjects.size() < 2) throw DataError("training needs recordings of at least 2 subjects");
  if (!loso) {
    const int s = test_subject.value_or(subjects.front());
    if (std::find(subjects.begin(), subjects.end(), s) == subjects.end())
      throw ConfigError("test subject " + std::to_string(s) + " not in dataset");
    subjects = {s};
  }
  const fs::path out = output_dir(c, cfg, "train", fs::absolute(dataset).string() + "|" +
                                                       (loso ? "loso" : std::to_string(subjects[0])));
  const auto graphs = build_all_graphs(ds, cfg.experiment.relations, cfg.experiment.smoothing);
  for (int s : subjects) {
    const FoldOutcome fold = run_fold(ds, graphs, s, cfg.experiment, [&](int subj, const EpochLog& e) {
      log(c, "subject " + std::to_string(subj) + " epoch " + std::to_string(e.epoch) + " loss " +
                 fmt(e.loss) + " val_macro_f1 " + fmt(e.val_macro_f1));
    });
    const std::string tag = "subject_" + std::to_string(s);
    save_weights(out / "weights" / (tag + ".bin"), fold.training.weights);
    write_atomically(out / "logs" / (tag + ".csv"),
                     [&](std::ostream& o) { write_train_log(o, fold.training.log); });
    log(c, "subject " + std::to_string(s) + ": best epoch " + std::to_string(fold.training.best_epoch) +
               ", test macro F1 " + fmt(fold.top1.macro.f1));
  }
  write_text(out / "config.json", run_config_to_json(cfg));
  std::cout << out.string() << '\n';
  return 0;
}

void write_predictions_header(std::ostream& o) {
  o << "recording,frame,hand,truth";
  for (auto n : kActionNames) o << ",p_" << n;
  o << '\n';
}

void write_prediction_row(std::ostream& o, const std::string& rec, std::int64_t frame,
                          const char* hand, Action truth, const std::vector<double>& p) {
  char buf[40];
  o << rec << ',' << frame << ',' << hand << ',' << name(truth);
  for (double v : p) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    o << buf;
  }
  o << '\n';
}

std::vector<Action> argmax_labels(const std::vector<std::vector<double>>& pred) {
  std::vector<Action> out;
  for (const auto& p : pred) out.push_back(static_cast<Action>(ranked_classes(p).front()));
  return out;
}

int cmd_predict(const Common& c, const std::string& weights_path, const std::string& frames) {
  const RunConfig cfg = resolve_config(c);
  require_exists(weights_path, "weights");
  const GraphNetWeights<double> w = load_weights(fs::path(weights_path));
  const Dataset ds = load_any(frames);
  const fs::path out = output_dir(c, cfg, "predict",
                                  fs::absolute(weights_path).string() + "|" + fs::absolute(frames).string());
  ExperimentConfig e = cfg.experiment;
  if (!(w.shape == effective_shape(e)))
    throw DataError("manifest mismatch: weights do not match the configured network/ablation");

  std::ostringstream csv;
  write_predictions_header(csv);
  for (const Recording& r : ds.recordings) {
    const auto graphs = recording_graphs(r, e.relations, e.smoothing);
    std::vector<Sample> samples = make_samples(r, graphs, e.window, 1);
    if (e.ablation != AblationMode::full) samples = ablation_transform(samples, e.ablation);
    const auto pred = predict_samples(samples, w, e.training.precision, e.training.chunk);
    std::vector<std::vector<double>> right, left;
    std::vector<Action> right_truth, left_truth;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const bool is_left = samples[i].mirrored;
      write_prediction_row(csv, r.id, samples[i].frame, is_left ? "left" : "right", samples[i].target,
                           pred[i]);
      (is_left ? left : right).push_back(pred[i]);
      (is_left ? left_truth : right_truth).push_back(samples[i].target);
    }
    std::vector<TimelineTrack> tracks;
    if (!right.empty()) {
      tracks.push_back({"right truth", pool_segments(right_truth)});
      tracks.push_back({"right predicted", pool_segments(argmax_labels(right))});
      tracks.push_back({"left truth", pool_segments(left_truth)});
      tracks.push_back({"left predicted", pool_segments(argmax_labels(left))});
    }
    write_atomically(out / ("timeline_" + r.id + ".svg"),
                     [&](std::ostream& o) { write_timeline_svg(o, tracks, r.fps); });
  }
  write_text(out / "predictions.csv", csv.str());
  write_text(out / "config.json", run_config_to_json(cfg));
  std::cout << out.string() << '\n';
  return 0;
}

// Reads a predictions CSV back into distributions and truth labels.
void read_predictions(const fs::path& path, std::vector<std::vector<double>>& pred,
                      std::vector<Action>& truth) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4 + kNumActions)
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(4 + kNumActions) + " columns");
    auto a = parse_action(cells[3]);
    if (!a) throw DataError("line " + std::to_string(line_no) + ": unknown action token \"" + cells[3] + "\"");
    truth.push_back(*a);
    std::vector<double> p;
    for (std::size_t k = 4; k < cells.size(); ++k) {
      try {
        p.push_back(std::stod(cells[k]));
      } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": bad probability \"" + cells[k] + "\"");
      }
    }
    pred.push_back(std::move(p));
  }
}

void write_eval_outputs(const fs::path& out, const MetricsReport& top1, const MetricsReport& topk,
                        const std::string& prefix) {
  write_atomically(out / (prefix + "metrics.csv"),
                   [&](std::ostream& o) { write_metrics_csv(o, top1, topk); });
  write_atomically(out / (prefix + "confusion_top1.csv"),
                   [&](std::ostream& o) { write_confusion_csv(o, top1.confusion); });
  write_atomically(out / (prefix + "confusion_top" + std::to_string(topk.k) + ".csv"),
                   [&](std::ostream& o) { write_confusion_csv(o, topk.confusion); });
  write_atomically(out / (prefix + "confusion_top1.svg"), [&](std::ostream& o) {
    write_confusion_svg(o, top1.confusion, "Normalized confusion, top prediction");
  });
  write_atomically(out / (prefix + "confusion_top" + std::to_string(topk.k) + ".svg"),
                   [&](std::ostream& o) {
                     write_confusion_svg(o, topk.confusion,
                                         "Normalized confusion, top " + std::to_string(topk.k));
                   });
}

int cmd_eval(const Common& c, const std::string& weights_path, const std::string& predictions,
             const std::string& dataset, std::optional<int> test_subject, std::optional<int> k,
             const std::string& ablation) {
  RunConfig cfg = resolve_config(c);
  if (k) cfg.experiment.top_k = *k;
  if (!ablation.empty()) cfg.experiment.ablation = parse_ablation(ablation);
  cfg = parse_run_config(run_config_to_json(cfg));
  const int topk = cfg.experiment.top_k;

  if (!predictions.empty()) {
    require_exists(predictions, "predictions");
    std::vector<std::vector<double>> pred;
    std::vector<Action> truth;
    read_predictions(predictions, pred, truth);
    const fs::path out = output_dir(c, cfg, "eval", fs::absolute(predictions).string());
    write_eval_outputs(out, score(pred, truth, 1), score(pred, truth, topk), "");
    write_text(out / "config.json", run_config_to_json(cfg));
    std::cout << out.string() << '\n';
    return 0;
  }

  if (weights_path.empty() || dataset.empty())
    throw ConfigError("eval needs --predictions, or --weights with --dataset");
  require_exists(weights_path, "weights");
  const Dataset ds = load_any(dataset);
  const auto graphs = build_all_graphs(ds, cfg.experiment.relations, cfg.experiment.smoothing);

  // A directory holds subject_<s>.bin files, one per held-out subject.
  std::vector<std::pair<int, fs::path>> folds;
  if (fs::is_directory(weights_path)) {
    for (int s : subjects_of(ds)) {
      const fs::path p = fs::path(weights_path) / ("subject_" + std::to_string(s) + ".bin");
      if (fs::exists(p)) folds.emplace_back(s, p);
    }
    if (folds.empty()) throw DataError("no subject_<id>.bin weights in " + weights_path);
  } else {
    folds.emplace_back(test_subject.value_or(subjects_of(ds).front()), weights_path);
  }

  const fs::path out = output_dir(c, cfg, "eval",
                                  fs::absolute(weights_path).string() + "|" + fs::absolute(dataset).string());
  std::vector<FoldOutcome> outcomes;
  std::ostringstream folds_csv;
  folds_csv << "test_subject,top1_macro_f1,top" << topk << "_macro_f1,top1_accuracy,frames\n";
  for (const auto& [s, p] : folds) {
    const GraphNetWeights<double> w = load_weights(p);
    outcomes.push_back(evaluate_fold(ds, graphs, s, w, cfg.experiment));
    const FoldOutcome& f = outcomes.back();
    folds_csv << s << ',' << fmt(f.top1.macro.f1) << ',' << fmt(f.topk.macro.f1) << ','
              << fmt(f.top1.accuracy) << ',' << f.truth.size() << '\n';
  }
  const MetricsReport top1 = pooled_score(outcomes, 1);
  const MetricsReport topkr = pooled_score(outcomes, topk);
  write_eval_outputs(out, top1, topkr, "");
  write_text(out / "folds.csv", folds_csv.str());
  write_text(out / "config.json", run_config_to_json(cfg));
  log(c, "pooled macro F1 top-1 " + fmt(top1.macro.f1) + ", top-" + std::to_string(topk) + " " +
             fmt(topkr.macro.f1));
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_gradcheck(const Common& c, int graphs, int latent, int steps) {
  GradCheckOptions opts;
  if (c.seed) opts.seed = *c.seed;
  opts.graphs = graphs;
  opts.shape.latent = latent;
  opts.shape.steps = steps;
  const GradCheckReport r = run_gradcheck(opts);
  std::cout << (r.passed ? "PASS" : "FAIL") << " graphs=" << r.graphs
            << " parameters=" << r.parameters_checked << " max_rel_error=" << r.max_relative_error
            << " worst=" << r.worst_parameter << '\n';
  return r.passed ? 0 : 1;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bimanual action recognition from scene graphs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, common);
  std::optional<int> subjects, reps;
  std::string suite, scripts_dir;
  gen->add_option("--subjects", subjects, "Number of synthetic subjects (default 4)");
  gen->add_option("--reps", reps, "Repetitions per task (default 4)");
  gen->add_option("--suite", suite, "Built-in suite: full, kitchen-mini, workshop-mini (default full)");
  gen->add_option("--scripts", scripts_dir, "Directory of scenario scripts instead of a built-in suite");

  auto* scripts = app.add_subcommand("scripts", "Export the built-in scenario scripts as JSON");
  add_common(scripts, common);
  std::string script_suite = "full";
  scripts->add_option("--suite", script_suite, "Suite to export")->capture_default_str();

  auto* relations = app.add_subcommand("relations", "Track objects and write per-frame scene graphs");
  add_common(relations, common);
  std::string frames_in;
  relations->add_option("--frames", frames_in, "Frame stream file or dataset directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train on a leave-one-subject-out split");
  add_common(train_cmd, common);
  std::string dataset_dir, ablation;
  std::optional<int> test_subject;
  bool loso = false;
  train_cmd->add_option("--dataset", dataset_dir, "Dataset directory or frame file")->required();
  train_cmd->add_option("--test-subject", test_subject, "Held-out subject (default: lowest id)");
  train_cmd->add_flag("--loso", loso, "Train one model per held-out subject");
  train_cmd->add_option("--ablation", ablation, "full, contact_only, centroids or no_temporal");

  auto* predict = app.add_subcommand("predict", "Per-frame per-hand distributions and timelines");
  add_common(predict, common);
  std::string weights_path, predict_frames;
  predict->add_option("--weights", weights_path, "Weight file")->required();
  predict->add_option("--frames", predict_frames, "Frame stream file or dataset directory")->required();

  auto* eval = app.add_subcommand("eval", "Metrics and confusion matrices");
  add_common(eval, common);
  std::string eval_weights, eval_predictions, eval_dataset, eval_ablation;
  std::optional<int> eval_subject, k;
  eval->add_option("--weights", eval_weights, "Weight file, or directory of subject_<id>.bin files");
  eval->add_option("--predictions", eval_predictions, "Predictions CSV from predict");
  eval->add_option("--dataset", eval_dataset, "Dataset directory or frame file");
  eval->add_option("--test-subject", eval_subject, "Subject scored with a single weight file");
  eval->add_option("-k,--top-k", k, "k of the top-k metrics (default 3)");
  eval->add_option("--ablation", eval_ablation, "Ablation the weights were trained with");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of backpropagation");
  add_common(gradcheck, common);
  int gc_graphs = 100, gc_latent = 8, gc_steps = 10;
  gradcheck->add_option("--graphs", gc_graphs, "Random graphs")->capture_default_str();
  gradcheck->add_option("--latent", gc_latent, "Latent width")->capture_default_str();
  gradcheck->add_option("--steps", gc_steps, "Core steps")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[config]: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen(common, subjects, reps, suite, scripts_dir);
    if (*scripts) return cmd_scripts(common, script_suite);
    if (*relations) return cmd_relations(common, frames_in);
    if (*train_cmd) return cmd_train(common, dataset_dir, test_subject, loso, ablation);
    if (*predict) return cmd_predict(common, weights_path, predict_frames);
    if (*eval)
      return cmd_eval(common, eval_weights, eval_predictions, eval_dataset, eval_subject, k, eval_ablation);
    if (*gradcheck) return cmd_gradcheck(common, gc_graphs, gc_latent, gc_steps);
  } catch (const ConfigError& e) {
    std::cerr << "error[config]: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error[data]: " << one_line(e.what()) << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "error[divergence]: " << one_line(e.what()) << '\n';
    return 4;
  } catch (const InvalidArgument& e) {
    std::cerr << "error[data]: " << one_line(e.what()) << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[data]: " << one_line(e.what()) << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
