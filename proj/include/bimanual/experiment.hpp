#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bimanual/data.hpp"
#include "bimanual/evaluation.hpp"
#include "bimanual/training.hpp"

namespace bimanual {

struct SuiteConfig {
  std::string name = "full";  // built-in suite, ignored when scripts_dir is set
  std::string scripts_dir;    // directory of *.json scenario scripts
  int subjects = 4;
  int repetitions = 4;
};

struct ExperimentConfig {
  RelationConfig relations;
  SmoothingConfig smoothing;
  TrainConfig training;
  std::size_t window = 10;       // temporal concatenation length
  std::size_t train_stride = 1;  // every n-th frame becomes a training sample pair
  std::size_t val_stride = 1;
  AblationMode ablation = AblationMode::full;
  int top_k = 3;
};

// Everything a CLI run depends on. Unknown keys are rejected on parse.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs";
  SuiteConfig suite;
  ExperimentConfig experiment;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical JSON with every field, also used for hashing.
std::string run_config_to_json(const RunConfig& cfg);
// 16 hex digits of FNV-1a over the canonical JSON plus `salt`.
std::string config_hash(const RunConfig& cfg, const std::string& salt = {});

std::vector<ScenarioScript> load_scripts(const SuiteConfig& suite);
Dataset generate_dataset(const RunConfig& cfg);

// Per-recording frame graphs, index-aligned with ds.recordings.
std::vector<std::vector<FrameGraph>> build_all_graphs(const Dataset& ds, const RelationConfig& rel,
                                                      const SmoothingConfig& smoothing);

std::vector<Sample> collect_samples(const Dataset& ds,
                                    const std::vector<std::vector<FrameGraph>>& graphs,
                                    const std::vector<std::size_t>& recordings, std::size_t window,
                                    std::size_t stride, AblationMode mode);

// Network shape adjusted for the ablation's node width.
NetworkShape effective_shape(const ExperimentConfig& cfg);

struct FoldOutcome {
  int test_subject = 0;
  TrainResult training;
  std::vector<std::vector<double>> predictions;  // test samples, right/left interleaved
  std::vector<Action> truth;
  MetricsReport top1, topk;
};

struct LosoOutcome {
  std::vector<FoldOutcome> folds;
  MetricsReport pooled_top1, pooled_topk;
};

using ProgressFn = std::function<void(int test_subject, const EpochLog&)>;

FoldOutcome run_fold(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs,
                     int test_subject, const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Every subject is the test subject once; test-fold predictions are pooled.
LosoOutcome run_loso(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs,
                     const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Distinct subject ids in ascending order.
std::vector<int> subjects_of(const Dataset& ds);

// Scores test-subject predictions of already trained weights.
FoldOutcome evaluate_fold(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs,
                          int test_subject, const GraphNetWeights<double>& w,
                          const ExperimentConfig& cfg);

MetricsReport pooled_score(const std::vector<FoldOutcome>& folds, int k);

}  // namespace bimanual
