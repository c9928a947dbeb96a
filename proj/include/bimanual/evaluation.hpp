#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bimanual/training.hpp"
#include "bimanual/vocab.hpp"

namespace bimanual {

struct ConfusionMatrix {
  // counts[true][predicted]
  std::array<std::array<std::int64_t, kNumActions>, kNumActions> counts{};

  std::int64_t support(Action truth) const;
  // Rows divided by their sums; all-zero rows stay zero.
  std::array<std::array<double, kNumActions>, kNumActions> normalized() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

struct Averages {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  int k = 1;
  std::array<ClassMetrics, kNumActions> per_class{};
  Averages micro, macro, weighted;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

// Classes ordered by probability (descending), ties by canonical index.
std::vector<int> ranked_classes(std::span<const double> distribution);

// Frames are correct at k when the truth is among the k best-ranked classes.
// Macro averages run over classes present in the truth.
MetricsReport score(const std::vector<std::vector<double>>& predictions,
                    std::span<const Action> truth, int k);

enum class AblationMode { full, contact_only, centroids, no_temporal };

AblationMode parse_ablation(const std::string& token);
std::string ablation_name(AblationMode mode);

Sample ablation_transform(const Sample& s, AblationMode mode);
std::vector<Sample> ablation_transform(std::span<const Sample> samples, AblationMode mode);

struct Segment {
  Action action = Action::idle;
  std::int64_t start = 0;  // first frame
  std::int64_t end = 0;    // last frame, inclusive

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Maximal runs of equal labels.
std::vector<Segment> pool_segments(std::span<const Action> labels);
std::vector<Action> expand_segments(std::span<const Segment> segments);

// Rows: one per class with support, then Micro/Macro/Weighted; columns:
// precision/recall/F1 for top-1 and top-k.
void write_metrics_csv(std::ostream& out, const MetricsReport& top1, const MetricsReport& topk);
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
void write_confusion_svg(std::ostream& out, const ConfusionMatrix& cm, const std::string& title);

using Palette = std::array<std::string, kNumActions>;  // "#rrggbb" per action
Palette default_palette();

struct TimelineTrack {
  std::string label;  // e.g. "right (predicted)"
  std::vector<Segment> segments;
};

void write_timeline_svg(std::ostream& out, const std::vector<TimelineTrack>& tracks, double fps,
                        const Palette& palette = default_palette());

}  // namespace bimanual
