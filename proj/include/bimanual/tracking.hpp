#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "bimanual/geometry.hpp"
#include "bimanual/vocab.hpp"

namespace bimanual {

struct Detection {
  ObjectClass object_class = ObjectClass::cup;
  AABB3 box;
  double confidence = 1.0;  // carried through, not used for association

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct SmoothingConfig {
  double three_sigma = 0.250;    // seconds
  double gate_distance = 300.0;  // mm, centroid distance
  int max_lost_frames = 15;

  void validate() const;
};

struct TimedBox {
  std::int64_t frame = 0;
  AABB3 box;
};

struct TrackedObject {
  std::int64_t instance_id = 0;
  ObjectClass object_class = ObjectClass::cup;
  std::deque<TimedBox> raw_history;       // strictly increasing frames
  std::deque<TimedBox> smoothed_history;  // smoothed box per observed frame
  AABB3 smoothed_box;
  int frames_since_seen = 0;

  std::int64_t last_frame() const { return raw_history.back().frame; }
};

struct Assignment {
  std::size_t detection = 0;
  std::int64_t instance_id = 0;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Per-class greedy nearest-centroid association. Candidate pairs inside the
// gate are taken in ascending distance; ties go to the lower instance id and
// then the lower detection index. Unmatched detections open new tracks with
// ids drawn from `next_id`; tracks missing for more than max_lost_frames
// consecutive frames are dropped. Matched tracks receive the raw box but are
// not re-smoothed here.
std::vector<Assignment> associate(std::vector<TrackedObject>& tracks,
                                  const std::vector<Detection>& detections, std::int64_t frame,
                                  const SmoothingConfig& cfg, std::int64_t& next_id);

// Causal Gaussian filter over each of the six box parameters of the raw
// history, relative to the most recent observation.
AABB3 smooth(const TrackedObject& track, double fps, const SmoothingConfig& cfg);

struct TrackedBox {
  std::int64_t instance_id = 0;
  ObjectClass object_class = ObjectClass::cup;
  AABB3 box;
};

// Stateful per-recording tracker: associate, smooth, and keep the smoothed
// histories that dynamic relations read. Single writer.
class Tracker {
 public:
  Tracker(double fps, SmoothingConfig cfg, int history_length);

  // Returns the objects observed at `frame` with their smoothed boxes, in
  // detection order. Frames must be strictly increasing.
  std::vector<TrackedBox> update(std::int64_t frame, const std::vector<Detection>& detections);

  const std::vector<TrackedObject>& tracks() const { return tracks_; }
  const TrackedObject* find(std::int64_t instance_id) const;
  double fps() const { return fps_; }

 private:
  double fps_;
  SmoothingConfig cfg_;
  std::size_t history_length_;
  std::vector<TrackedObject> tracks_;
  std::int64_t next_id_ = 0;
  std::int64_t last_frame_ = -1;
};

}  // namespace bimanual
