#include "bimanual/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "bimanual/errors.hpp"

namespace bimanual {

namespace {

constexpr std::size_t kMaxRawHistory = 256;

double centroid_distance(const AABB3& a, const AABB3& b) {
  const Vec3 ca = centroid(a);
  const Vec3 cb = centroid(b);
  const double dx = ca[0] - cb[0], dy = ca[1] - cb[1], dz = ca[2] - cb[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

void SmoothingConfig::validate() const {
  if (!(three_sigma > 0)) throw InvalidArgument("three_sigma must be positive");
  if (!(gate_distance > 0)) throw InvalidArgument("gate_distance must be positive");
  if (max_lost_frames < 0) throw InvalidArgument("max_lost_frames must be non-negative");
}

std::vector<Assignment> associate(std::vector<TrackedObject>& tracks,
                                  const std::vector<Detection>& detections, std::int64_t frame,
                                  const SmoothingConfig& cfg, std::int64_t& next_id) {
  for (const auto& t : tracks) {
    if (!t.raw_history.empty() && t.last_frame() >= frame)
      throw InvalidArgument("frame must be later than every track's last observation");
  }

  struct Candidate {
    double distance;
    std::int64_t instance_id;
    std::size_t detection;
    std::size_t track;
  };
  std::vector<Candidate> candidates;
  for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
    for (std::size_t di = 0; di < detections.size(); ++di) {
      if (tracks[ti].object_class != detections[di].object_class) continue;
      const double d = centroid_distance(tracks[ti].smoothed_box, detections[di].box);
      if (d <= cfg.gate_distance) candidates.push_back({d, tracks[ti].instance_id, di, ti});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    return std::tie(x.distance, x.instance_id, x.detection) <
           std::tie(y.distance, y.instance_id, y.detection);
  });

  std::vector<bool> track_taken(tracks.size(), false);
  std::vector<std::int64_t> det_track(detections.size(), -1);
  for (const Candidate& c : candidates) {
    if (track_taken[c.track] || det_track[c.detection] >= 0) continue;
    track_taken[c.track] = true;
    det_track[c.detection] = static_cast<std::int64_t>(c.track);
  }

  std::vector<Assignment> assignments;
  assignments.reserve(detections.size());
  const std::size_t existing = tracks.size();
  for (std::size_t di = 0; di < detections.size(); ++di) {
    const Detection& det = detections[di];
    if (det_track[di] >= 0) {
      TrackedObject& t = tracks[static_cast<std::size_t>(det_track[di])];
      t.raw_history.push_back({frame, det.box});
      if (t.raw_history.size() > kMaxRawHistory) t.raw_history.pop_front();
      t.frames_since_seen = 0;
      assignments.push_back({di, t.instance_id});
    } else {
      TrackedObject t;
      t.instance_id = next_id++;
      t.object_class = det.object_class;
      t.raw_history.push_back({frame, det.box});
      t.smoothed_box = det.box;
      tracks.push_back(std::move(t));
      assignments.push_back({di, tracks.back().instance_id});
    }
  }

  // Age and retire the tracks that existed before this frame and went unmatched.
  for (std::size_t ti = 0; ti < existing; ++ti) {
    if (!track_taken[ti]) tracks[ti].frames_since_seen = static_cast<int>(frame - tracks[ti].last_frame());
  }
  std::erase_if(tracks, [&](const TrackedObject& t) { return t.frames_since_seen > cfg.max_lost_frames; });
  return assignments;
}

AABB3 smooth(const TrackedObject& track, double fps, const SmoothingConfig& cfg) {
  if (track.raw_history.empty()) throw InvalidArgument("cannot smooth an empty history");
  const double sigma_frames = cfg.three_sigma / 3.0 * fps;
  const double reach = 3.0 * sigma_frames;
  const std::int64_t now = track.last_frame();

  // Weighted mean of deviations from the newest box, so constant histories
  // reproduce that box bit-for-bit.
  const AABB3& newest = track.raw_history.back().box;
  std::array<double, 6> acc{};
  double total = 0.0;
  for (auto it = track.raw_history.rbegin(); it != track.raw_history.rend(); ++it) {
    const double k = static_cast<double>(now - it->frame);
    if (k > reach) break;
    const double w = std::exp(-k * k / (2.0 * sigma_frames * sigma_frames));
    for (int i = 0; i < 3; ++i) {
      acc[i] += w * (it->box.min[i] - newest.min[i]);
      acc[3 + i] += w * (it->box.max[i] - newest.max[i]);
    }
    total += w;
  }
  AABB3 out;
  for (int i = 0; i < 3; ++i) {
    out.min[i] = newest.min[i] + acc[i] / total;
    out.max[i] = newest.max[i] + acc[3 + i] / total;
  }
  return out;
}

Tracker::Tracker(double fps, SmoothingConfig cfg, int history_length)
    : fps_(fps), cfg_(cfg), history_length_(static_cast<std::size_t>(std::max(history_length, 2))) {
  if (!(fps > 0)) throw InvalidArgument("fps must be positive");
  cfg_.validate();
}

const TrackedObject* Tracker::find(std::int64_t instance_id) const {
  for (const auto& t : tracks_) {
    if (t.instance_id == instance_id) return &t;
  }
  return nullptr;
}

std::vector<TrackedBox> Tracker::update(std::int64_t frame, const std::vector<Detection>& detections) {
  if (frame <= last_frame_) throw InvalidArgument("tracker frames must be strictly increasing");
  last_frame_ = frame;
  const auto assignments = associate(tracks_, detections, frame, cfg_, next_id_);

  const auto reach = static_cast<std::int64_t>(std::floor(cfg_.three_sigma * fps_));
  std::vector<TrackedBox> out;
  out.reserve(assignments.size());
  for (const Assignment& a : assignments) {
    auto it = std::find_if(tracks_.begin(), tracks_.end(),
                           [&](const TrackedObject& t) { return t.instance_id == a.instance_id; });
    TrackedObject& t = *it;
    while (!t.raw_history.empty() && frame - t.raw_history.front().frame > reach)
      t.raw_history.pop_front();
    t.smoothed_box = smooth(t, fps_, cfg_);
    t.smoothed_history.push_back({frame, t.smoothed_box});
    while (t.smoothed_history.size() > history_length_) t.smoothed_history.pop_front();
    out.push_back({t.instance_id, t.object_class, t.smoothed_box});
  }
  return out;
}

}  // namespace bimanual
