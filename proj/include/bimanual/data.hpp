#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bimanual/geometry.hpp"
#include "bimanual/tracking.hpp"
#include "bimanual/vocab.hpp"

namespace bimanual {

struct FrameRecord {
  std::string recording_id;
  int subject = 0;
  int task = 0;
  int repetition = 0;
  std::int64_t frame = 0;
  double timestamp = 0.0;  // seconds
  std::vector<Detection> detections;
  Action truth_right = Action::idle;
  Action truth_left = Action::idle;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct Recording {
  std::string id;
  int subject = 0;
  int task = 0;
  int repetition = 0;
  double fps = 30.0;
  std::vector<FrameRecord> frames;

  friend bool operator==(const Recording&, const Recording&) = default;
};

// Frame stream format (UTF-8, one JSON object per line):
//   {"format":"bimanual-frames","version":1,"fps":30}
//   {"recording":"s0-t1-r2","subject":0,"task":1,"repetition":2,"frame":0,
//    "t":0.0,"right":"idle","left":"idle",
//    "detections":[{"class":"cup","min":[x,y,z],"max":[x,y,z],"conf":1.0}]}
// Frames of one recording are contiguous and numbered from 0.
inline constexpr int kFrameFormatVersion = 1;

class FrameReader {
 public:
  explicit FrameReader(std::istream& in);
  // Empty input yields no header and no frames.
  std::optional<FrameRecord> next();
  double fps() const { return fps_; }

 private:
  std::istream& in_;
  double fps_ = 30.0;
  std::size_t line_no_ = 0;
  bool header_read_ = false;
  std::map<std::string, std::int64_t> last_frame_;
  std::map<std::string, double> last_time_;
};

class FrameWriter {
 public:
  FrameWriter(std::ostream& out, double fps);
  void write(const FrameRecord& r);

 private:
  std::ostream& out_;
};

std::string frame_to_json_line(const FrameRecord& r);

std::vector<FrameRecord> load_frames(std::istream& in, double* fps = nullptr);
void save_frames(std::ostream& out, const std::vector<FrameRecord>& frames, double fps);

// Groups a frame stream into recordings (in order of first appearance).
std::vector<Recording> split_recordings(const std::vector<FrameRecord>& frames, double fps);
std::vector<Recording> load_recordings(const std::filesystem::path& path);
void save_recording(const std::filesystem::path& path, const Recording& r);

// ---------------------------------------------------------------------------
// Scenario scripts

struct ScriptObject {
  std::string name;
  ObjectClass object_class = ObjectClass::cup;
  Vec3 position{};  // footprint center in x/z, bottom height in y
  Vec3 size{};      // extents along x, y, z
};

struct Phase {
  Action action = Action::idle;
  double duration = 1.0;  // seconds
  std::string target;     // object acted on
  std::string over;       // pour/cut/hammer/saw/stir destination object
  double height = 150.0;  // lift height / hover gap, mm
  double amplitude = 40.0;  // reciprocating amplitude or stir radius, mm
  double period = 0.6;      // seconds per cycle
};

struct ScenarioScript {
  std::string name;
  double fps = 30.0;
  double noise = 2.0;  // mm, Gaussian jitter per box corner coordinate
  std::vector<ScriptObject> objects;
  Vec3 right_rest{300.0, 45.0, 750.0};
  Vec3 left_rest{-300.0, 45.0, 750.0};
  double hand_size = 90.0;
  std::vector<Phase> right;
  std::vector<Phase> left;

  double duration() const;
  // Throws ConfigError naming the problem.
  void validate() const;
};

std::string script_to_json(const ScenarioScript& s);
ScenarioScript script_from_json(const std::string& text);

// Built-in task archetypes.
std::vector<ScenarioScript> builtin_scripts(const std::string& suite);
std::vector<std::string> builtin_suites();

struct SubjectStyle {
  double speed = 1.0;  // durations are divided by this
  Vec3 offset{};       // workspace shift, mm
};

// Renders a script into frames; identical (script, seed) give identical output.
std::vector<FrameRecord> generate(const ScenarioScript& script, std::uint64_t seed,
                                  const SubjectStyle& style = {});

struct Dataset {
  std::vector<std::string> task_names;
  std::vector<Recording> recordings;
};

// Per subject: its own seed, speed and workspace offset; per repetition:
// jittered object placement and phase durations.
Dataset build_suite(int n_subjects, const std::vector<ScenarioScript>& tasks, int reps,
                    std::uint64_t seed);

SubjectStyle subject_style(int subject, std::uint64_t seed);

// On-disk dataset: <dir>/dataset.json index plus <dir>/frames/<id>.jsonl.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace bimanual
