#include "bimanual/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bimanual/errors.hpp"
#include "bimanual/io_util.hpp"

namespace bimanual {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kFrameFormat = "bimanual-frames";
constexpr std::string_view kDatasetFormat = "bimanual-dataset";

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

const json& require(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(at_line(line) + "missing field \"" + key + "\"");
  return *it;
}

template <typename T>
T get_as(const json& j, const char* key, std::size_t line) {
  const json& v = require(j, key, line);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw DataError(at_line(line) + "field \"" + key + "\" has the wrong type");
  }
}

Vec3 vec3_field(const json& j, const char* key, std::size_t line) {
  const json& v = require(j, key, line);
  if (!v.is_array() || v.size() != 3) throw DataError(at_line(line) + "\"" + key + "\" must be [x,y,z]");
  Vec3 out{};
  for (std::size_t k = 0; k < 3; ++k) {
    if (!v[k].is_number()) throw DataError(at_line(line) + "\"" + key + "\" must be numeric");
    out[k] = v[k].get<double>();
  }
  return out;
}

Action action_token(const std::string& token, std::size_t line) {
  auto a = parse_action(token);
  if (!a) throw DataError(at_line(line) + "unknown action token \"" + token + "\"");
  return *a;
}

ObjectClass class_token(const std::string& token, std::size_t line) {
  auto c = parse_object_class(token);
  if (!c) throw DataError(at_line(line) + "unknown class token \"" + token + "\"");
  return *c;
}

FrameRecord parse_frame(const json& j, std::size_t line) {
  if (!j.is_object()) throw DataError(at_line(line) + "frame must be an object");
  FrameRecord r;
  r.recording_id = get_as<std::string>(j, "recording", line);
  r.subject = get_as<int>(j, "subject", line);
  r.task = get_as<int>(j, "task", line);
  r.repetition = get_as<int>(j, "repetition", line);
  r.frame = get_as<std::int64_t>(j, "frame", line);
  r.timestamp = get_as<double>(j, "t", line);
  r.truth_right = action_token(get_as<std::string>(j, "right", line), line);
  r.truth_left = action_token(get_as<std::string>(j, "left", line), line);
  const json& dets = require(j, "detections", line);
  if (!dets.is_array()) throw DataError(at_line(line) + "\"detections\" must be an array");
  for (const json& d : dets) {
    if (!d.is_object()) throw DataError(at_line(line) + "detection must be an object");
    Detection det;
    det.object_class = class_token(get_as<std::string>(d, "class", line), line);
    det.box.min = vec3_field(d, "min", line);
    det.box.max = vec3_field(d, "max", line);
    det.confidence = d.contains("conf") ? get_as<double>(d, "conf", line) : 1.0;
    if (!det.box.valid()) throw DataError(at_line(line) + "box min exceeds max");
    r.detections.push_back(det);
  }
  return r;
}

// SplitMix64 finalizer, used to derive independent seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix(seed);
  for (std::uint64_t p : parts) h = mix(h ^ mix(p + 0x632be59bd9b4e019ULL));
  return h;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Box-Muller on our own uniforms so output does not depend on the standard
// library's distribution implementation.
double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 lerp(const Vec3& a, const Vec3& b, double s) {
  return {a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])};
}

}  // namespace

// ---------------------------------------------------------------------------
// Frame stream

std::string frame_to_json_line(const FrameRecord& r) {
  ordered_json j;
  j["recording"] = r.recording_id;
  j["subject"] = r.subject;
  j["task"] = r.task;
  j["repetition"] = r.repetition;
  j["frame"] = r.frame;
  j["t"] = r.timestamp;
  j["right"] = std::string(name(r.truth_right));
  j["left"] = std::string(name(r.truth_left));
  ordered_json dets = ordered_json::array();
  for (const Detection& d : r.detections) {
    ordered_json o;
    o["class"] = std::string(name(d.object_class));
    o["min"] = {d.box.min[0], d.box.min[1], d.box.min[2]};
    o["max"] = {d.box.max[0], d.box.max[1], d.box.max[2]};
    o["conf"] = d.confidence;
    dets.push_back(std::move(o));
  }
  j["detections"] = std::move(dets);
  return j.dump();
}

FrameReader::FrameReader(std::istream& in) : in_(in) {}

std::optional<FrameRecord> FrameReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(at_line(line_no_) + "malformed line (" + e.what() + ")");
    }
    if (!header_read_) {
      if (!j.is_object() || j.value("format", "") != kFrameFormat)
        throw DataError(at_line(line_no_) + "expected frame stream header");
      const int version = get_as<int>(j, "version", line_no_);
      if (version != kFrameFormatVersion)
        throw DataError(at_line(line_no_) + "unsupported format version " + std::to_string(version));
      fps_ = get_as<double>(j, "fps", line_no_);
      if (!(fps_ > 0.0)) throw DataError(at_line(line_no_) + "fps must be positive");
      header_read_ = true;
      continue;
    }
    FrameRecord r = parse_frame(j, line_no_);
    auto it = last_frame_.find(r.recording_id);
    if (it == last_frame_.end()) {
      if (r.frame != 0)
        throw DataError(at_line(line_no_) + "recording \"" + r.recording_id +
                        "\" must start at frame 0");
    } else {
      if (r.frame != it->second + 1)
        throw DataError(at_line(line_no_) + "non-contiguous frame index " + std::to_string(r.frame));
      if (r.timestamp < last_time_[r.recording_id])
        throw DataError(at_line(line_no_) + "timestamp decreases");
    }
    last_frame_[r.recording_id] = r.frame;
    last_time_[r.recording_id] = r.timestamp;
    return r;
  }
  return std::nullopt;
}

FrameWriter::FrameWriter(std::ostream& out, double fps) : out_(out) {
  ordered_json h;
  h["format"] = std::string(kFrameFormat);
  h["version"] = kFrameFormatVersion;
  h["fps"] = fps;
  out_ << h.dump() << '\n';
}

void FrameWriter::write(const FrameRecord& r) { out_ << frame_to_json_line(r) << '\n'; }

std::vector<FrameRecord> load_frames(std::istream& in, double* fps) {
  FrameReader reader(in);
  std::vector<FrameRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  if (fps) *fps = reader.fps();
  return out;
}

void save_frames(std::ostream& out, const std::vector<FrameRecord>& frames, double fps) {
  FrameWriter w(out, fps);
  for (const FrameRecord& r : frames) w.write(r);
}

std::vector<Recording> split_recordings(const std::vector<FrameRecord>& frames, double fps) {
  std::vector<Recording> out;
  std::map<std::string, std::size_t> slot;
  for (const FrameRecord& f : frames) {
    auto [it, fresh] = slot.try_emplace(f.recording_id, out.size());
    if (fresh) {
      Recording r;
      r.id = f.recording_id;
      r.subject = f.subject;
      r.task = f.task;
      r.repetition = f.repetition;
      r.fps = fps;
      out.push_back(std::move(r));
    }
    out[it->second].frames.push_back(f);
  }
  return out;
}

std::vector<Recording> load_recordings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  double fps = 0.0;
  try {
    auto frames = load_frames(in, &fps);
    return split_recordings(frames, fps);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_recording(const std::filesystem::path& path, const Recording& r) {
  write_atomically(path, [&](std::ostream& out) { save_frames(out, r.frames, r.fps); });
}

// ---------------------------------------------------------------------------
// Scenario scripts

namespace {

bool needs_target(Action a) {
  switch (a) {
    case Action::approach:
    case Action::lift:
    case Action::place:
    case Action::pour:
    case Action::stir:
    case Action::cut:
    case Action::wipe:
    case Action::hammer:
    case Action::saw:
    case Action::screw:
    case Action::drink:
      return true;
    default:
      return false;
  }
}

double hand_total(const std::vector<Phase>& phases) {
  double t = 0.0;
  for (const Phase& p : phases) t += p.duration;
  return t;
}

}  // namespace

double ScenarioScript::duration() const { return hand_total(right); }

void ScenarioScript::validate() const {
  auto fail = [&](const std::string& msg) { throw ConfigError("script \"" + name + "\": " + msg); };
  if (!(fps > 0.0)) fail("fps must be positive");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
  if (!(hand_size > 0.0)) fail("hand_size must be positive");
  std::set<std::string> names;
  for (const ScriptObject& o : objects) {
    if (o.name.empty()) fail("object without name");
    if (!names.insert(o.name).second) fail("duplicate object \"" + o.name + "\"");
    if (is_hand(o.object_class)) fail("hands are implicit, not inventory objects");
    for (double s : o.size)
      if (!(s > 0.0)) fail("object \"" + o.name + "\" needs positive size");
  }
  for (const auto* hand : {&right, &left}) {
    const char* side = hand == &right ? "right" : "left";
    if (hand->empty()) fail(std::string(side) + " hand has no phases");
    for (const Phase& p : *hand) {
      if (!(p.duration > 0.0)) fail(std::string(side) + " phase with non-positive duration");
      if (!(p.period > 0.0)) fail(std::string(side) + " phase with non-positive period");
      if (needs_target(p.action) && p.target.empty())
        fail(std::string(side) + " " + std::string(bimanual::name(p.action)) + " phase needs a target");
      if (!p.target.empty() && !names.count(p.target))
        fail("unknown object \"" + p.target + "\"");
      if (!p.over.empty() && !names.count(p.over)) fail("unknown object \"" + p.over + "\"");
      if (p.action == Action::pour && p.over.empty()) fail("pour phase needs \"over\"");
    }
  }
  const double r = hand_total(right);
  const double l = hand_total(left);
  if (std::abs(r - l) > 1e-9 * std::max(1.0, r))
    fail("right and left phases must cover the same duration");
}

std::string script_to_json(const ScenarioScript& s) {
  const Phase defaults;
  auto phases = [&](const std::vector<Phase>& list) {
    ordered_json arr = ordered_json::array();
    for (const Phase& p : list) {
      ordered_json o;
      o["action"] = std::string(name(p.action));
      o["duration"] = p.duration;
      if (!p.target.empty()) o["target"] = p.target;
      if (!p.over.empty()) o["over"] = p.over;
      if (p.height != defaults.height) o["height"] = p.height;
      if (p.amplitude != defaults.amplitude) o["amplitude"] = p.amplitude;
      if (p.period != defaults.period) o["period"] = p.period;
      arr.push_back(std::move(o));
    }
    return arr;
  };
  auto vec = [](const Vec3& v) { return ordered_json::array({v[0], v[1], v[2]}); };
  ordered_json j;
  j["name"] = s.name;
  j["fps"] = s.fps;
  j["noise"] = s.noise;
  j["hand_size"] = s.hand_size;
  j["right_rest"] = vec(s.right_rest);
  j["left_rest"] = vec(s.left_rest);
  ordered_json objs = ordered_json::array();
  for (const ScriptObject& o : s.objects) {
    ordered_json jo;
    jo["name"] = o.name;
    jo["class"] = std::string(name(o.object_class));
    jo["position"] = vec(o.position);
    jo["size"] = vec(o.size);
    objs.push_back(std::move(jo));
  }
  j["objects"] = std::move(objs);
  j["right"] = phases(s.right);
  j["left"] = phases(s.left);
  return j.dump(2) + "\n";
}

ScenarioScript script_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed script: ") + e.what());
  }
  auto check_keys = [](const json& o, std::initializer_list<const char*> allowed, const char* where) {
    if (!o.is_object()) throw ConfigError(std::string(where) + " must be an object");
    for (const auto& [key, _] : o.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
        throw ConfigError(std::string("unknown key \"") + key + "\" in " + where);
    }
  };
  auto num = [](const json& o, const char* key, double fallback) {
    if (!o.contains(key)) return fallback;
    if (!o[key].is_number()) throw ConfigError(std::string("\"") + key + "\" must be a number");
    return o[key].get<double>();
  };
  auto str = [](const json& o, const char* key) {
    if (!o.contains(key)) return std::string();
    if (!o[key].is_string()) throw ConfigError(std::string("\"") + key + "\" must be a string");
    return o[key].get<std::string>();
  };
  auto vec = [](const json& o, const char* key, Vec3 fallback) {
    if (!o.contains(key)) return fallback;
    const json& v = o[key];
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
      throw ConfigError(std::string("\"") + key + "\" must be [x,y,z]");
    return Vec3{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
  };

  check_keys(j, {"name", "fps", "noise", "hand_size", "right_rest", "left_rest", "objects", "right", "left"},
             "script");
  ScenarioScript s;
  s.name = str(j, "name");
  s.fps = num(j, "fps", s.fps);
  s.noise = num(j, "noise", s.noise);
  s.hand_size = num(j, "hand_size", s.hand_size);
  s.right_rest = vec(j, "right_rest", s.right_rest);
  s.left_rest = vec(j, "left_rest", s.left_rest);
  if (j.contains("objects")) {
    for (const json& o : j["objects"]) {
      check_keys(o, {"name", "class", "position", "size"}, "object");
      ScriptObject so;
      so.name = str(o, "name");
      const std::string cls = str(o, "class");
      auto c = parse_object_class(cls);
      if (!c) throw ConfigError("unknown class token \"" + cls + "\"");
      so.object_class = *c;
      so.position = vec(o, "position", so.position);
      so.size = vec(o, "size", so.size);
      s.objects.push_back(so);
    }
  }
  for (auto [key, list] : {std::pair{"right", &s.right}, std::pair{"left", &s.left}}) {
    if (!j.contains(key)) continue;
    for (const json& p : j[key]) {
      check_keys(p, {"action", "duration", "target", "over", "height", "amplitude", "period"}, "phase");
      Phase ph;
      const std::string act = str(p, "action");
      auto a = parse_action(act);
      if (!a) throw ConfigError("unknown action token \"" + act + "\"");
      ph.action = *a;
      ph.duration = num(p, "duration", ph.duration);
      ph.target = str(p, "target");
      ph.over = str(p, "over");
      ph.height = num(p, "height", ph.height);
      ph.amplitude = num(p, "amplitude", ph.amplitude);
      ph.period = num(p, "period", ph.period);
      list->push_back(ph);
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Built-in archetypes. Table top at y = 0, objects around z = 1000 mm, hands
// resting closer to the camera.

namespace {

ScriptObject object(std::string name, ObjectClass c, Vec3 pos, Vec3 size) {
  return {std::move(name), c, pos, size};
}

Phase phase(Action a, double duration, std::string target = {}, std::string over = {}) {
  Phase p;
  p.action = a;
  p.duration = duration;
  p.target = std::move(target);
  p.over = std::move(over);
  return p;
}

Phase with(Phase p, double height, double amplitude, double period) {
  p.height = height;
  p.amplitude = amplitude;
  p.period = period;
  return p;
}

using A = Action;
using O = ObjectClass;

ScenarioScript pour_water() {
  ScenarioScript s;
  s.name = "pour_water";
  s.objects = {object("bottle", O::bottle, {150, 0, 1000}, {70, 220, 70}),
               object("cup", O::cup, {-120, 0, 1000}, {80, 100, 80})};
  s.right = {phase(A::idle, 1.0), phase(A::approach, 1.2, "bottle"),
             with(phase(A::lift, 1.0, "bottle"), 150, 40, 0.6),
             with(phase(A::pour, 2.4, "bottle", "cup"), 40, 40, 0.6), phase(A::place, 1.4, "bottle"),
             phase(A::retreat, 1.2), phase(A::idle, 1.0)};
  s.left = {phase(A::idle, 0.8), phase(A::approach, 1.2, "cup"), phase(A::hold, 5.8, "cup"),
            phase(A::retreat, 1.0), phase(A::idle, 0.4)};
  return s;
}

ScenarioScript stir_bowl() {
  ScenarioScript s;
  s.name = "stir_bowl";
  // The whisk rests in the bowl, offset by the stir radius so the circle is
  // centered on the bowl.
  s.objects = {object("bowl", O::bowl, {0, 0, 1000}, {180, 80, 180}),
               object("whisk", O::whisk, {35, 10, 1000}, {30, 250, 30})};
  s.right = {phase(A::idle, 1.0), phase(A::approach, 1.2, "whisk"),
             with(phase(A::stir, 5.0, "whisk", "bowl"), 150, 35, 1.0), phase(A::retreat, 1.2),
             phase(A::idle, 1.4)};
  s.left = {phase(A::idle, 0.8), phase(A::approach, 1.2, "bowl"), phase(A::hold, 6.0, "bowl"),
            phase(A::retreat, 1.0), phase(A::idle, 0.8)};
  return s;
}

ScenarioScript cut_banana() {
  ScenarioScript s;
  s.name = "cut_banana";
  s.objects = {object("board", O::cutting_board, {0, 0, 1000}, {300, 20, 200}),
               object("banana", O::banana, {0, 20, 1000}, {220, 40, 50}),
               object("knife", O::knife, {250, 0, 870}, {160, 20, 30})};
  s.right = {phase(A::idle, 1.0), phase(A::approach, 1.2, "knife"),
             with(phase(A::lift, 1.0, "knife"), 120, 40, 0.6),
             with(phase(A::cut, 3.4, "knife", "banana"), 150, 25, 0.6), phase(A::place, 1.2, "knife"),
             phase(A::retreat, 1.2), phase(A::idle, 1.0)};
  s.left = {phase(A::idle, 0.8), phase(A::approach, 1.2, "banana"), phase(A::hold, 6.4, "banana"),
            phase(A::retreat, 1.0), phase(A::idle, 0.6)};
  return s;
}

ScenarioScript wipe_table() {
  ScenarioScript s;
  s.name = "wipe_table";
  s.objects = {object("sponge", O::sponge, {150, 0, 1000}, {100, 30, 70}),
               object("cup", O::cup, {-150, 0, 1000}, {80, 100, 80})};
  s.right = {phase(A::idle, 1.0), phase(A::approach, 1.2, "sponge"),
             with(phase(A::wipe, 5.6, "sponge"), 150, 80, 1.2), phase(A::retreat, 1.2),
             phase(A::idle, 1.0)};
  s.left = {phase(A::idle, 0.8), phase(A::approach, 1.2, "cup"), phase(A::lift, 1.0, "cup"),
            phase(A::hold, 4.0, "cup"), phase(A::place, 1.0, "cup"), phase(A::retreat, 1.2),
            phase(A::idle, 0.8)};
  return s;
}

ScenarioScript hammer_nails() {
  ScenarioScript s;
  s.name = "hammer_nails";
  s.objects = {object("wood", O::wood, {0, 0, 1000}, {250, 40, 120}),
               object("hammer", O::hammer, {220, 0, 880}, {60, 30, 250})};
  s.right = {phase(A::idle, 1.0), phase(A::approach, 1.2, "hammer"),
             phase(A::lift, 1.0, "hammer"), with(phase(A::hammer, 3.6, "hammer", "wood"), 150, 60, 0.6),
             phase(A::place, 1.2, "hammer"), phase(A::retreat, 1.2), phase(A::idle, 0.8)};
  s.left = {phase(A::idle, 0.8), phase(A::approach, 1.2, "wood"), phase(A::hold, 6.8, "wood"),
            phase(A::retreat, 1.2)};
  return s;
}

ScenarioScript saw_wood() {
  ScenarioScript s;
  s.name = "saw_wood";
  s.objects = {object("wood", O::wood, {0, 0, 1000}, {250, 40, 120}),
               object("saw", O::saw, {230, 0, 860}, {40, 20, 300})};
  s.right = {phase(A::idle, 1.0), phase(A::approach, 1.2, "saw"),
             with(phase(A::lift, 1.0, "saw"), 120, 40, 0.6),
             with(phase(A::saw, 3.6, "saw", "wood"), 150, 60, 0.8), phase(A::place, 1.2, "saw"),
             phase(A::retreat, 1.2), phase(A::idle, 0.8)};
  s.left = {phase(A::idle, 0.8), phase(A::approach, 1.2, "wood"), phase(A::hold, 6.8, "wood"),
            phase(A::retreat, 1.2)};
  return s;
}

}  // namespace

std::vector<std::string> builtin_suites() { return {"kitchen-mini", "workshop-mini", "full"}; }

std::vector<ScenarioScript> builtin_scripts(const std::string& suite) {
  if (suite == "kitchen-mini") return {pour_water(), stir_bowl(), cut_banana(), wipe_table()};
  if (suite == "workshop-mini") return {hammer_nails(), saw_wood()};
  if (suite == "full")
    return {pour_water(), stir_bowl(), cut_banana(), wipe_table(), hammer_nails(), saw_wood()};
  throw ConfigError("unknown suite \"" + suite + "\"");
}

// ---------------------------------------------------------------------------
// Generator

namespace {

constexpr double kPourTilt = 100.0 * std::numbers::pi / 180.0;
constexpr double kMoveFraction = 0.3;  // share of a tool phase spent moving to the work pose
constexpr double kPourMoveFraction = 0.4;
constexpr double kGraspOverlap = 15.0;  // mm the hand box reaches into the grasped box
constexpr double kToolSink = 5.0;       // mm a tool reaches into its work surface

struct ObjState {
  Vec3 center;
  Vec3 size;
  double tilt = 0.0;  // rotation about the camera axis
  Vec3 home;          // footprint center and bottom at start
};

AABB3 box_of(const ObjState& o) {
  const double c = std::abs(std::cos(o.tilt)), s = std::abs(std::sin(o.tilt));
  const Vec3 ext{o.size[0] * c + o.size[1] * s, o.size[0] * s + o.size[1] * c, o.size[2]};
  AABB3 b;
  for (int k = 0; k < 3; ++k) {
    b.min[k] = o.center[k] - ext[k] / 2;
    b.max[k] = o.center[k] + ext[k] / 2;
  }
  return b;
}

struct HandState {
  double side = 1.0;  // +1 right, -1 left
  Vec3 rest;
  Vec3 center;
  int attached = -1;
  Vec3 offset{};  // attached object center minus hand center
};

struct Run {
  Vec3 hand0;
  Vec3 dest;
  double tilt0 = 0.0;
  double start = 0.0;
  double duration = 1.0;
  bool moves_to_work = false;
};

class Simulator {
 public:
  Simulator(const ScenarioScript& script, const SubjectStyle& style) : script_(script) {
    for (const ScriptObject& o : script.objects) {
      const Vec3 base = add(o.position, style.offset);
      ObjState st;
      st.size = o.size;
      st.center = {base[0], base[1] + o.size[1] / 2, base[2]};
      st.home = base;
      objects_.push_back(st);
      index_[o.name] = static_cast<int>(objects_.size()) - 1;
    }
    hands_[0].side = 1.0;
    hands_[0].rest = add(script.right_rest, style.offset);
    hands_[1].side = -1.0;
    hands_[1].rest = add(script.left_rest, style.offset);
    for (int h = 0; h < 2; ++h) {
      hands_[h].center = hands_[h].rest;
      const auto& list = h == 0 ? script.right : script.left;
      double t = 0.0;
      for (const Phase& p : list) {
        starts_[h].push_back(t);
        durations_[h].push_back(p.duration / style.speed);
        t += p.duration / style.speed;
      }
      total_ = std::max(total_, t);
    }
  }

  double total() const { return total_; }

  // Advances both hands to time t and returns the current labels.
  std::pair<Action, Action> step(double t) {
    for (int h = 0; h < 2; ++h) {
      const auto& list = phases(h);
      if (cursor_[h] < 0) {
        cursor_[h] = 0;
        begin(h);
      }
      while (static_cast<std::size_t>(cursor_[h]) + 1 < list.size() &&
             t >= starts_[h][static_cast<std::size_t>(cursor_[h]) + 1]) {
        apply(h, run_[h].duration);
        ++cursor_[h];
        begin(h);
      }
      apply(h, t - run_[h].start);
    }
    return {current(0).action, current(1).action};
  }

  std::vector<Detection> boxes() const {
    std::vector<Detection> out;
    for (std::size_t i = 0; i < objects_.size(); ++i)
      out.push_back({script_.objects[i].object_class, box_of(objects_[i]), 1.0});
    for (int h = 0; h < 2; ++h) {
      AABB3 b;
      for (int k = 0; k < 3; ++k) {
        b.min[k] = hands_[h].center[k] - script_.hand_size / 2;
        b.max[k] = hands_[h].center[k] + script_.hand_size / 2;
      }
      out.push_back({h == 0 ? ObjectClass::right_hand : ObjectClass::left_hand, b, 1.0});
    }
    return out;
  }

 private:
  const std::vector<Phase>& phases(int h) const { return h == 0 ? script_.right : script_.left; }
  const Phase& current(int h) const { return phases(h)[static_cast<std::size_t>(cursor_[h])]; }
  int object(const std::string& name) const { return name.empty() ? -1 : index_.at(name); }

  Vec3 grasp_pose(const HandState& hand, const AABB3& target) const {
    const double half = script_.hand_size / 2;
    const Vec3 c = centroid(target);
    const double x = hand.side > 0 ? target.max[0] + half - kGraspOverlap
                                   : target.min[0] - half + kGraspOverlap;
    return {x, std::max(c[1], half), c[2]};
  }

  void begin(int h) {
    HandState& hand = hands_[h];
    const Phase& p = current(h);
    const std::size_t k = static_cast<std::size_t>(cursor_[h]);
    Run& run = run_[h];
    run = Run{};
    run.start = starts_[h][k];
    run.duration = durations_[h][k];

    const int target = object(p.target);
    switch (p.action) {
      case Action::idle:
      case Action::approach:
      case Action::retreat:
        hand.attached = -1;
        break;
      default:
        if (target >= 0 && hand.attached != target) {
          hand.attached = target;
          hand.offset = sub(objects_[static_cast<std::size_t>(target)].center, hand.center);
        }
    }
    run.hand0 = hand.center;
    run.dest = hand.center;
    if (hand.attached >= 0) run.tilt0 = objects_[static_cast<std::size_t>(hand.attached)].tilt;

    auto shift_to = [&](const Vec3& object_dest) {
      const ObjState& o = objects_[static_cast<std::size_t>(hand.attached)];
      return add(hand.center, sub(object_dest, o.center));
    };
    const int over = object(p.over);
    switch (p.action) {
      case Action::approach:
        run.dest = grasp_pose(hand, box_of(objects_[static_cast<std::size_t>(target)]));
        break;
      case Action::retreat:
        run.dest = hand.rest;
        break;
      case Action::lift:
        run.dest = add(hand.center, {0.0, p.height, 0.0});
        break;
      case Action::drink:
        run.dest = add(hand.center, {0.0, p.height, -200.0});
        break;
      case Action::place: {
        if (hand.attached < 0) break;
        const ObjState& o = objects_[static_cast<std::size_t>(hand.attached)];
        run.dest = shift_to({o.home[0], o.home[1] + o.size[1] / 2, o.home[2]});
        break;
      }
      case Action::pour: {
        if (hand.attached < 0 || over < 0) break;
        const ObjState& o = objects_[static_cast<std::size_t>(hand.attached)];
        const AABB3 ob = box_of(objects_[static_cast<std::size_t>(over)]);
        const Vec3 oc = centroid(ob);
        run.dest = shift_to({oc[0], ob.max[1] + p.height + o.size[1] / 2, oc[2]});
        run.moves_to_work = true;
        break;
      }
      case Action::cut:
      case Action::saw:
      case Action::hammer: {
        if (hand.attached < 0 || over < 0) break;
        const ObjState& o = objects_[static_cast<std::size_t>(hand.attached)];
        const AABB3 ob = box_of(objects_[static_cast<std::size_t>(over)]);
        const Vec3 oc = centroid(ob);
        const double width = ob.max[0] - ob.min[0];
        run.dest = shift_to({oc[0] + hand.side * 0.3 * width, ob.max[1] - kToolSink + o.size[1] / 2, oc[2]});
        run.moves_to_work = true;
        break;
      }
      default:
        break;
    }
  }

  void apply(int h, double tau) {
    HandState& hand = hands_[h];
    const Phase& p = current(h);
    const Run& run = run_[h];
    const double s = std::clamp(tau / run.duration, 0.0, 1.0);
    const double omega = 2.0 * std::numbers::pi / p.period;
    double tilt = run.tilt0;
    Vec3 c = run.hand0;

    auto oscillate = [&](double local) -> Vec3 {
      const double a = p.amplitude;
      switch (p.action) {
        case Action::cut:
        case Action::wipe:
          return {a * std::sin(omega * local), 0.0, 0.0};
        case Action::saw:
          return {0.0, 0.0, a * std::sin(omega * local)};
        case Action::hammer:
          return {0.0, a * (1.0 - std::cos(omega * local)), 0.0};
        default:
          return {0.0, 0.0, 0.0};
      }
    };

    switch (p.action) {
      case Action::approach:
      case Action::retreat:
      case Action::lift:
      case Action::drink:
        c = lerp(run.hand0, run.dest, s);
        break;
      case Action::place:
        c = lerp(run.hand0, run.dest, s);
        tilt = run.tilt0 * (1.0 - s);
        break;
      case Action::pour:
        c = lerp(run.hand0, run.dest, std::min(1.0, s / kPourMoveFraction));
        if (s > kPourMoveFraction)
          tilt = run.tilt0 +
                 (kPourTilt - run.tilt0) * std::min(1.0, (s - kPourMoveFraction) / 0.3);
        break;
      case Action::stir:
        c = add(run.hand0, {p.amplitude * (std::cos(omega * tau) - 1.0), 0.0,
                            p.amplitude * std::sin(omega * tau)});
        break;
      case Action::cut:
      case Action::saw:
      case Action::hammer:
      case Action::wipe:
        if (run.moves_to_work) {
          const double move = kMoveFraction * run.duration;
          c = tau < move ? lerp(run.hand0, run.dest, tau / move)
                         : add(run.dest, oscillate(tau - move));
        } else {
          c = add(run.hand0, oscillate(tau));
        }
        break;
      default:
        break;
    }
    hand.center = c;
    if (hand.attached >= 0) {
      ObjState& o = objects_[static_cast<std::size_t>(hand.attached)];
      o.center = add(c, hand.offset);
      o.tilt = tilt;
    }
  }

  const ScenarioScript& script_;
  std::vector<ObjState> objects_;
  std::map<std::string, int> index_;
  HandState hands_[2];
  std::vector<double> starts_[2], durations_[2];
  int cursor_[2] = {-1, -1};
  Run run_[2];
  double total_ = 0.0;
};

}  // namespace

std::vector<FrameRecord> generate(const ScenarioScript& script, std::uint64_t seed,
                                  const SubjectStyle& style) {
  script.validate();
  if (!(style.speed > 0.0)) throw InvalidArgument("speed must be positive");
  Simulator sim(script, style);
  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::int64_t>(std::floor(sim.total() * script.fps + 1e-9));
  std::vector<FrameRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t f = 0; f < n; ++f) {
    FrameRecord r;
    r.recording_id = script.name;
    r.frame = f;
    r.timestamp = static_cast<double>(f) / script.fps;
    std::tie(r.truth_right, r.truth_left) = sim.step(r.timestamp);
    r.detections = sim.boxes();
    if (script.noise > 0.0) {
      for (Detection& d : r.detections) {
        for (int k = 0; k < 3; ++k) {
          d.box.min[k] += script.noise * gaussian(rng);
          d.box.max[k] += script.noise * gaussian(rng);
          if (d.box.min[k] > d.box.max[k]) std::swap(d.box.min[k], d.box.max[k]);
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

SubjectStyle subject_style(int subject, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {0x5b, static_cast<std::uint64_t>(subject)}));
  SubjectStyle s;
  s.speed = uniform(rng, 0.85, 1.15);
  s.offset = {uniform(rng, -60.0, 60.0), 0.0, uniform(rng, -60.0, 60.0)};
  return s;
}

namespace {

// Per-repetition variation: a shared layout shift, small per-object moves
// and phase durations scaled by up to 10 percent.
ScenarioScript jitter_script(const ScenarioScript& base, std::mt19937_64& rng) {
  ScenarioScript s = base;
  const Vec3 shift{uniform(rng, -25.0, 25.0), 0.0, uniform(rng, -25.0, 25.0)};
  for (ScriptObject& o : s.objects) {
    o.position[0] += shift[0] + uniform(rng, -8.0, 8.0);
    o.position[2] += shift[2] + uniform(rng, -8.0, 8.0);
  }
  for (Phase& p : s.right) p.duration *= uniform(rng, 0.9, 1.1);
  for (Phase& p : s.left) p.duration *= uniform(rng, 0.9, 1.1);
  const double scale = hand_total(s.right) / hand_total(s.left);
  for (Phase& p : s.left) p.duration *= scale;
  return s;
}

}  // namespace

Dataset build_suite(int n_subjects, const std::vector<ScenarioScript>& tasks, int reps,
                    std::uint64_t seed) {
  if (n_subjects < 2) throw ConfigError("at least 2 subjects are required");
  if (reps < 1) throw ConfigError("at least 1 repetition is required");
  if (tasks.empty()) throw ConfigError("no tasks given");
  Dataset ds;
  for (const ScenarioScript& t : tasks) {
    t.validate();
    ds.task_names.push_back(t.name);
  }
  for (int s = 0; s < n_subjects; ++s) {
    const SubjectStyle style = subject_style(s, seed);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      for (int r = 0; r < reps; ++r) {
        const std::uint64_t rec_seed = derive_seed(
            seed, {static_cast<std::uint64_t>(s), t, static_cast<std::uint64_t>(r)});
        std::mt19937_64 rng(mix(rec_seed));
        const ScenarioScript script = jitter_script(tasks[t], rng);
        Recording rec;
        rec.id = "s" + std::to_string(s) + "-t" + std::to_string(t) + "-r" + std::to_string(r);
        rec.subject = s;
        rec.task = static_cast<int>(t);
        rec.repetition = r;
        rec.fps = script.fps;
        rec.frames = generate(script, rec_seed, style);
        for (FrameRecord& f : rec.frames) {
          f.recording_id = rec.id;
          f.subject = s;
          f.task = rec.task;
          f.repetition = r;
        }
        ds.recordings.push_back(std::move(rec));
      }
    }
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  ordered_json index;
  index["format"] = std::string(kDatasetFormat);
  index["version"] = 1;
  index["tasks"] = ds.task_names;
  ordered_json recs = ordered_json::array();
  for (const Recording& r : ds.recordings) {
    const std::string file = "frames/" + r.id + ".jsonl";
    save_recording(dir / file, r);
    ordered_json o;
    o["id"] = r.id;
    o["subject"] = r.subject;
    o["task"] = r.task;
    o["repetition"] = r.repetition;
    o["file"] = file;
    recs.push_back(std::move(o));
  }
  index["recordings"] = std::move(recs);
  write_atomically(dir / "dataset.json", [&](std::ostream& out) { out << index.dump(2) << '\n'; });
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto index_path = dir / "dataset.json";
  std::ifstream in(index_path);
  if (!in) throw DataError("cannot open " + index_path.string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(index_path.string() + ": malformed (" + e.what() + ")");
  }
  if (!index.is_object() || index.value("format", "") != kDatasetFormat)
    throw DataError(index_path.string() + ": not a dataset index");
  Dataset ds;
  try {
    ds.task_names = index.at("tasks").get<std::vector<std::string>>();
    for (const json& o : index.at("recordings")) {
      const std::string id = o.at("id").get<std::string>();
      auto recs = load_recordings(dir / o.at("file").get<std::string>());
      if (recs.size() != 1 || recs[0].id != id)
        throw DataError("recording file for \"" + id + "\" does not hold exactly that recording");
      ds.recordings.push_back(std::move(recs[0]));
    }
  } catch (const json::exception& e) {
    throw DataError(index_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace bimanual
