#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace bimanual {

// Canonical orderings. Every encoding, weight manifest and file format uses
// these indices; changing an order invalidates stored weights.

enum class Action : int {
  idle = 0,
  approach,
  retreat,
  lift,
  place,
  hold,
  stir,
  pour,
  cut,
  drink,
  wipe,
  hammer,
  saw,
  screw,
};
inline constexpr std::size_t kNumActions = 14;

enum class ObjectClass : int {
  cup = 0,
  bowl,
  whisk,
  bottle,
  banana,
  cutting_board,
  knife,
  sponge,
  hammer,
  saw,
  wood,
  screwdriver,
  left_hand,
  right_hand,
};
inline constexpr std::size_t kNumObjectClasses = 14;

enum class Relation : int {
  contact = 0,
  above,
  below,
  left,
  right,
  front,
  behind,
  inside,
  surround,
  moving_together,
  halting_together,
  fixed_moving_together,
  getting_close,
  moving_apart,
  stable,
};
inline constexpr std::size_t kNumRelations = 15;
// Edge attribute slot carrying the temporal (same instance, next frame) flag.
inline constexpr std::size_t kTemporalSlot = 15;
inline constexpr std::size_t kEdgeWidth = 16;

inline constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "idle", "approach", "retreat", "lift",  "place",  "hold", "stir",
    "pour", "cut",      "drink",   "wipe",  "hammer", "saw",  "screw"};

inline constexpr std::array<std::string_view, kNumObjectClasses> kObjectNames = {
    "cup",   "bowl",   "whisk", "bottle", "banana",      "cutting_board", "knife",
    "sponge", "hammer", "saw",   "wood",   "screwdriver", "left_hand",     "right_hand"};

inline constexpr std::array<std::string_view, kNumRelations> kRelationNames = {
    "contact",         "above",            "below",
    "left",            "right",            "front",
    "behind",          "inside",           "surround",
    "moving_together", "halting_together", "fixed_moving_together",
    "getting_close",   "moving_apart",     "stable"};

constexpr std::size_t index(Action a) { return static_cast<std::size_t>(a); }
constexpr std::size_t index(ObjectClass c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index(Relation r) { return static_cast<std::size_t>(r); }

constexpr std::string_view name(Action a) { return kActionNames[index(a)]; }
constexpr std::string_view name(ObjectClass c) { return kObjectNames[index(c)]; }
constexpr std::string_view name(Relation r) { return kRelationNames[index(r)]; }

std::optional<Action> parse_action(std::string_view token);
std::optional<ObjectClass> parse_object_class(std::string_view token);
std::optional<Relation> parse_relation(std::string_view token);

constexpr bool is_hand(ObjectClass c) {
  return c == ObjectClass::left_hand || c == ObjectClass::right_hand;
}

}  // namespace bimanual
