#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>

#include "bimanual/vocab.hpp"

namespace bimanual {

// Camera frame, millimeters: x to the camera's right, y up, z away from the
// camera. "front" means nearer to the camera (smaller z).
using Vec3 = std::array<double, 3>;

struct AABB3 {
  Vec3 min{};
  Vec3 max{};

  // min <= max per axis and all components finite.
  bool valid() const;
  friend bool operator==(const AABB3&, const AABB3&) = default;
};

Vec3 centroid(const AABB3& box);
AABB3 translated(const AABB3& box, const Vec3& offset);

// Subset of the 15 spatial relations, stored as a bit mask over the
// canonical relation order.
class RelationSet {
 public:
  constexpr RelationSet() = default;
  constexpr RelationSet(std::initializer_list<Relation> rs) {
    for (Relation r : rs) insert(r);
  }
  static constexpr RelationSet from_mask(std::uint16_t mask) {
    RelationSet s;
    s.bits_ = mask & kAllMask;
    return s;
  }

  constexpr void insert(Relation r) { bits_ |= bit(r); }
  constexpr void erase(Relation r) { bits_ &= static_cast<std::uint16_t>(~bit(r)); }
  constexpr bool contains(Relation r) const { return (bits_ & bit(r)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint16_t mask() const { return bits_; }
  int size() const;

  constexpr RelationSet operator|(RelationSet o) const { return from_mask(bits_ | o.bits_); }
  constexpr RelationSet operator&(RelationSet o) const { return from_mask(bits_ & o.bits_); }
  friend constexpr bool operator==(RelationSet, RelationSet) = default;

  // True when none of the pairwise-exclusive relations co-occur.
  bool mutually_consistent() const;
  std::string to_string() const;

  static constexpr std::uint16_t kAllMask = (1u << kNumRelations) - 1;

 private:
  static constexpr std::uint16_t bit(Relation r) {
    return static_cast<std::uint16_t>(1u << index(r));
  }
  std::uint16_t bits_ = 0;
};

inline constexpr RelationSet kStaticRelations{
    Relation::contact, Relation::above,  Relation::below,  Relation::left,    Relation::right,
    Relation::front,   Relation::behind, Relation::inside, Relation::surround};
inline constexpr RelationSet kDynamicRelations{
    Relation::moving_together, Relation::halting_together, Relation::fixed_moving_together,
    Relation::getting_close,   Relation::moving_apart,      Relation::stable};

struct RelationConfig {
  double contact_tolerance = 10.0;  // mm, total gap tolerated between faces
  double dir_gap = 10.0;            // mm
  int dyn_window = 8;               // frames
  double v_min = 20.0;              // mm/s
  double eps_rel = 30.0;            // mm/s
  double eps_dist = 5.0;            // mm
  double eps_fixed = 10.0;          // mm

  // Throws InvalidArgument on negative thresholds or dyn_window < 2.
  void validate() const;
};

bool in_contact(const AABB3& a, const AABB3& b, double contact_tolerance);

// Static relations of `a` relative to `b` (contact, directions, containment).
RelationSet evaluate_static_relations(const AABB3& a, const AABB3& b, const RelationConfig& cfg);

// Dynamic relations of `a` relative to `b` over equally long box histories
// (oldest first). Throws InvalidArgument("insufficient history") when the
// lengths differ or are shorter than 2, and on dt <= 0.
RelationSet evaluate_dynamic_relations(std::span<const AABB3> history_a,
                                       std::span<const AABB3> history_b, double dt,
                                       const RelationConfig& cfg);

}  // namespace bimanual
