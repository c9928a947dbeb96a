#include "bimanual/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "bimanual/errors.hpp"

namespace bimanual {

bool AABB3::valid() const {
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(min[i]) || !std::isfinite(max[i])) return false;
    if (min[i] > max[i]) return false;
  }
  return true;
}

Vec3 centroid(const AABB3& box) {
  return {0.5 * (box.min[0] + box.max[0]), 0.5 * (box.min[1] + box.max[1]),
          0.5 * (box.min[2] + box.max[2])};
}

AABB3 translated(const AABB3& box, const Vec3& offset) {
  AABB3 out = box;
  for (int i = 0; i < 3; ++i) {
    out.min[i] += offset[i];
    out.max[i] += offset[i];
  }
  return out;
}

int RelationSet::size() const { return std::popcount(bits_); }

bool RelationSet::mutually_consistent() const {
  auto both = [this](Relation x, Relation y) { return contains(x) && contains(y); };
  if (both(Relation::above, Relation::below)) return false;
  if (both(Relation::left, Relation::right)) return false;
  if (both(Relation::front, Relation::behind)) return false;
  if (both(Relation::getting_close, Relation::moving_apart)) return false;
  if (contains(Relation::stable) &&
      (contains(Relation::getting_close) || contains(Relation::moving_apart)))
    return false;
  return true;
}

std::string RelationSet::to_string() const {
  std::string out = "{";
  bool first = true;
  for (std::size_t i = 0; i < kNumRelations; ++i) {
    if (!contains(static_cast<Relation>(i))) continue;
    if (!first) out += ", ";
    out += kRelationNames[i];
    first = false;
  }
  return out + "}";
}

void RelationConfig::validate() const {
  if (contact_tolerance < 0 || dir_gap < 0 || v_min < 0 || eps_rel < 0 || eps_dist < 0 ||
      eps_fixed < 0)
    throw InvalidArgument("relation thresholds must be non-negative");
  if (dyn_window < 2) throw InvalidArgument("dyn_window must be >= 2");
}

namespace {

// Signed separation of a and b along one axis; negative when the projections
// overlap.
double axis_gap(const AABB3& a, const AABB3& b, int k) {
  return std::max(a.min[k] - b.max[k], b.min[k] - a.max[k]);
}

double axis_overlap(const AABB3& a, const AABB3& b, int k) {
  return std::min(a.max[k], b.max[k]) - std::max(a.min[k], b.min[k]);
}

bool contains_box(const AABB3& outer, const AABB3& inner) {
  for (int k = 0; k < 3; ++k) {
    if (inner.min[k] < outer.min[k] || inner.max[k] > outer.max[k]) return false;
  }
  return true;
}

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

}  // namespace

bool in_contact(const AABB3& a, const AABB3& b, double contact_tolerance) {
  // Expanding each box by tol/2 per face closes gaps of up to tol.
  for (int k = 0; k < 3; ++k) {
    if (axis_gap(a, b, k) > contact_tolerance) return false;
  }
  return true;
}

RelationSet evaluate_static_relations(const AABB3& a, const AABB3& b, const RelationConfig& cfg) {
  RelationSet out;
  if (in_contact(a, b, cfg.contact_tolerance)) out.insert(Relation::contact);

  // Axis k, relation when a lies on the positive side, relation when negative.
  struct Direction {
    int axis;
    Relation positive;
    Relation negative;
  };
  static constexpr std::array<Direction, 3> kDirections = {{
      {0, Relation::right, Relation::left},
      {1, Relation::above, Relation::below},
      {2, Relation::behind, Relation::front},
  }};
  for (const Direction& d : kDirections) {
    if (axis_gap(a, b, d.axis) <= cfg.dir_gap) continue;
    const int j = (d.axis + 1) % 3;
    const int l = (d.axis + 2) % 3;
    if (axis_overlap(a, b, j) <= 0.0 || axis_overlap(a, b, l) <= 0.0) continue;
    out.insert(a.min[d.axis] > b.max[d.axis] ? d.positive : d.negative);
  }

  if (contains_box(b, a)) out.insert(Relation::inside);
  if (contains_box(a, b)) out.insert(Relation::surround);
  return out;
}

RelationSet evaluate_dynamic_relations(std::span<const AABB3> history_a,
                                       std::span<const AABB3> history_b, double dt,
                                       const RelationConfig& cfg) {
  if (history_a.size() != history_b.size() || history_a.size() < 2)
    throw InvalidArgument("insufficient history");
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");

  const std::size_t window =
      std::min(history_a.size(), static_cast<std::size_t>(std::max(cfg.dyn_window, 2)));
  history_a = history_a.last(window);
  history_b = history_b.last(window);
  const double elapsed = static_cast<double>(window - 1) * dt;

  const Vec3 a0 = centroid(history_a.front());
  const Vec3 a1 = centroid(history_a.back());
  const Vec3 b0 = centroid(history_b.front());
  const Vec3 b1 = centroid(history_b.back());
  const Vec3 rel0 = sub(a0, b0);
  const Vec3 rel1 = sub(a1, b1);

  RelationSet out;
  if (in_contact(history_a.back(), history_b.back(), cfg.contact_tolerance)) {
    const double speed_a = norm(sub(a1, a0)) / elapsed;
    const double speed_b = norm(sub(b1, b0)) / elapsed;
    const double rel_speed = norm(sub(rel1, rel0)) / elapsed;
    if (speed_a > cfg.v_min && speed_b > cfg.v_min && rel_speed < cfg.eps_rel) {
      out.insert(Relation::moving_together);
      double max_drift = 0.0;
      for (std::size_t t = 1; t < window; ++t) {
        const Vec3 rel = sub(centroid(history_a[t]), centroid(history_b[t]));
        max_drift = std::max(max_drift, norm(sub(rel, rel0)));
      }
      if (max_drift < cfg.eps_fixed) out.insert(Relation::fixed_moving_together);
    } else if (speed_a <= cfg.v_min && speed_b <= cfg.v_min) {
      out.insert(Relation::halting_together);
    }
    return out;
  }

  const double change = norm(rel1) - norm(rel0);
  if (change < -cfg.eps_dist)
    out.insert(Relation::getting_close);
  else if (change > cfg.eps_dist)
    out.insert(Relation::moving_apart);
  else
    out.insert(Relation::stable);
  return out;
}

}  // namespace bimanual
