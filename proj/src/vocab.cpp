#include "bimanual/vocab.hpp"

namespace bimanual {
namespace {

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::string_view, N>& names,
                           std::string_view token) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == token) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

}  // namespace

std::optional<Action> parse_action(std::string_view token) {
  return lookup<Action>(kActionNames, token);
}

std::optional<ObjectClass> parse_object_class(std::string_view token) {
  return lookup<ObjectClass>(kObjectNames, token);
}

std::optional<Relation> parse_relation(std::string_view token) {
  return lookup<Relation>(kRelationNames, token);
}

}  // namespace bimanual
