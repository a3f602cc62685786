// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2kg/json.hpp"

namespace s2kg {

// Slot order is annotation order, so slots are a vector of pairs rather
// than a map.
struct Entity {
  std::string name;
  std::string entity_type;
  std::vector<std::pair<std::string, std::vector<std::string>>> slots;

  const std::vector<std::string>* find_slot(const std::string& slot) const;
  void add_value(const std::string& slot, const std::string& value);

  bool operator==(const Entity&) const = default;
};

struct LocalKB {
  std::vector<Entity> entities;

  bool empty() const { return entities.empty(); }
  const Entity* find_entity(const std::string& name) const;
  std::size_t pair_count() const;

  bool operator==(const LocalKB&) const = default;
};

// One rendered "key: value" pair of a serialized KB.
struct KbPair {
  std::size_t entity_index;
  std::string text;
};

inline constexpr const char* kNameKey = "名称";
inline constexpr const char* kPairSeparator = "，";
inline constexpr const char* kEntitySeparator = "；";

// Every "key: value" pair in canonical order: per entity, the name pair
// followed by one pair per slot value.
std::vector<KbPair> kb_pairs(const LocalKB& kb);

// Joins pairs with "，" inside an entity and "；" between entities.
std::string join_kb_pairs(const std::vector<KbPair>& pairs);

std::string serialize_kb(const LocalKB& kb);

// Throws ValidationError naming `owner` when names are empty or duplicated,
// values are empty, or (when `slot_vocab` is given) a slot is unknown.
void validate_kb(const LocalKB& kb, const std::vector<std::string>* slot_vocab, const std::string& owner);

Json to_json(const LocalKB& kb);
// `where` prefixes error positions.
LocalKB kb_from_json(const Json& j, const std::string& where, bool strict);

}  // namespace s2kg
