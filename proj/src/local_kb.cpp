// SPDX-License-Identifier: Apache-2.0
#include "s2kg/local_kb.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "s2kg/error.hpp"

namespace s2kg {

const std::vector<std::string>* Entity::find_slot(const std::string& slot) const {
  for (const auto& [name, values] : slots) {
    if (name == slot) return &values;
  }
  return nullptr;
}

void Entity::add_value(const std::string& slot, const std::string& value) {
  for (auto& [name, values] : slots) {
    if (name == slot) {
      if (std::find(values.begin(), values.end(), value) == values.end()) values.push_back(value);
      return;
    }
  }
  slots.emplace_back(slot, std::vector<std::string>{value});
}

const Entity* LocalKB::find_entity(const std::string& name) const {
  for (const auto& e : entities) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t LocalKB::pair_count() const {
  std::size_t n = 0;
  for (const auto& e : entities) {
    n += 1;
    for (const auto& [slot, values] : e.slots) n += values.size();
  }
  return n;
}

std::vector<KbPair> kb_pairs(const LocalKB& kb) {
  std::vector<KbPair> pairs;
  pairs.reserve(kb.pair_count());
  for (std::size_t i = 0; i < kb.entities.size(); ++i) {
    const Entity& e = kb.entities[i];
    pairs.push_back({i, std::string(kNameKey) + ": " + e.name});
    for (const auto& [slot, values] : e.slots) {
      for (const auto& v : values) pairs.push_back({i, slot + ": " + v});
    }
  }
  return pairs;
}

std::string join_kb_pairs(const std::vector<KbPair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i > 0) {
      out += pairs[i].entity_index == pairs[i - 1].entity_index ? kPairSeparator : kEntitySeparator;
    }
    out += pairs[i].text;
  }
  return out;
}

std::string serialize_kb(const LocalKB& kb) { return join_kb_pairs(kb_pairs(kb)); }

void validate_kb(const LocalKB& kb, const std::vector<std::string>* slot_vocab, const std::string& owner) {
  std::set<std::string> names;
  for (const auto& e : kb.entities) {
    if (e.name.empty()) throw ValidationError(owner, "local_kb entity with empty name");
    if (!names.insert(e.name).second) {
      throw ValidationError(owner, "duplicate local_kb entity name '" + e.name + "'");
    }
    for (const auto& [slot, values] : e.slots) {
      if (slot_vocab && std::find(slot_vocab->begin(), slot_vocab->end(), slot) == slot_vocab->end()) {
        throw ValidationError(owner, "slot '" + slot + "' of entity '" + e.name + "' not in slot_vocab");
      }
      if (values.empty()) throw ValidationError(owner, "slot '" + slot + "' of entity '" + e.name + "' has no values");
      for (const auto& v : values) {
        if (v.empty()) throw ValidationError(owner, "empty value for slot '" + slot + "' of entity '" + e.name + "'");
      }
    }
  }
}

Json to_json(const LocalKB& kb) {
  Json entities = Json::array();
  for (const auto& e : kb.entities) {
    Json slots = Json::object();
    for (const auto& [slot, values] : e.slots) slots[slot] = values;
    entities.push_back(Json{{"name", e.name}, {"type", e.entity_type}, {"slots", std::move(slots)}});
  }
  return Json{{"entities", std::move(entities)}};
}

namespace {

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where,
                bool strict) {
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      if (strict) throw ParseError("unknown field '" + key + "'", 0, where);
      spdlog::warn("{}: ignoring unknown field '{}'", where, key);
    }
  }
}

}  // namespace

LocalKB kb_from_json(const Json& j, const std::string& where, bool strict) {
  if (!j.is_object() || !j.contains("entities") || !j["entities"].is_array()) {
    throw ParseError("local_kb must be an object with an 'entities' array", 0, where);
  }
  check_keys(j, {"entities"}, where, strict);
  LocalKB kb;
  std::size_t i = 0;
  for (const auto& ej : j["entities"]) {
    const std::string at = where + ".entities[" + std::to_string(i++) + "]";
    if (!ej.is_object() || !ej.contains("name") || !ej["name"].is_string()) {
      throw ParseError("entity needs a string 'name'", 0, at);
    }
    check_keys(ej, {"name", "type", "slots"}, at, strict);
    Entity e;
    e.name = ej["name"].get<std::string>();
    if (ej.contains("type")) {
      if (!ej["type"].is_string()) throw ParseError("'type' must be a string", 0, at);
      e.entity_type = ej["type"].get<std::string>();
    }
    if (ej.contains("slots")) {
      if (!ej["slots"].is_object()) throw ParseError("'slots' must be an object", 0, at);
      for (const auto& [slot, values] : ej["slots"].items()) {
        std::vector<std::string> vs;
        if (values.is_string()) {
          vs.push_back(values.get<std::string>());
        } else if (values.is_array()) {
          for (const auto& v : values) {
            if (!v.is_string()) throw ParseError("slot values must be strings", 0, at + ".slots." + slot);
            vs.push_back(v.get<std::string>());
          }
        } else {
          throw ParseError("slot value must be a string or array of strings", 0, at + ".slots." + slot);
        }
        e.slots.emplace_back(slot, std::move(vs));
      }
    }
    kb.entities.push_back(std::move(e));
  }
  return kb;
}

}  // namespace s2kg
