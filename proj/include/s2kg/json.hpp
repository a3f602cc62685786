// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

namespace s2kg {

// Insertion-ordered JSON: slot order and field order survive round trips.
using Json = nlohmann::ordered_json;

// FNV-1a over the compact dump, as 16 hex digits.
inline std::string config_hash(const Json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace s2kg
