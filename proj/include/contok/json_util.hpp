#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "contok/errors.hpp"

namespace contok::json_util {

using nlohmann::json;

/// Throws ConfigError when `j` holds a key outside `allowed`.
inline void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

/// Reads `key` into `out` when present, leaving the default otherwise.
template <class U>
void read(const json& j, const char* key, U& out, std::string_view section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<U>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

}  // namespace contok::json_util
