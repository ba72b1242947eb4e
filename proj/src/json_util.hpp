#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "lifestream/errors.hpp"

namespace lifestream::detail {

inline void require_object(const nlohmann::json& j, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& section) {
  require_object(j, section);
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(section + ": unknown key \"" + key + "\"");
  }
}

// Reads j[key] into out when present; type errors become ConfigError.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key + ": wrong value type");
  }
}

}  // namespace lifestream::detail
