// Internal helpers for strict JSON document parsing. Unknown keys are
// rejected so that typos in config or map files fail loudly instead of
// silently falling back to defaults.
#pragma once
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "cmm/errors.hpp"

namespace cmm::detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::string& context,
                                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw DataError(context + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw DataError(context + ": unknown key \"" + item.key() + "\"");
  }
}

inline double get_number(const json& obj, const std::string& context,
                         const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw DataError(context + "." + key + ": expected a number");
  return v.get<double>();
}

inline double require_number(const json& obj, const std::string& context,
                             const char* key) {
  if (!obj.contains(key)) throw DataError(context + ": missing key \"" + key + "\"");
  const auto& v = obj.at(key);
  if (!v.is_number()) throw DataError(context + "." + key + ": expected a number");
  return v.get<double>();
}

}  // namespace cmm::detail
