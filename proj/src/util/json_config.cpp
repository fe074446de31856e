#include "eclab/util/json_config.hpp"

#include <algorithm>

namespace eclab::util {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

StrictObject::StrictObject(const nlohmann::json& j, std::string what, std::vector<std::string> valid)
    : j_(j), what_(std::move(what)) {
  if (!j_.is_object()) throw DataError(what_ + ": expected a JSON object");
  for (auto it = j_.begin(); it != j_.end(); ++it) {
    if (std::find(valid.begin(), valid.end(), it.key()) == valid.end()) {
      throw DataError(what_ + ": unknown key '" + it.key() + "' (valid keys: " + join(valid, ", ") + ")");
    }
  }
}

}  // namespace eclab::util
