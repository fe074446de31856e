#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eclab/errors.hpp"

namespace eclab::util {

// Reads a JSON object field by field; any key not in `valid` is a hard
// DataError listing what would have been accepted.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string what, std::vector<std::string> valid);

  template <class T>
  void get(const std::string& key, T& out) const {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(what_ + ": bad value for '" + key + "': " + e.what());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string what_;
};

std::string join(const std::vector<std::string>& items, const std::string& sep);

}  // namespace eclab::util
