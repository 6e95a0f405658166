#pragma once

#include <string>

#include <json.hpp>

namespace knowmri {

// Canonical text form: two-space indent, trailing newline. Bytes that are not
// valid UTF-8 (raw byte tokens) become U+FFFD.
inline std::string json_text(const nlohmann::json& j) {
  return j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

}  // namespace knowmri
