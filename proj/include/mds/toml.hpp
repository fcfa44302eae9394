#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace mds {

// Reads the TOML subset used by the configuration files: [tables] and
// [dotted.tables], key = value with strings, integers, floats, booleans and
// (possibly nested, possibly multi-line) arrays of those, plus # comments.
// Tables become JSON objects so configs can reuse the from_json plumbing.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json load_toml(const std::filesystem::path& path);

}  // namespace mds
