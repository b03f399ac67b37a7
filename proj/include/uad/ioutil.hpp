#pragma once

#include <string>

#include "json.hpp"

namespace uad {

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Creates the directory (and parents) if needed.
void ensure_directory(const std::string& path);

}  // namespace uad
