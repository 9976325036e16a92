#pragma once

#include <json.hpp>

#include <filesystem>

namespace softlabel::detail {

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
void ensure_dir(const std::filesystem::path& dir);

} // namespace softlabel::detail
