#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace resteer::io {

namespace fs = std::filesystem;

std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t seed = 0);
std::string hex32(std::uint32_t value);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

nlohmann::json read_json(const fs::path& path);
/// Pretty-printed with a trailing newline so files diff cleanly.
void write_json(const fs::path& path, const nlohmann::json& doc);
void write_json(const fs::path& path, const nlohmann::ordered_json& doc);

/// Raw little-endian f32 blobs. The host is assumed little-endian (checked at
/// compile time in io.cpp).
std::vector<float> read_f32(const fs::path& path);
void write_f32(const fs::path& path, std::span<const float> values);

void ensure_directory(const fs::path& dir);

}  // namespace resteer::io

namespace resteer::io {

/// Shortest decimal text that round-trips the value.
std::string format_double(double value);

}  // namespace resteer::io
