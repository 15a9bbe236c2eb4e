#include "resteer/io.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "resteer/error.hpp"

namespace resteer::io {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t seed) {
  uLong crc = seed;
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  // zlib takes uInt lengths; feed large blobs in chunks.
  while (remaining > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t value) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", value);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::IoFailure, "short write to " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptRecord, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }
void write_json(const fs::path& path, const nlohmann::ordered_json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::vector<float> read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(Errc::MissingFile, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size % sizeof(float) != 0) {
    fail(Errc::ShapeMismatch, path.string() + ": size " + std::to_string(size) + " is not a multiple of 4");
  }
  std::vector<float> values(size / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  if (!in) fail(Errc::IoFailure, "short read from " + path.string());
  return values;
}

void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) fail(Errc::IoFailure, "short write to " + path.string());
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace resteer::io
