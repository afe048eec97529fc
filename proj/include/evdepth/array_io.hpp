#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace evdepth {

/// Flat little-endian float32 payload at `path` with a `<path>.json` sidecar
/// holding {"dtype": "float32", "shape": [...]} plus caller metadata.
struct FloatArray {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  nlohmann::json meta = nlohmann::json::object();
};

void write_float_array(const std::filesystem::path& path, const FloatArray& array);
FloatArray read_float_array(const std::filesystem::path& path);
std::filesystem::path array_sidecar_path(const std::filesystem::path& path);

/// Write to a temporary sibling then rename over `path`.
void atomic_write(const std::filesystem::path& path, std::span<const char> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace evdepth
