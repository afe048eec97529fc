#include "evdepth/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "evdepth/error.hpp"

namespace evdepth {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

namespace fs = std::filesystem;

fs::path array_sidecar_path(const fs::path& path) {
  fs::path side = path;
  side += ".json";
  return side;
}

void atomic_write(const fs::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCategory::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCategory::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCategory::kIo, "rename " + tmp.string() + ": " + ec.message());
}

void atomic_write(const fs::path& path, const std::string& text) {
  atomic_write(path, std::span<const char>(text.data(), text.size()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kFormat, path.string() + ": " + e.what());
  }
}

void write_float_array(const fs::path& path, const FloatArray& array) {
  const auto expected = std::accumulate(array.shape.begin(), array.shape.end(),
                                        std::int64_t{1}, std::multiplies<>());
  if (expected != static_cast<std::int64_t>(array.data.size())) {
    throw Error(ErrorCategory::kShape, "array payload does not match its shape");
  }
  nlohmann::json side = array.meta;
  side["dtype"] = "float32";
  side["shape"] = array.shape;
  atomic_write(path, std::span<const char>(reinterpret_cast<const char*>(array.data.data()),
                                           array.data.size() * sizeof(float)));
  atomic_write(array_sidecar_path(path), side.dump(2) + "\n");
}

FloatArray read_float_array(const fs::path& path) {
  FloatArray out;
  out.meta = read_json(array_sidecar_path(path));
  if (out.meta.value("dtype", "") != "float32") {
    throw Error(ErrorCategory::kFormat, path.string() + ": only float32 arrays are supported");
  }
  out.shape = out.meta.at("shape").get<std::vector<std::int64_t>>();
  const auto count = std::accumulate(out.shape.begin(), out.shape.end(), std::int64_t{1},
                                     std::multiplies<>());
  const std::string bytes = read_text(path);
  if (bytes.size() != static_cast<std::size_t>(count) * sizeof(float)) {
    throw Error(ErrorCategory::kFormat, path.string() + ": payload size " +
                                            std::to_string(bytes.size()) +
                                            " does not match shape");
  }
  out.data.resize(static_cast<std::size_t>(count));
  std::memcpy(out.data.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace evdepth
