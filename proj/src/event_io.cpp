#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "evdepth/array_io.hpp"
#include "evdepth/error.hpp"
#include "evdepth/events.hpp"

namespace evdepth {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kRecordBytes = 8 + 2 + 2 + 1;

std::int8_t normalise_polarity(long p, std::size_t index) {
  if (p == 1) return 1;
  if (p == 0 || p == -1) return -1;
  throw Error(ErrorCategory::kFormat,
              "event " + std::to_string(index) + " has polarity " + std::to_string(p));
}

EventStream read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::kIo, "cannot open " + path.string());
  EventStream stream;
  std::string line;
  std::size_t lineno = 0;
  int max_x = -1, max_y = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.find_first_of("tT") == 0) continue;  // header
    std::stringstream ss(line);
    std::string tok[4];
    for (auto& t : tok) {
      if (!std::getline(ss, t, ',')) {
        throw Error(ErrorCategory::kFormat,
                    path.string() + ":" + std::to_string(lineno) + ": expected t,x,y,p");
      }
    }
    try {
      Event e;
      e.t = std::stod(tok[0]);
      const long x = std::stol(tok[1]);
      const long y = std::stol(tok[2]);
      if (x < 0 || y < 0 || x > 65535 || y > 65535) throw std::out_of_range("coordinate");
      e.x = static_cast<std::uint16_t>(x);
      e.y = static_cast<std::uint16_t>(y);
      e.p = normalise_polarity(std::stol(tok[3]), stream.events.size());
      max_x = std::max<int>(max_x, e.x);
      max_y = std::max<int>(max_y, e.y);
      stream.events.push_back(e);
    } catch (const std::logic_error&) {
      throw Error(ErrorCategory::kFormat,
                  path.string() + ":" + std::to_string(lineno) + ": bad event record");
    }
  }
  // a sidecar, when present, fixes the sensor size; otherwise infer it
  const fs::path side = event_sidecar_path(path);
  if (fs::exists(side)) {
    const auto header = read_json(side);
    stream.height = header.at("height").get<int>();
    stream.width = header.at("width").get<int>();
  } else {
    stream.height = max_y + 1;
    stream.width = max_x + 1;
  }
  return stream;
}

}  // namespace

fs::path event_sidecar_path(const fs::path& path) {
  fs::path side = path;
  side.replace_extension(".json");
  return side;
}

void write_event_file(const fs::path& path, const EventStream& stream) {
  std::string bytes(stream.events.size() * kRecordBytes, '\0');
  char* out = bytes.data();
  for (const Event& e : stream.events) {
    std::memcpy(out, &e.t, 8);
    std::memcpy(out + 8, &e.x, 2);
    std::memcpy(out + 10, &e.y, 2);
    std::memcpy(out + 12, &e.p, 1);
    out += kRecordBytes;
  }
  atomic_write(path, bytes);
  nlohmann::json header = {
      {"height", stream.height},
      {"width", stream.width},
      {"count", stream.events.size()},
      {"record", "f64 t, u16 x, u16 y, i8 p (little-endian, packed)"},
  };
  atomic_write(event_sidecar_path(path), header.dump(2) + "\n");
}

EventStream read_event_file(const fs::path& path) {
  if (path.extension() == ".csv") return read_csv(path);

  const fs::path side = event_sidecar_path(path);
  if (!fs::exists(side)) {
    throw Error(ErrorCategory::kIo, "missing event header " + side.string());
  }
  const auto header = read_json(side);
  EventStream stream;
  std::size_t count = 0;
  try {
    stream.height = header.at("height").get<int>();
    stream.width = header.at("width").get<int>();
    count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kFormat, side.string() + ": " + e.what());
  }
  const std::string bytes = read_text(path);
  if (bytes.size() != count * kRecordBytes) {
    throw Error(ErrorCategory::kFormat, path.string() + ": expected " +
                                            std::to_string(count) + " records, file holds " +
                                            std::to_string(bytes.size()) + " bytes");
  }
  stream.events.resize(count);
  const char* in = bytes.data();
  for (std::size_t i = 0; i < count; ++i, in += kRecordBytes) {
    Event& e = stream.events[i];
    std::memcpy(&e.t, in, 8);
    std::memcpy(&e.x, in + 8, 2);
    std::memcpy(&e.y, in + 10, 2);
    std::int8_t p;
    std::memcpy(&p, in + 12, 1);
    e.p = normalise_polarity(p, i);
  }
  return stream;
}

}  // namespace evdepth
