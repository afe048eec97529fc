#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace evdepth {

/// A single brightness-change record. Polarity is always -1 or +1.
struct Event {
  double t = 0.0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;
};

/// Events falling into (t_end - duration, t_end]; t_end is the timestamp of
/// the intensity frame the window belongs to.
struct EventWindow {
  std::vector<Event> events;
  double t_start = 0.0;
  double t_end = 0.0;
  int frame_index = 0;

  double duration() const { return t_end - t_start; }
};

/// Where the normalised event timestamp starts counting.
enum class TimeOrigin {
  kWindowStart,  // t* = (B-1)(t - t_start)/dT
  kFirstEvent,   // t* = (B-1)(t - t_first)/dT
};

/// Signed spatiotemporal event encoding, row-major [bin][row][col].
struct VoxelGrid {
  int bins = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  // provenance of the source window
  double t_start = 0.0;
  double t_end = 0.0;
  int frame_index = 0;
  std::size_t event_count = 0;

  VoxelGrid() = default;
  VoxelGrid(int b, int h, int w)
      : bins(b), height(h), width(w),
        data(static_cast<std::size_t>(b) * h * w, 0.0f) {}

  float& at(int b, int y, int x) {
    return data[(static_cast<std::size_t>(b) * height + y) * width + x];
  }
  float at(int b, int y, int x) const {
    return data[(static_cast<std::size_t>(b) * height + y) * width + x];
  }
};

struct VoxelOptions {
  int bins = 5;
  double window_s = 0.05;
  TimeOrigin origin = TimeOrigin::kWindowStart;
};

/// Default voxel configuration: B = 5 temporal bins over a 50 ms window.
inline constexpr int kDefaultBins = 5;
inline constexpr double kDefaultWindowSeconds = 0.05;

/// One window per frame timestamp covering (T_f - window_s, T_f].
/// Throws on an unsorted stream, non-increasing frame times or window_s <= 0.
std::vector<EventWindow> slice_windows(std::span<const Event> stream,
                                       std::span<const double> frame_timestamps,
                                       double window_s);

/// Distributes each event's polarity over the two nearest temporal bins with
/// triangular weights. Empty windows give an all-zero grid.
VoxelGrid voxelize(const EventWindow& window, int bins, int height, int width,
                   TimeOrigin origin = TimeOrigin::kWindowStart);

/// Fraction of pixels with at least one nonzero bin.
double density(const VoxelGrid& grid);

/// Sum over bins, one value per pixel (row-major).
std::vector<float> collapse_bins(const VoxelGrid& grid);

/// Mirror columns (x -> W-1-x). Temporal bins are untouched.
VoxelGrid flip_horizontal(const VoxelGrid& grid);

// --- event files -----------------------------------------------------------

struct EventStream {
  int height = 0;
  int width = 0;
  std::vector<Event> events;
};

/// Binary records are packed little-endian (f64 t, u16 x, u16 y, i8 p),
/// 13 bytes each, with a JSON sidecar `<stem>.json` holding height, width,
/// count.
void write_event_file(const std::filesystem::path& path, const EventStream& stream);

/// Reads either the binary format (sidecar required) or a CSV file with a
/// `t,x,y,p` header. Polarity 0 maps to -1.
EventStream read_event_file(const std::filesystem::path& path);

std::filesystem::path event_sidecar_path(const std::filesystem::path& path);

}  // namespace evdepth
