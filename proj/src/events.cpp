#include "evdepth/events.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evdepth/error.hpp"

namespace evdepth {

std::vector<EventWindow> slice_windows(std::span<const Event> stream,
                                       std::span<const double> frame_timestamps,
                                       double window_s) {
  if (!(window_s > 0.0)) {
    throw Error(ErrorCategory::kRange,
                "window length must be positive, got " + std::to_string(window_s));
  }
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (stream[i].t < stream[i - 1].t) {
      throw Error(ErrorCategory::kFormat,
                  "event stream not sorted by time at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 1; i < frame_timestamps.size(); ++i) {
    if (!(frame_timestamps[i] > frame_timestamps[i - 1])) {
      throw Error(ErrorCategory::kFormat,
                  "frame timestamps not strictly increasing at index " + std::to_string(i));
    }
  }

  auto time_by = [](double t, const Event& e) { return t < e.t; };

  std::vector<EventWindow> windows;
  windows.reserve(frame_timestamps.size());
  for (std::size_t k = 0; k < frame_timestamps.size(); ++k) {
    EventWindow w;
    w.t_end = frame_timestamps[k];
    w.t_start = w.t_end - window_s;
    w.frame_index = static_cast<int>(k);
    // (t_start, t_end]: first event with t > t_start up to last with t <= t_end
    auto first = std::upper_bound(stream.begin(), stream.end(), w.t_start, time_by);
    auto last = std::upper_bound(first, stream.end(), w.t_end, time_by);
    w.events.assign(first, last);
    windows.push_back(std::move(w));
  }
  return windows;
}

VoxelGrid voxelize(const EventWindow& window, int bins, int height, int width,
                   TimeOrigin origin) {
  if (bins < 2) {
    throw Error(ErrorCategory::kRange, "voxel grid needs at least 2 bins");
  }
  if (height <= 0 || width <= 0) {
    throw Error(ErrorCategory::kShape, "voxel grid needs a positive sensor size");
  }
  const double dt = window.duration();
  if (!(dt > 0.0)) {
    throw Error(ErrorCategory::kRange, "window duration must be positive");
  }

  VoxelGrid grid(bins, height, width);
  grid.t_start = window.t_start;
  grid.t_end = window.t_end;
  grid.frame_index = window.frame_index;
  grid.event_count = window.events.size();
  if (window.events.empty()) return grid;

  const double t0 =
      origin == TimeOrigin::kFirstEvent ? window.events.front().t : window.t_start;
  const double scale = (bins - 1) / dt;

  // accumulate in double, store as float
  std::vector<double> acc(grid.data.size(), 0.0);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < window.events.size(); ++i) {
    const Event& e = window.events[i];
    if (e.x >= width || e.y >= height) {
      throw Error(ErrorCategory::kRange,
                  "event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                      std::to_string(e.y) + ") outside " + std::to_string(width) + "x" +
                      std::to_string(height) + " sensor");
    }
    const double ts = scale * (e.t - t0);
    const double lower = std::floor(ts);
    const std::size_t pixel = static_cast<std::size_t>(e.y) * width + e.x;
    for (int n = static_cast<int>(lower); n <= static_cast<int>(lower) + 1; ++n) {
      if (n < 0 || n >= bins) continue;
      const double w = std::max(0.0, 1.0 - std::abs(n - ts));
      if (w > 0.0) acc[n * plane + pixel] += e.p * w;
    }
  }
  std::transform(acc.begin(), acc.end(), grid.data.begin(),
                 [](double v) { return static_cast<float>(v); });
  return grid;
}

double density(const VoxelGrid& grid) {
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  if (plane == 0) return 0.0;
  std::size_t active = 0;
  for (std::size_t px = 0; px < plane; ++px) {
    for (int b = 0; b < grid.bins; ++b) {
      if (grid.data[b * plane + px] != 0.0f) {
        ++active;
        break;
      }
    }
  }
  return static_cast<double>(active) / static_cast<double>(plane);
}

std::vector<float> collapse_bins(const VoxelGrid& grid) {
  const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
  std::vector<float> out(plane, 0.0f);
  for (int b = 0; b < grid.bins; ++b) {
    for (std::size_t px = 0; px < plane; ++px) out[px] += grid.data[b * plane + px];
  }
  return out;
}

VoxelGrid flip_horizontal(const VoxelGrid& grid) {
  VoxelGrid out = grid;
  for (int b = 0; b < grid.bins; ++b) {
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        out.at(b, y, x) = grid.at(b, y, grid.width - 1 - x);
      }
    }
  }
  return out;
}

}  // namespace evdepth
