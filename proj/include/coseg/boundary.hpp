#pragma once

// Boundary detection from reconstruction-error trajectories:
// sliding-window middle-frame reconstruction → moving-average FIR →
// gradient → relative maxima.

#include <algorithm>
#include <string>
#include <vector>

#include "coseg/reconstruction.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

struct DetectorConfig {
  std::size_t window = 10;
  std::size_t fir_half_width = 5;
  std::size_t extrema_range = 70;
  /// Trajectories shorter than this yield no detections.
  std::size_t min_trajectory_len = 0;

  void validate() const {
    if (extrema_range < 1) throw ConfigError("detector: extrema_range must be >= 1");
    if (window < 1) throw ConfigError("detector: window must be >= 1");
  }
};

/// Per-frame signals of one video, kept for plotting and inspection.
struct DetectionTrace {
  std::vector<double> error;      // E
  std::vector<double> smoothed;   // S
  std::vector<double> gradient;   // G
};

struct Detection {
  BoundarySet boundaries;
  std::vector<double> scores;  // G at each boundary
  DetectionTrace trace;
};

/// Centered moving average of width 2N+1 with replicate padding.
inline std::vector<double> fir_smooth(std::span<const double> e, std::size_t half_width) {
  const std::ptrdiff_t n = std::ptrdiff_t(e.size());
  const std::ptrdiff_t w = std::ptrdiff_t(half_width);
  std::vector<double> s(e.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double acc = 0.0, lo = e[std::size_t(t)], hi = lo;
    for (std::ptrdiff_t k = -w; k <= w; ++k) {
      const double v = e[std::size_t(std::clamp(t - k, std::ptrdiff_t{0}, n - 1))];
      acc += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    // A flat neighbourhood averages to itself exactly, without rounding.
    s[std::size_t(t)] = lo == hi ? lo : acc / double(2 * w + 1);
  }
  return s;
}

/// Central differences inside, one-sided differences at both ends.
inline std::vector<double> gradient(std::span<const double> s) {
  const std::size_t n = s.size();
  if (n < 2) throw DataError("gradient: need at least 2 samples");
  std::vector<double> g(n);
  g[0] = s[1] - s[0];
  g[n - 1] = s[n - 1] - s[n - 2];
  for (std::size_t t = 1; t + 1 < n; ++t) g[t] = (s[t + 1] - s[t - 1]) / 2.0;
  return g;
}

/// Positions strictly greater than every value within `range` on both
/// sides. Positions lacking `range` neighbours on either side never qualify.
inline std::vector<std::size_t> relative_extrema(std::span<const double> g, std::size_t range) {
  if (range < 1) throw ConfigError("relative_extrema: range must be >= 1");
  std::vector<std::size_t> out;
  if (g.size() < 2 * range + 1) return out;
  for (std::size_t t = range; t + range < g.size(); ++t) {
    bool peak = true;
    for (std::size_t d = 1; d <= range && peak; ++d) peak = g[t] > g[t - d] && g[t] > g[t + d];
    if (peak) out.push_back(t);
  }
  return out;
}

/// Reconstruction error of every frame: frame t is masked at the middle of the
/// window starting at t − ⌊T/2⌋ and E[t] = ‖h'_t − h_t‖². Frames too close to
/// either end for a full window copy the nearest computed value.
inline std::vector<double> error_trajectory(const FrameFeatureSequence& video, const CosegModel& model,
                                            std::size_t max_windows_per_pass = 256) {
  const std::size_t window = model.window();
  const std::size_t n = video.num_frames();
  if (n < window) {
    throw DataError("error trajectory: video " + video.video_id + " has " + std::to_string(n) +
                    " frames, window needs " + std::to_string(window));
  }
  NoGradGuard no_grad;
  const Tensor h = encode_query(video.features, model.encoder).value();
  const std::size_t half = window / 2;
  const std::size_t first = half, last = n - 1 - (window - 1 - half);

  std::vector<double> e(n, 0.0);
  for (std::size_t c0 = first; c0 <= last; c0 += max_windows_per_pass) {
    const std::size_t c1 = std::min(last + 1, c0 + max_windows_per_pass);
    const std::size_t count = c1 - c0;
    std::vector<std::size_t> rows;
    rows.reserve(count * window);
    for (std::size_t c = c0; c < c1; ++c)
      for (std::size_t t = 0; t < window; ++t) rows.push_back(c - half + t);
    const Tensor stacked = take_rows(h, rows);
    const MaskSets masks(count, std::vector<std::size_t>{half});
    const Tensor recon =
        reconstruct(constant(stacked), masks, model.reconstructor, model.positions).value();
    for (std::size_t w = 0; w < count; ++w)
      e[c0 + w] = squared_distance(recon.row(w * window + half), h.row(c0 + w));
  }
  for (std::size_t t = 0; t < first; ++t) e[t] = e[first];
  for (std::size_t t = last + 1; t < n; ++t) e[t] = e[last];
  return e;
}

/// Smoothing, gradient and extrema picking on a given error trajectory.
inline Detection detect_from_trajectory(std::vector<double> error, const std::string& video_id,
                                        const DetectorConfig& cfg) {
  cfg.validate();
  Detection d;
  d.boundaries.video_id = video_id;
  d.boundaries.num_frames = error.size();
  d.trace.error = std::move(error);
  d.trace.smoothed = fir_smooth(d.trace.error, cfg.fir_half_width);
  if (d.trace.smoothed.size() >= 2) d.trace.gradient = gradient(d.trace.smoothed);
  if (d.trace.error.size() < std::max<std::size_t>(cfg.min_trajectory_len, 2)) return d;
  d.boundaries.frames = relative_extrema(d.trace.gradient, cfg.extrema_range);
  for (auto t : d.boundaries.frames) d.scores.push_back(d.trace.gradient[t]);
  return d;
}

inline Detection detect_boundaries(const FrameFeatureSequence& video, const CosegModel& model,
                                   const DetectorConfig& cfg) {
  if (cfg.window != model.window()) {
    throw ConfigError("detector: window " + std::to_string(cfg.window) +
                      " differs from the trained model's window " + std::to_string(model.window()));
  }
  return detect_from_trajectory(error_trajectory(video, model), video.video_id, cfg);
}

}  // namespace coseg
