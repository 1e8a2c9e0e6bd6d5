#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gazeracer/render/camera.hpp"
#include "gazeracer/sim/track.hpp"

namespace gazeracer {

struct GazeRecord {
  double ts = 0.0;
  std::int64_t frame = 0;
  Eigen::Vector2d gaze = Eigen::Vector2d::Zero();  // pixels, source resolution
};

/// Fixations for frames t-12 .. t+12 (fewer at sequence boundaries) and a
/// diagonal covariance in pixels^2 at the window's resolution.
struct FixationWindow {
  std::vector<Eigen::Vector2d> fixations;
  Eigen::Vector2d variance{200.0, 200.0};

  static constexpr int kHalfWidth = 12;
  static constexpr int kMaxSize = 2 * kHalfWidth + 1;
};

/// Probability grid over pixels, row-major, index y * width + x.
struct AttentionMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  AttentionMap() = default;
  AttentionMap(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0) {}
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double sum() const;
  /// Pixel with the largest value (first in row-major order on ties).
  Eigen::Vector2i argmax() const;
  void normalize();
};

/// Rescales fixation coordinates (pixel centers) and variance (quadratically)
/// between resolutions.
FixationWindow scale_window(const FixationWindow& win, int from_w, int from_h, int to_w, int to_h);

/// Window around index t over a per-frame fixation sequence.
FixationWindow fixation_window(std::span<const Eigen::Vector2d> fixations, std::size_t t,
                               const Eigen::Vector2d& variance);

/// Per-pixel max over the Gaussians at each fixation, normalized to sum 1.
/// Throws std::invalid_argument on an empty window.
AttentionMap build_attention_map(const FixationWindow& win, int width, int height);

/// Box-filter resampling with exact fractional pixel overlaps, renormalized.
AttentionMap resample_area(const AttentionMap& map, int width, int height);

/// Natural-log KL(a || b); +inf when b is zero where a is positive.
double kl_divergence(const AttentionMap& a, const AttentionMap& b);
/// Pearson correlation over pixels; nullopt when either map is constant.
std::optional<double> pearson_cc(const AttentionMap& a, const AttentionMap& b);

AttentionMap baseline_mean_map(std::span<const AttentionMap> maps);

/// Permutation pairing test item i with item perm[i]. Items only move within
/// their lap (lap_starts are the first indices of each lap, ascending); laps
/// with two or more items get a uniformly random derangement.
std::vector<std::size_t> baseline_shuffle(std::size_t count, std::span<const std::size_t> lap_starts,
                                          std::uint64_t seed);

struct SyntheticGaze {
  GazeRecord record;
  int gate = -1;          // gate the gaze is on, -1 if none in front
  bool clamped = false;   // projection fell outside the image
};

/// Looks at the projection of the next gate's center, falling back to later
/// gates while the target is behind the camera (closer than 1 m along the
/// optical axis).
SyntheticGaze synth_gaze_oracle(const QuadState& s, const Track& track, int next_gate,
                                const CameraModel& cam);

/// Per-frame average of raw gaze samples, ordered by frame id.
std::vector<GazeRecord> average_fixations(std::span<const GazeRecord> raw);

struct MetricSummary {
  std::size_t frames = 0;
  double kl_mean = 0.0;          // over finite values
  std::size_t kl_infinite = 0;
  double cc_mean = 0.0;          // over defined values
  std::size_t cc_undefined = 0;
};

/// Per-frame metrics averaged over frames.
MetricSummary summarize_metrics(std::span<const AttentionMap> truth,
                                std::span<const AttentionMap> pred);
/// Shuffled baseline: prediction for frame i is truth[perm[i]].
MetricSummary summarize_shuffled(std::span<const AttentionMap> truth,
                                 std::span<const std::size_t> perm);

// ATTM: magic, u32 width, u32 height, float32 values row-major.
std::string attention_to_bytes(const AttentionMap& map);
AttentionMap attention_from_bytes(const std::string& bytes);

// Gaze CSV: ts,frame,gaze_x,gaze_y.
std::string gaze_to_csv(std::span<const GazeRecord> records);
/// The mapping, if non-empty, is JSON {"ts": col, "frame": col, "gaze_x": col,
/// "gaze_y": col} naming the source file's columns.
std::vector<GazeRecord> gaze_from_csv(const std::string& text, const std::string& mapping_json = {});

}  // namespace gazeracer
