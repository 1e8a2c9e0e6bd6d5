#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gazeracer/render/camera.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer::tracks {

/// Row-major single-channel float image.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  /// Bilinear sample with edge clamping.
  float sample(double x, double y) const;
};

GrayImage gray_image(const Frame& frame);

struct HarrisConfig {
  int max_corners = 150;
  double k = 0.04;
  double quality = 0.01;      // fraction of the strongest response
  double min_distance = 8.0;  // px
};

struct Corner {
  Eigen::Vector2d p;
  double response = 0.0;
};

/// 3x3 Sobel gradients, 3x3 box structure tensor, R = det - k tr^2.
GrayImage harris_response(const GrayImage& img, double k);

/// Corners with R >= quality * max R that are 3x3 local maxima, strongest
/// first, greedily suppressed within min_distance (of each other and of
/// `occupied`).
std::vector<Corner> harris_corners(const GrayImage& img, const HarrisConfig& cfg,
                                   const std::vector<Eigen::Vector2d>& occupied = {});

struct LkConfig {
  int levels = 3;  // pyramid levels including the full resolution
  int window = 7;  // odd side length
  int max_iterations = 30;
  double epsilon = 0.01;         // px, update size counting as converged
  double min_eigenvalue = 1.0;   // per window pixel, gray levels^2
  double max_residual = 40.0;    // mean absolute gray difference
};

struct LkResult {
  std::vector<Eigen::Vector2d> points;  // tracked positions in `next`
  std::vector<bool> tracked;
};

/// Pyramidal iterative Lucas-Kanade. A point fails when the window's normal
/// matrix is near singular, it does not converge, leaves the image, or the
/// final window residual is too large.
LkResult lk_track(const GrayImage& prev, const GrayImage& next,
                  const std::vector<Eigen::Vector2d>& points, const LkConfig& cfg = {});

struct EpipolarResult {
  std::vector<bool> inlier;
  bool low_confidence = false;  // fewer than 8 pairs, nothing rejected
  Eigen::Matrix3d fundamental = Eigen::Matrix3d::Zero();
};

/// Normalized 8-point fundamental matrix with rank-2 projection.
Eigen::Matrix3d fundamental_8point(const std::vector<Eigen::Vector2d>& a,
                                   const std::vector<Eigen::Vector2d>& b);

/// sqrt(d(b, F a)^2 + d(a, F^T b)^2) in pixels.
double symmetric_epipolar_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                                   const Eigen::Vector2d& b);

/// RANSAC over 8-point samples; inliers lie within `threshold` px
/// (symmetric epipolar distance) of the refit model.
EpipolarResult epipolar_reject(const std::vector<Eigen::Vector2d>& a,
                               const std::vector<Eigen::Vector2d>& b, std::uint64_t seed,
                               double threshold = 1.0, int iterations = 200);

/// One row of the policy's track input.
struct FeatureTrack {
  double x = 0.0, y = 0.0;    // normalized image coordinates in [-1, 1]
  double vx = 0.0, vy = 0.0;  // normalized coordinates per second
  int age = 1;                // frames tracked, capped at 255
};

struct FeatureTrackSet {
  static constexpr int kCount = 40;
  static constexpr int kDims = 5;
  std::array<FeatureTrack, kCount> tracks{};
  bool empty = false;  // no active tracks; entries are zero with age 1

  /// Row-major kCount x kDims values (x, y, vx, vy, age).
  std::vector<float> flatten() const;
};

/// Exactly 40 picks: a seeded sample without replacement when there are more
/// tracks, the tracks themselves when there are exactly 40, and a sample with
/// replacement when there are fewer. Throws on an empty input.
std::vector<std::size_t> sample_indices(std::size_t active, Rng& rng);

struct TrackerConfig {
  HarrisConfig harris;
  LkConfig lk;
  int max_tracks = 150;
  int redetect_every = 5;   // frames
  int redetect_below = 60;  // active tracks
  double ransac_threshold = 1.0;

  /// Harris min_distance is specified at 128x96 and scales with the width.
  static TrackerConfig for_resolution(int width);
};

/// Stateful per-rollout tracker: LK from the previous frame, epipolar
/// outlier rejection, redetection that keeps existing tracks, then sampling
/// of exactly 40 tracks.
class FeatureTracker {
 public:
  FeatureTracker(TrackerConfig cfg, std::uint64_t seed);

  FeatureTrackSet step(const Frame& frame, double dt);
  FeatureTrackSet step(const GrayImage& gray, double dt);

  std::size_t active() const { return tracks_.size(); }
  int frames() const { return frame_count_; }
  /// Lifetimes (in frames) of tracks that have ended so far.
  const std::vector<int>& finished_lifetimes() const { return finished_; }
  void reset();

 private:
  struct Track {
    Eigen::Vector2d p;
    Eigen::Vector2d v = Eigen::Vector2d::Zero();  // px per second
    int age = 1;
  };
  void detect(const GrayImage& gray);

  TrackerConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  GrayImage prev_;
  std::vector<Track> tracks_;
  std::vector<int> finished_;
  int frame_count_ = 0;
};

// CSV: tick,slot,x,y,vx,vy,age
std::string track_sets_to_csv(const std::vector<FeatureTrackSet>& sets);

}  // namespace gazeracer::tracks
