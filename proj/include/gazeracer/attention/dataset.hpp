#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gazeracer/attention/net.hpp"
#include "gazeracer/mpc/mpc.hpp"
#include "gazeracer/sim/rollout.hpp"

namespace gazeracer::attention {

struct DataGenConfig {
  int frames = 2000;  // sampled evenly over all expert ticks
  int width = 128;
  int height = 96;
  int gaze_width = 800;  // resolution of the synthetic gaze records
  int gaze_height = 600;
  double gaze_variance = 200.0;  // px^2 at the gaze resolution
  CameraModel camera;            // hfov and uptilt; size is overridden

  void validate() const;
};

struct GeneratedData {
  AttentionDataset dataset;
  /// Raw synthetic gaze at the gaze resolution, one record per control tick;
  /// frame ids are global tick indices.
  std::vector<GazeRecord> gaze;
  /// Global tick index of every dataset item.
  std::vector<std::int64_t> tick;
};

/// Flies every reference once with the MPC expert (one lap per reference),
/// records the synthetic gaze at every control tick, and renders frames and
/// builds attention maps at the sampled ticks. Throws std::runtime_error if
/// the expert fails a lap.
GeneratedData generate_attention_data(const Track& track,
                                      const std::vector<ReferenceTrajectory>& references,
                                      const DataGenConfig& cfg, const MpcConfig& mpc,
                                      const RateConfig& rates, std::uint64_t seed);

/// Directory layout: frames.grfp, attention/NNNNNN.attm, manifest.csv
/// (frame_file,attention_file with frame_file "frames.grfp#index"), laps.csv
/// (index,lap,tick) and gaze.csv.
void save_generated(const GeneratedData& data, const std::string& dir);
AttentionDataset load_dataset(const std::string& dir);

}  // namespace gazeracer::attention
