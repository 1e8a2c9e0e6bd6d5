#include "gazeracer/attention/dataset.hpp"

#include <cstdio>
#include <map>
#include <stdexcept>

#include "gazeracer/util/io.hpp"

namespace gazeracer::attention {

void DataGenConfig::validate() const {
  if (frames < 1) throw std::invalid_argument("gen-data: frames must be >= 1");
  if (width < 16 || height < 16 || gaze_width < 16 || gaze_height < 16) {
    throw std::invalid_argument("gen-data: resolution below 16x16");
  }
  if (!(gaze_variance > 0.0)) throw std::invalid_argument("gen-data: gaze variance must be positive");
}

namespace {

struct Lap {
  std::vector<QuadState> states;  // one per control tick
  std::vector<int> next_gate;
  std::vector<Eigen::Vector2d> gaze;
};

Lap fly_lap(const Track& track, const ReferenceTrajectory& ref, const MpcConfig& mpc,
            const RateConfig& rates, const CameraModel& gaze_cam, std::uint64_t seed, int index) {
  MpcExpert expert(mpc, rates.params);
  const RolloutLog log = run_rollout(expert_controller(expert), track, ref, rates, seed);
  if (!log.completed()) {
    throw std::runtime_error("gen-data: expert failed reference " + std::to_string(index) + " (" +
                             std::string(to_string(log.termination.cause)) + ")");
  }
  Lap lap;
  int next = 0;
  for (const TickRecord& t : log.ticks) {
    lap.states.push_back(t.state);
    lap.next_gate.push_back(next);
    lap.gaze.push_back(synth_gaze_oracle(t.state, track, next, gaze_cam).record.gaze);
    for (const GateEvent& e : t.gate_events) {
      if (e.pass) next = e.gate + 1;
    }
  }
  return lap;
}

}  // namespace

GeneratedData generate_attention_data(const Track& track,
                                      const std::vector<ReferenceTrajectory>& references,
                                      const DataGenConfig& cfg, const MpcConfig& mpc,
                                      const RateConfig& rates, std::uint64_t seed) {
  cfg.validate();
  if (references.empty()) throw std::invalid_argument("gen-data: no references");
  CameraModel cam = cfg.camera;
  cam.width = cfg.width;
  cam.height = cfg.height;
  CameraModel gaze_cam = cfg.camera;
  gaze_cam.width = cfg.gaze_width;
  gaze_cam.height = cfg.gaze_height;

  std::vector<Lap> laps;
  std::size_t total = 0;
  for (std::size_t r = 0; r < references.size(); ++r) {
    laps.push_back(fly_lap(track, references[r], mpc, rates, gaze_cam, derive_seed(seed, {0x47454e, r}),
                           static_cast<int>(r)));
    total += laps.back().states.size();
  }
  const std::size_t count = std::min<std::size_t>(cfg.frames, total);

  GeneratedData out;
  const Eigen::Vector2d var(cfg.gaze_variance, cfg.gaze_variance);
  const double dt = 1.0 / rates.control_hz;
  std::size_t lap_begin = 0;
  std::size_t k = 0;
  for (std::size_t r = 0; r < laps.size(); ++r) {
    const Lap& lap = laps[r];
    for (std::size_t i = 0; i < lap.states.size(); ++i) {
      const auto tick = static_cast<std::int64_t>(lap_begin + i);
      out.gaze.push_back({lap.states[i].t, tick, lap.gaze[i]});
    }
    // Item k sits at global tick floor(k * total / count).
    for (; k < count; ++k) {
      const std::size_t g = k * total / count;
      if (g >= lap_begin + lap.states.size()) break;
      const std::size_t i = g - lap_begin;
      Frame f = render_frame(lap.states[i], track, cam);
      f.id = static_cast<std::int64_t>(g);
      f.timestamp = static_cast<double>(i) * dt;
      const FixationWindow win = scale_window(fixation_window(lap.gaze, i, var), cfg.gaze_width,
                                              cfg.gaze_height, cfg.width, cfg.height);
      out.dataset.frames.push_back(std::move(f));
      out.dataset.maps.push_back(build_attention_map(win, cfg.width, cfg.height));
      out.dataset.lap.push_back(static_cast<int>(r));
      out.tick.push_back(static_cast<std::int64_t>(g));
    }
    lap_begin += lap.states.size();
  }
  return out;
}

void save_generated(const GeneratedData& data, const std::string& dir) {
  data.dataset.validate();
  io::ensure_dir(dir);
  io::ensure_dir(dir + "/attention");
  io::write_file(dir + "/frames.grfp", pack_frames(data.dataset.frames));
  std::string manifest = "frame_file,attention_file\n";
  std::string laps = "index,lap,tick\n";
  char name[32];
  for (std::size_t i = 0; i < data.dataset.size(); ++i) {
    std::snprintf(name, sizeof name, "attention/%06zu.attm", i);
    io::write_file(dir + "/" + name, attention_to_bytes(data.dataset.maps[i]));
    manifest += "frames.grfp#" + std::to_string(i) + "," + name + "\n";
    laps += std::to_string(i) + "," + std::to_string(data.dataset.lap[i]) + "," +
            std::to_string(data.tick.at(i)) + "\n";
  }
  io::write_file(dir + "/manifest.csv", manifest);
  io::write_file(dir + "/laps.csv", laps);
  io::write_file(dir + "/gaze.csv", gaze_to_csv(data.gaze));
}

AttentionDataset load_dataset(const std::string& dir) {
  const io::CsvTable manifest = io::parse_csv(io::read_file(dir + "/manifest.csv"));
  const int fcol = manifest.column("frame_file"), acol = manifest.column("attention_file");
  if (fcol < 0 || acol < 0) throw std::invalid_argument("manifest: expected frame_file,attention_file");
  const io::CsvTable laps = io::parse_csv(io::read_file(dir + "/laps.csv"));
  const int lcol = laps.column("lap");
  if (lcol < 0 || laps.rows.size() != manifest.rows.size()) {
    throw std::invalid_argument("laps.csv: missing lap column or row count mismatch");
  }

  std::map<std::string, std::vector<Frame>> packs;
  AttentionDataset ds;
  for (std::size_t r = 0; r < manifest.rows.size(); ++r) {
    const std::string& ref = manifest.rows[r][fcol];
    const auto hash = ref.find('#');
    if (hash == std::string::npos) throw std::invalid_argument("manifest: frame_file needs '#index': " + ref);
    const std::string file = ref.substr(0, hash);
    const auto idx = static_cast<std::size_t>(io::to_int(ref.substr(hash + 1), "frame index"));
    auto it = packs.find(file);
    if (it == packs.end()) it = packs.emplace(file, unpack_frames(io::read_file(dir + "/" + file))).first;
    if (idx >= it->second.size()) throw std::invalid_argument("manifest: frame index out of range: " + ref);
    ds.frames.push_back(it->second[idx]);
    ds.maps.push_back(attention_from_bytes(io::read_file(dir + "/" + manifest.rows[r][acol])));
    ds.lap.push_back(static_cast<int>(io::to_int(laps.rows[r][lcol], "lap")));
  }
  ds.validate();
  return ds;
}

}  // namespace gazeracer::attention
