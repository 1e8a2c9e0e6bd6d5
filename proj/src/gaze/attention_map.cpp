#include "gazeracer/gaze/attention_map.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "gazeracer/util/io.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer {

double AttentionMap::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

Eigen::Vector2i AttentionMap::argmax() const {
  const auto it = std::max_element(values.begin(), values.end());
  const auto idx = static_cast<int>(it - values.begin());
  return {idx % width, idx / width};
}

void AttentionMap::normalize() {
  const double s = sum();
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw std::invalid_argument("attention map: cannot normalize a map with sum " +
                                std::to_string(s));
  }
  for (double& v : values) v /= s;
}

FixationWindow scale_window(const FixationWindow& win, int from_w, int from_h, int to_w,
                            int to_h) {
  const double rx = static_cast<double>(to_w) / from_w;
  const double ry = static_cast<double>(to_h) / from_h;
  FixationWindow out;
  out.variance = {win.variance.x() * rx * rx, win.variance.y() * ry * ry};
  for (const auto& f : win.fixations) {
    out.fixations.emplace_back((f.x() + 0.5) * rx - 0.5, (f.y() + 0.5) * ry - 0.5);
  }
  return out;
}

FixationWindow fixation_window(std::span<const Eigen::Vector2d> fixations, std::size_t t,
                               const Eigen::Vector2d& variance) {
  if (t >= fixations.size()) throw std::out_of_range("fixation_window: index out of range");
  FixationWindow win;
  win.variance = variance;
  const std::size_t lo = t >= FixationWindow::kHalfWidth ? t - FixationWindow::kHalfWidth : 0;
  const std::size_t hi = std::min(fixations.size() - 1, t + FixationWindow::kHalfWidth);
  for (std::size_t i = lo; i <= hi; ++i) win.fixations.push_back(fixations[i]);
  return win;
}

AttentionMap build_attention_map(const FixationWindow& win, int width, int height) {
  if (win.fixations.empty()) throw std::invalid_argument("build_attention_map: empty window");
  if (static_cast<int>(win.fixations.size()) > FixationWindow::kMaxSize) {
    throw std::invalid_argument("build_attention_map: window larger than 25 fixations");
  }
  if (!(win.variance.x() > 0.0 && win.variance.y() > 0.0)) {
    throw std::invalid_argument("build_attention_map: variance must be positive");
  }
  if (width <= 0 || height <= 0) throw std::invalid_argument("build_attention_map: bad size");

  // max_i N(x; f_i, S) = N0 * exp(-0.5 * min_i m_i(x)) for a shared S, so the
  // normalized map only needs the smallest Mahalanobis distance per pixel.
  AttentionMap map(width, height);
  const double ivx = 1.0 / win.variance.x();
  const double ivy = 1.0 / win.variance.y();
  double global_min = std::numeric_limits<double>::infinity();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double m = std::numeric_limits<double>::infinity();
      for (const auto& f : win.fixations) {
        const double dx = x - f.x();
        const double dy = y - f.y();
        m = std::min(m, dx * dx * ivx + dy * dy * ivy);
      }
      map.at(x, y) = m;
      global_min = std::min(global_min, m);
    }
  }
  for (double& v : map.values) v = std::exp(-0.5 * (v - global_min));
  map.normalize();
  return map;
}

AttentionMap resample_area(const AttentionMap& map, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("resample_area: bad size");
  AttentionMap out(width, height);
  const double sx = static_cast<double>(map.width) / width;
  const double sy = static_cast<double>(map.height) / height;
  for (int oy = 0; oy < height; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < width; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0;
      for (int iy = static_cast<int>(std::floor(y0)); iy < std::min(map.height, static_cast<int>(std::ceil(y1))); ++iy) {
        const double wy = std::min(y1, iy + 1.0) - std::max(y0, static_cast<double>(iy));
        if (wy <= 0.0) continue;
        for (int ix = static_cast<int>(std::floor(x0)); ix < std::min(map.width, static_cast<int>(std::ceil(x1))); ++ix) {
          const double wx = std::min(x1, ix + 1.0) - std::max(x0, static_cast<double>(ix));
          if (wx <= 0.0) continue;
          acc += wx * wy * map.at(ix, iy);
        }
      }
      out.at(ox, oy) = acc;
    }
  }
  out.normalize();
  return out;
}

namespace {

void require_same_shape(const AttentionMap& a, const AttentionMap& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.values.size() != b.values.size()) {
    throw std::invalid_argument(std::string(what) + ": resolution mismatch (" +
                                std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  }
}

}  // namespace

double kl_divergence(const AttentionMap& a, const AttentionMap& b) {
  require_same_shape(a, b, "kl_divergence");
  double kl = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double p = a.values[i];
    if (p <= 0.0) continue;
    const double q = b.values[i];
    if (q <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

std::optional<double> pearson_cc(const AttentionMap& a, const AttentionMap& b) {
  require_same_shape(a, b, "pearson_cc");
  const double n = static_cast<double>(a.values.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    ma += a.values[i];
    mb += b.values[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double da = a.values[i] - ma;
    const double db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  // Variance below rounding noise of the values counts as constant.
  double qa = 0.0, qb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    qa += a.values[i] * a.values[i];
    qb += b.values[i] * b.values[i];
  }
  if (!(saa > 1e-24 * qa) || !(sbb > 1e-24 * qb)) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

AttentionMap baseline_mean_map(std::span<const AttentionMap> maps) {
  if (maps.empty()) throw std::invalid_argument("baseline_mean_map: no maps");
  AttentionMap mean(maps.front().width, maps.front().height);
  for (const auto& m : maps) {
    require_same_shape(mean, m, "baseline_mean_map");
    for (std::size_t i = 0; i < m.values.size(); ++i) mean.values[i] += m.values[i];
  }
  mean.normalize();
  return mean;
}

std::vector<std::size_t> baseline_shuffle(std::size_t count, std::span<const std::size_t> lap_starts,
                                          std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("baseline_shuffle: empty input");
  std::vector<std::size_t> starts(lap_starts.begin(), lap_starts.end());
  if (starts.empty() || starts.front() != 0) starts.insert(starts.begin(), 0);
  if (!std::is_sorted(starts.begin(), starts.end()) || starts.back() >= count) {
    throw std::invalid_argument("baseline_shuffle: lap starts must be ascending and < count");
  }
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {0x5348u}));
  for (std::size_t l = 0; l < starts.size(); ++l) {
    const std::size_t lo = starts[l];
    const std::size_t hi = l + 1 < starts.size() ? starts[l + 1] : count;
    const std::size_t m = hi - lo;
    if (m < 2) continue;
    // Rejection sampling of a uniform derangement; accepts with probability ~1/e.
    std::vector<std::size_t> local(m);
    while (true) {
      std::iota(local.begin(), local.end(), 0);
      for (std::size_t i = m - 1; i > 0; --i) {
        std::swap(local[i], local[uniform_index(rng, i + 1)]);
      }
      bool fixed = false;
      for (std::size_t i = 0; i < m && !fixed; ++i) fixed = local[i] == i;
      if (!fixed) break;
    }
    for (std::size_t i = 0; i < m; ++i) perm[lo + i] = lo + local[i];
  }
  return perm;
}

namespace {

// Gates closer than this along the optical axis count as behind the camera;
// the gaze moves on to the following gate just before passage.
constexpr double kGazeNearPlane = 1.0;

}  // namespace

SyntheticGaze synth_gaze_oracle(const QuadState& s, const Track& track, int next_gate,
                                const CameraModel& cam) {
  if (track.gates.empty()) throw std::invalid_argument("synth_gaze_oracle: track has no gates");
  if (next_gate < 0) throw std::invalid_argument("synth_gaze_oracle: negative gate ordinal");
  const int n = static_cast<int>(track.gates.size());
  SyntheticGaze out;
  out.record.ts = s.t;
  Eigen::Vector2d px(cam.principal_x(), cam.principal_y());
  for (int k = 0; k < n; ++k) {
    const int g = (next_gate + k) % n;
    const Projection p = project_point(track.gates[g].center, s, cam);
    if (p.in_front && p.depth >= kGazeNearPlane) {
      px = p.pixel;
      out.gate = g;
      break;
    }
  }
  const double xmax = cam.width - 1.0;
  const double ymax = cam.height - 1.0;
  out.clamped = px.x() < 0.0 || px.y() < 0.0 || px.x() > xmax || px.y() > ymax;
  out.record.gaze = {std::clamp(px.x(), 0.0, xmax), std::clamp(px.y(), 0.0, ymax)};
  return out;
}

std::vector<GazeRecord> average_fixations(std::span<const GazeRecord> raw) {
  std::map<std::int64_t, std::pair<GazeRecord, int>> acc;
  for (const auto& r : raw) {
    auto [it, inserted] = acc.try_emplace(r.frame, r, 1);
    if (!inserted) {
      it->second.first.gaze += r.gaze;
      it->second.second += 1;
    }
  }
  std::vector<GazeRecord> out;
  out.reserve(acc.size());
  for (auto& [frame, entry] : acc) {
    GazeRecord rec = entry.first;
    rec.gaze /= entry.second;
    out.push_back(rec);
  }
  return out;
}

namespace {

MetricSummary summarize(std::span<const AttentionMap> truth, auto&& pred_at) {
  MetricSummary s;
  s.frames = truth.size();
  std::size_t finite = 0, defined = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const AttentionMap& p = pred_at(i);
    const double kl = kl_divergence(truth[i], p);
    if (std::isfinite(kl)) {
      s.kl_mean += kl;
      ++finite;
    } else {
      ++s.kl_infinite;
    }
    if (const auto cc = pearson_cc(truth[i], p)) {
      s.cc_mean += *cc;
      ++defined;
    } else {
      ++s.cc_undefined;
    }
  }
  s.kl_mean = finite ? s.kl_mean / finite : std::numeric_limits<double>::infinity();
  s.cc_mean = defined ? s.cc_mean / defined : std::numeric_limits<double>::quiet_NaN();
  return s;
}

}  // namespace

MetricSummary summarize_metrics(std::span<const AttentionMap> truth,
                                std::span<const AttentionMap> pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("summarize_metrics: size mismatch");
  return summarize(truth, [&](std::size_t i) -> const AttentionMap& { return pred[i]; });
}

MetricSummary summarize_shuffled(std::span<const AttentionMap> truth,
                                 std::span<const std::size_t> perm) {
  if (truth.size() != perm.size()) throw std::invalid_argument("summarize_shuffled: size mismatch");
  return summarize(truth, [&](std::size_t i) -> const AttentionMap& { return truth[perm[i]]; });
}

std::string attention_to_bytes(const AttentionMap& map) {
  io::ByteWriter w;
  w.magic("ATTM");
  w.u32(static_cast<std::uint32_t>(map.width));
  w.u32(static_cast<std::uint32_t>(map.height));
  for (double v : map.values) w.f32(static_cast<float>(v));
  return w.take();
}

AttentionMap attention_from_bytes(const std::string& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("ATTM", "attention map");
  const int w = static_cast<int>(r.u32());
  const int h = static_cast<int>(r.u32());
  AttentionMap map(w, h);
  for (double& v : map.values) v = r.f32();
  return map;
}

std::string gaze_to_csv(std::span<const GazeRecord> records) {
  std::ostringstream os;
  os << "ts,frame,gaze_x,gaze_y\n" << std::setprecision(17);
  for (const auto& r : records) {
    os << r.ts << ',' << r.frame << ',' << r.gaze.x() << ',' << r.gaze.y() << '\n';
  }
  return os.str();
}

std::vector<GazeRecord> gaze_from_csv(const std::string& text, const std::string& mapping_json) {
  std::map<std::string, std::string> names{
      {"ts", "ts"}, {"frame", "frame"}, {"gaze_x", "gaze_x"}, {"gaze_y", "gaze_y"}};
  if (!mapping_json.empty()) {
    const auto j = nlohmann::json::parse(mapping_json);
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!names.count(it.key())) {
        throw std::invalid_argument("gaze column mapping: unknown key '" + it.key() + "'");
      }
      names[it.key()] = it.value().get<std::string>();
    }
  }
  const io::CsvTable table = io::parse_csv(text);
  auto col = [&](const std::string& key) {
    const int c = table.column(names[key]);
    if (c < 0) throw std::invalid_argument("gaze CSV: missing column '" + names[key] + "'");
    return c;
  };
  const int cts = col("ts"), cf = col("frame"), cx = col("gaze_x"), cy = col("gaze_y");
  std::vector<GazeRecord> out;
  for (const auto& row : table.rows) {
    if (row.size() < table.header.size()) throw std::invalid_argument("gaze CSV: short row");
    GazeRecord r;
    r.ts = io::to_double(row[cts], "ts");
    r.frame = static_cast<std::int64_t>(io::to_double(row[cf], "frame"));
    r.gaze = {io::to_double(row[cx], "gaze_x"), io::to_double(row[cy], "gaze_y")};
    out.push_back(r);
  }
  return out;
}

}  // namespace gazeracer
