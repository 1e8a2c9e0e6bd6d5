#include "gazeracer/sim/track.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gazeracer {

namespace {

using json = nlohmann::json;

json vec_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d json_vec(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw std::invalid_argument(std::string("track: '") + what + "' must be a 3-element array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Eigen::Quaterniond yaw_quat(double yaw) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()));
}

double yaw_of(const Eigen::Quaterniond& q) {
  const Eigen::Vector3d x = q * Eigen::Vector3d::UnitX();
  return std::atan2(x.y(), x.x());
}

Track finish_layout(std::string name, const std::vector<Eigen::Vector3d>& centers) {
  Track track;
  track.name = std::move(name);
  const int n = static_cast<int>(centers.size());
  for (int k = 0; k < n; ++k) {
    Eigen::Vector3d dir = centers[(k + 1) % n] - centers[(k + n - 1) % n];
    dir.z() = 0.0;
    Gate g;
    g.center = centers[k];
    g.normal = dir.normalized();
    g.up = Eigen::Vector3d::UnitZ();
    g.index = k;
    track.gates.push_back(g);
  }
  const double u0 = n - 0.5;
  const Eigen::Vector3d p0 = loop_point(centers, u0);
  Eigen::Vector3d heading = loop_point(centers, u0 + 1e-3) - loop_point(centers, u0 - 1e-3);
  heading.z() = 0.0;
  track.start_pose.p = p0;
  track.start_pose.q = yaw_quat(std::atan2(heading.y(), heading.x()));
  track.validate();
  return track;
}

}  // namespace

void Gate::validate() const {
  if (!(inner_w > 0 && inner_h > 0 && frame_thickness >= 0)) {
    throw std::invalid_argument("gate " + std::to_string(index) +
                                ": inner_w, inner_h must be positive");
  }
  if (std::abs(normal.norm() - 1.0) > 1e-6 || std::abs(up.norm() - 1.0) > 1e-6 ||
      std::abs(normal.dot(up)) > 1e-6) {
    throw std::invalid_argument("gate " + std::to_string(index) +
                                ": normal and up must be orthogonal unit vectors");
  }
}

bool Bounds::contains(const Eigen::Vector3d& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

void Track::validate() const {
  if (gates.empty()) throw std::invalid_argument("track '" + name + "' has no gates");
  for (const auto& g : gates) g.validate();
  if (!bounds.contains(start_pose.p)) {
    throw std::invalid_argument("track '" + name + "': start pose outside bounds");
  }
}

GateCrossing check_gate_pass(const Eigen::Vector3d& p_prev, const Eigen::Vector3d& p_next,
                             const Gate& gate) {
  const double d0 = gate.normal.dot(p_prev - gate.center);
  const double d1 = gate.normal.dot(p_next - gate.center);
  const bool forward = d0 < 0.0 && d1 >= 0.0;
  const bool backward = d0 >= 0.0 && d1 < 0.0;
  if (!forward && !backward) return GateCrossing::None;

  const double s = d0 / (d0 - d1);
  const Eigen::Vector3d hit = p_prev + s * (p_next - p_prev) - gate.center;
  const double lr = std::abs(hit.dot(gate.right()));
  const double lu = std::abs(hit.dot(gate.up));
  const double hw = 0.5 * gate.inner_w;
  const double hh = 0.5 * gate.inner_h;
  if (lr <= hw && lu <= hh) return forward ? GateCrossing::Pass : GateCrossing::None;
  if (lr <= hw + gate.frame_thickness && lu <= hh + gate.frame_thickness) {
    return GateCrossing::FrameHit;
  }
  return GateCrossing::None;
}

GateCrossing check_gate_pass(const QuadState& prev, const QuadState& next, const Gate& gate) {
  return check_gate_pass(prev.p, next.p, gate);
}

std::string_view to_string(TerminationCause cause) {
  switch (cause) {
    case TerminationCause::None: return "running";
    case TerminationCause::Completed: return "completed";
    case TerminationCause::OutOfBounds: return "out_of_bounds";
    case TerminationCause::Ground: return "ground";
    case TerminationCause::GateFrame: return "gate_frame";
    case TerminationCause::Timeout: return "timeout";
    case TerminationCause::ControllerFailure: return "controller_failure";
  }
  return "unknown";
}

Termination check_termination(const QuadState& s, const Track& track, int next_gate,
                              bool frame_hit_this_tick) {
  if (s.p.z() <= track.bounds.floor()) return {RunStatus::Crashed, TerminationCause::Ground};
  if (!track.bounds.contains(s.p)) return {RunStatus::Crashed, TerminationCause::OutOfBounds};
  if (frame_hit_this_tick) return {RunStatus::Crashed, TerminationCause::GateFrame};
  if (next_gate >= static_cast<int>(track.gates.size())) {
    return {RunStatus::Completed, TerminationCause::Completed};
  }
  return {};
}

Eigen::Vector3d loop_point(const std::vector<Eigen::Vector3d>& pts, double u) {
  const int n = static_cast<int>(pts.size());
  double base = std::floor(u);
  const double s = u - base;
  int i = static_cast<int>(base) % n;
  if (i < 0) i += n;
  const Eigen::Vector3d& p0 = pts[(i + n - 1) % n];
  const Eigen::Vector3d& p1 = pts[i];
  const Eigen::Vector3d& p2 = pts[(i + 1) % n];
  const Eigen::Vector3d& p3 = pts[(i + 2) % n];
  const double s2 = s * s, s3 = s2 * s;
  return 0.5 * (2.0 * p1 + (p2 - p0) * s + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s2 +
                (3.0 * p1 - p0 - 3.0 * p2 + p3) * s3);
}

Track generate_track(std::string_view name) {
  using std::numbers::pi;
  std::vector<Eigen::Vector3d> centers;
  if (name == "figure8") {
    // Lemniscate of Gerono, 24 m x 12 m footprint; five gates per lobe,
    // none at the crossing.
    const double a = 12.0, b = 12.0;
    const double ts[] = {-1.2, -0.6, 0.0, 0.6, 1.2, pi - 1.2, pi - 0.6, pi, pi + 0.6, pi + 1.2};
    const double zs[] = {2.0, 2.5, 3.0, 2.5, 2.0, 2.0, 2.5, 3.0, 2.5, 2.0};
    for (int k = 0; k < 10; ++k) {
      const double t = ts[k];
      centers.emplace_back(a * std::cos(t), b * std::sin(t) * std::cos(t), zs[k]);
    }
    return finish_layout("figure8", centers);
  }
  if (name == "oval") {
    const double a = 10.0, b = 6.0;
    for (int k = 0; k < 6; ++k) {
      const double t = pi / 6.0 + k * pi / 3.0;
      centers.emplace_back(a * std::cos(t), b * std::sin(t), 2.5);
    }
    return finish_layout("oval", centers);
  }
  throw std::invalid_argument("unknown track '" + std::string(name) +
                              "' (expected figure8 or oval)");
}

std::string track_to_json(const Track& track) {
  json j;
  j["name"] = track.name;
  j["bounds"] = {{"min", vec_json(track.bounds.min)}, {"max", vec_json(track.bounds.max)}};
  j["start"] = {{"position", vec_json(track.start_pose.p)}, {"yaw", yaw_of(track.start_pose.q)}};
  json gates = json::array();
  for (const auto& g : track.gates) {
    gates.push_back({{"center", vec_json(g.center)},
                     {"normal", vec_json(g.normal)},
                     {"up", vec_json(g.up)},
                     {"inner_w", g.inner_w},
                     {"inner_h", g.inner_h},
                     {"frame_thickness", g.frame_thickness}});
  }
  j["gates"] = gates;
  return j.dump(2) + "\n";
}

namespace {

// Exact round trips for vectors that are already unit length.
Eigen::Vector3d unit_or_keep(const Eigen::Vector3d& v) {
  return std::abs(v.norm() - 1.0) < 1e-12 ? v : v.normalized();
}

}  // namespace

Track track_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("track: invalid JSON: ") + e.what());
  }
  Track track;
  track.name = j.value("name", std::string("custom"));
  if (j.contains("bounds")) {
    track.bounds.min = json_vec(j.at("bounds").at("min"), "bounds.min");
    track.bounds.max = json_vec(j.at("bounds").at("max"), "bounds.max");
  }
  if (!j.contains("gates") || !j["gates"].is_array()) {
    throw std::invalid_argument("track: missing 'gates' array");
  }
  int index = 0;
  for (const auto& jg : j["gates"]) {
    Gate g;
    g.center = json_vec(jg.at("center"), "center");
    g.normal = unit_or_keep(json_vec(jg.at("normal"), "normal"));
    g.up = unit_or_keep(json_vec(jg.value("up", json::array({0.0, 0.0, 1.0})), "up"));
    g.inner_w = jg.value("inner_w", g.inner_w);
    g.inner_h = jg.value("inner_h", g.inner_h);
    g.frame_thickness = jg.value("frame_thickness", g.frame_thickness);
    g.index = index++;
    track.gates.push_back(g);
  }
  if (j.contains("start")) {
    track.start_pose.p = json_vec(j["start"].at("position"), "start.position");
    track.start_pose.q = yaw_quat(j["start"].value("yaw", 0.0));
  } else if (!track.gates.empty()) {
    std::vector<Eigen::Vector3d> centers;
    for (const auto& g : track.gates) centers.push_back(g.center);
    track.start_pose.p = loop_point(centers, static_cast<double>(centers.size()) - 0.5);
  }
  track.validate();
  return track;
}

Track load_track(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open track file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return track_from_json(ss.str());
}

void save_track(const Track& track, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write track file: " + path);
  out << track_to_json(track);
}

}  // namespace gazeracer
