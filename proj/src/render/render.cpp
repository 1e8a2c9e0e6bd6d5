#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "gazeracer/render/camera.hpp"
#include "gazeracer/util/io.hpp"

namespace gazeracer {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kNear = 0.05;

struct CamVert {
  Eigen::Vector3d c;  // camera coords: x right, y down, z forward
};

struct Raster {
  Frame& frame;
  std::vector<double>& depth;
  double f, cx, cy;

  void triangle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                const Rgb& color) {
    const Eigen::Vector2d pa(cx + f * a.x() / a.z(), cy + f * a.y() / a.z());
    const Eigen::Vector2d pb(cx + f * b.x() / b.z(), cy + f * b.y() / b.z());
    const Eigen::Vector2d pc(cx + f * c.x() / c.z(), cy + f * c.y() / c.z());
    const double area = (pb - pa).x() * (pc - pa).y() - (pb - pa).y() * (pc - pa).x();
    if (std::abs(area) < 1e-12) return;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({pa.x(), pb.x(), pc.x()}))));
    const int x1 = std::min(frame.width - 1,
                            static_cast<int>(std::ceil(std::max({pa.x(), pb.x(), pc.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({pa.y(), pb.y(), pc.y()}))));
    const int y1 = std::min(frame.height - 1,
                            static_cast<int>(std::ceil(std::max({pa.y(), pb.y(), pc.y()}))));
    const double inv_area = 1.0 / area;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x, y);
        auto edge = [&](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
          return (v - u).x() * (p - u).y() - (v - u).y() * (p - u).x();
        };
        const double l0 = edge(pb, pc) * inv_area;
        const double l1 = edge(pc, pa) * inv_area;
        const double l2 = edge(pa, pb) * inv_area;
        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
        const double invz = l0 / a.z() + l1 / b.z() + l2 / c.z();
        const double z = 1.0 / invz;
        double& zb = depth[static_cast<std::size_t>(y) * frame.width + x];
        if (z < zb) {
          zb = z;
          std::uint8_t* px = frame.at(x, y);
          px[0] = color[0];
          px[1] = color[1];
          px[2] = color[2];
        }
      }
    }
  }

  // Convex polygon, clipped against the near plane, fan-triangulated.
  void polygon(const std::vector<Eigen::Vector3d>& poly, const Rgb& color) {
    std::vector<Eigen::Vector3d> clipped;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Eigen::Vector3d& cur = poly[i];
      const Eigen::Vector3d& nxt = poly[(i + 1) % poly.size()];
      const bool cin = cur.z() >= kNear;
      const bool nin = nxt.z() >= kNear;
      if (cin) clipped.push_back(cur);
      if (cin != nin) {
        const double s = (kNear - cur.z()) / (nxt.z() - cur.z());
        clipped.push_back(cur + s * (nxt - cur));
      }
    }
    for (std::size_t i = 1; i + 1 < clipped.size(); ++i) {
      triangle(clipped[0], clipped[i], clipped[i + 1], color);
    }
  }
};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h / 60.0, 6.0);
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  auto to8 = [](double u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0)); };
  return {to8(r + m), to8(g + m), to8(b + m)};
}

bool checker_light(double a, double b, double cell) {
  const long long ia = static_cast<long long>(std::floor(a / cell));
  const long long ib = static_cast<long long>(std::floor(b / cell));
  return ((ia + ib) & 1LL) != 0;
}

}  // namespace

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: width, height must be > 0");
  if (!(hfov > 0.0 && hfov < 180.0)) throw std::invalid_argument("camera: hfov must be in (0, 180)");
}

double CameraModel::focal() const { return 0.5 * (width - 1) / std::tan(0.5 * hfov * kDeg); }

double CameraModel::vfov() const {
  return 2.0 * std::atan(0.5 * (height - 1) / focal()) / kDeg;
}

Eigen::Vector3d CameraModel::forward_body() const {
  return {std::cos(uptilt * kDeg), 0.0, std::sin(uptilt * kDeg)};
}
Eigen::Vector3d CameraModel::right_body() const { return {0.0, -1.0, 0.0}; }
Eigen::Vector3d CameraModel::down_body() const {
  return {std::sin(uptilt * kDeg), 0.0, -std::cos(uptilt * kDeg)};
}

Projection project_point(const Eigen::Vector3d& p_world, const QuadState& s,
                         const CameraModel& cam) {
  const Eigen::Vector3d pb = s.q.conjugate() * (p_world - s.p);
  const double z = pb.dot(cam.forward_body());
  const double x = pb.dot(cam.right_body());
  const double y = pb.dot(cam.down_body());
  Projection out;
  out.depth = z;
  out.in_front = z > 1e-9;
  const double f = cam.focal();
  const double zz = out.in_front ? z : std::max(std::abs(z), 1e-9);
  out.pixel = {cam.principal_x() + f * x / zz, cam.principal_y() + f * y / zz};
  return out;
}

Rgb gate_color(int index, int count) {
  const int n = std::max(count, 1);
  return hsv_to_rgb(360.0 * static_cast<double>(index % n) / n, 0.95, 0.9);
}

Frame render_frame(const QuadState& s, const Track& track, const CameraModel& cam,
                   const RenderStyle& style) {
  cam.validate();
  Frame frame(cam.width, cam.height);
  frame.timestamp = s.t;
  std::vector<double> depth(static_cast<std::size_t>(cam.width) * cam.height,
                            std::numeric_limits<double>::infinity());

  const Eigen::Matrix3d r = s.q.toRotationMatrix();
  const Eigen::Vector3d fw = r * cam.forward_body();
  const Eigen::Vector3d rt = r * cam.right_body();
  const Eigen::Vector3d dn = r * cam.down_body();
  const double f = cam.focal();
  const double cx = cam.principal_x();
  const double cy = cam.principal_y();
  const Bounds& b = track.bounds;
  // Camera position relative to the bounds corner anchors the checker.
  const Eigen::Vector3d rel0 = s.p - b.min;
  const Eigen::Vector3d rel1 = b.max - s.p;

  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Eigen::Vector3d d = fw + ((x - cx) / f) * rt + ((y - cy) / f) * dn;
      double best = std::numeric_limits<double>::infinity();
      bool light = false;
      if (d.z() < 0.0) {
        const double t = -rel0.z() / d.z();
        if (t > 0.0) {
          best = t;
          light = checker_light(rel0.x() + t * d.x(), rel0.y() + t * d.y(), style.cell);
        }
      }
      if (style.arena_walls) {
        for (int axis = 0; axis < 2; ++axis) {
          if (d[axis] == 0.0) continue;
          const double t = d[axis] > 0.0 ? rel1[axis] / d[axis] : -rel0[axis] / d[axis];
          if (!(t > 0.0) || t >= best) continue;
          const double hz = rel0.z() + t * d.z();
          if (hz < 0.0 || hz > b.max.z() - b.min.z()) continue;
          const int other = 1 - axis;
          best = t;
          light = checker_light(rel0[other] + t * d[other], hz, style.cell);
        }
      }
      std::uint8_t* px = frame.at(x, y);
      const Rgb& c = std::isfinite(best) ? (light ? style.checker_light : style.checker_dark)
                                         : style.sky;
      px[0] = c[0];
      px[1] = c[1];
      px[2] = c[2];
      depth[static_cast<std::size_t>(y) * cam.width + x] = best;
    }
  }

  Raster raster{frame, depth, f, cx, cy};
  const int count = static_cast<int>(track.gates.size());
  for (const Gate& g : track.gates) {
    const Eigen::Vector3d gr = g.right();
    const double hw = 0.5 * g.inner_w, hh = 0.5 * g.inner_h, ft = g.frame_thickness;
    if (ft <= 0.0) continue;
    const Eigen::Vector3d rel = g.center - s.p;
    auto cam_pt = [&](double a, double u) {
      const Eigen::Vector3d w = rel + a * gr + u * g.up;
      return Eigen::Vector3d(w.dot(rt), w.dot(dn), w.dot(fw));
    };
    auto bar = [&](double a0, double a1, double u0, double u1) {
      raster.polygon({cam_pt(a0, u0), cam_pt(a1, u0), cam_pt(a1, u1), cam_pt(a0, u1)},
                     gate_color(g.index, count));
    };
    bar(-hw - ft, hw + ft, hh, hh + ft);    // top
    bar(-hw - ft, hw + ft, -hh - ft, -hh);  // bottom
    bar(-hw - ft, -hw, -hh, hh);            // left
    bar(hw, hw + ft, -hh, hh);              // right
  }
  return frame;
}

std::vector<float> to_gray(const Frame& frame) {
  std::vector<float> g(static_cast<std::size_t>(frame.width) * frame.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const std::uint8_t* p = frame.pixels.data() + 3 * i;
    g[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
  }
  return g;
}

std::string frame_to_ppm(const Frame& frame) {
  std::string out = "P6\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(frame.pixels.data()), frame.pixels.size());
  return out;
}

Frame frame_from_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw std::invalid_argument("ppm: not a binary P6 image");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  if (token() != "255") throw std::invalid_argument("ppm: only 8-bit images supported");
  ++pos;
  Frame frame(w, h);
  if (bytes.size() < pos + frame.pixels.size()) throw std::invalid_argument("ppm: truncated");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), frame.pixels.size(),
              frame.pixels.begin());
  return frame;
}

std::string pack_frames(const std::vector<Frame>& frames) {
  io::ByteWriter w;
  w.magic("GRFP");
  w.u32(static_cast<std::uint32_t>(frames.size()));
  const int width = frames.empty() ? 0 : frames.front().width;
  const int height = frames.empty() ? 0 : frames.front().height;
  w.u32(static_cast<std::uint32_t>(width));
  w.u32(static_cast<std::uint32_t>(height));
  for (const Frame& f : frames) {
    if (f.width != width || f.height != height || !f.valid()) {
      throw std::invalid_argument("pack_frames: frames must share one resolution");
    }
    w.bytes(f.pixels.data(), f.pixels.size());
  }
  return w.take();
}

std::vector<Frame> unpack_frames(const std::string& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("GRFP", "packed frames");
  const std::uint32_t count = r.u32();
  const int width = static_cast<int>(r.u32());
  const int height = static_cast<int>(r.u32());
  std::vector<Frame> frames;
  frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Frame f(width, height);
    const std::string_view raw = r.raw(f.pixels.size());
    std::copy(raw.begin(), raw.end(), f.pixels.begin());
    f.id = i;
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace gazeracer
