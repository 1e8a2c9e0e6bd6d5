#include "gazeracer/mpc/reference.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "gazeracer/util/io.hpp"
#include "gazeracer/util/rng.hpp"

namespace gazeracer {

namespace {

struct Spline {
  std::vector<Eigen::Vector3d> pts;

  // Coefficients of segment i: P(s) = 0.5 * (c0 + c1 s + c2 s^2 + c3 s^3).
  void coeffs(double u, Eigen::Vector3d c[4], double& s) const {
    const int n = static_cast<int>(pts.size());
    const double base = std::floor(u);
    s = u - base;
    int i = static_cast<int>(base) % n;
    if (i < 0) i += n;
    const Eigen::Vector3d& p0 = pts[(i + n - 1) % n];
    const Eigen::Vector3d& p1 = pts[i];
    const Eigen::Vector3d& p2 = pts[(i + 1) % n];
    const Eigen::Vector3d& p3 = pts[(i + 2) % n];
    c[0] = 2.0 * p1;
    c[1] = p2 - p0;
    c[2] = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3;
    c[3] = 3.0 * p1 - p0 - 3.0 * p2 + p3;
  }
  Eigen::Vector3d d1(double u) const {
    Eigen::Vector3d c[4];
    double s;
    coeffs(u, c, s);
    return 0.5 * (c[1] + 2.0 * c[2] * s + 3.0 * c[3] * s * s);
  }
  Eigen::Vector3d d2(double u) const {
    Eigen::Vector3d c[4];
    double s;
    coeffs(u, c, s);
    return 0.5 * (2.0 * c[2] + 6.0 * c[3] * s);
  }
};

Eigen::Quaterniond attitude_from(const Eigen::Vector3d& acc, const Eigen::Vector3d& vel,
                                 double g) {
  const Eigen::Vector3d zb = (acc + Eigen::Vector3d(0, 0, g)).normalized();
  const double yaw = std::atan2(vel.y(), vel.x());
  const Eigen::Vector3d xc(std::cos(yaw), std::sin(yaw), 0.0);
  const Eigen::Vector3d yb = zb.cross(xc).normalized();
  const Eigen::Vector3d xb = yb.cross(zb);
  Eigen::Matrix3d r;
  r.col(0) = xb;
  r.col(1) = yb;
  r.col(2) = zb;
  return Eigen::Quaterniond(r).normalized();
}

// Body-frame rate taking qa to qb over dt.
Eigen::Vector3d body_rate(const Eigen::Quaterniond& qa, Eigen::Quaterniond qb, double dt) {
  if (qa.dot(qb) < 0.0) qb.coeffs() = -qb.coeffs();
  const Eigen::AngleAxisd aa(qa.conjugate() * qb);
  return aa.angle() * aa.axis() / dt;
}

}  // namespace

ReferenceTrajectory::ReferenceTrajectory(std::vector<RefSample> samples, bool closed,
                                         double period)
    : samples_(std::move(samples)), closed_(closed), period_(period) {}

RefSample ReferenceTrajectory::at(double t) const {
  if (samples_.empty()) throw std::logic_error("empty reference");
  const std::size_t n = samples_.size();
  if (closed_) {
    t = std::fmod(t, period_);
    if (t < 0.0) t += period_;
  } else {
    t = std::clamp(t, 0.0, samples_.back().t);
  }
  std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(t / kDt), n - 1);
  while (k > 0 && samples_[k].t > t) --k;
  const RefSample& a = samples_[k];
  const bool wrap = k + 1 == n;
  if (wrap && !closed_) return a;
  const RefSample& b = wrap ? samples_.front() : samples_[k + 1];
  const double tb = wrap ? period_ : b.t;
  const double alpha = tb > a.t ? std::clamp((t - a.t) / (tb - a.t), 0.0, 1.0) : 0.0;
  RefSample out;
  out.t = t;
  out.p = (1.0 - alpha) * a.p + alpha * b.p;
  out.v = (1.0 - alpha) * a.v + alpha * b.v;
  out.w = (1.0 - alpha) * a.w + alpha * b.w;
  out.q = a.q.slerp(alpha, b.q);
  return out;
}

void ReferenceTrajectory::validate() const {
  if (samples_.size() < 2) throw std::invalid_argument("reference: fewer than 2 samples");
  for (std::size_t k = 0; k < samples_.size(); ++k) {
    const auto& s = samples_[k];
    if (std::abs(s.t - static_cast<double>(k) * kDt) > 1e-6) {
      throw std::invalid_argument("reference: samples not on the uniform 20 ms grid at index " +
                                  std::to_string(k));
    }
    if (k > 0 && (s.p - samples_[k - 1].p).norm() >= 0.5) {
      throw std::invalid_argument("reference: position gap >= 0.5 m at index " +
                                  std::to_string(k));
    }
    if (!s.p.allFinite() || !s.v.allFinite() || !s.w.allFinite() ||
        std::abs(s.q.norm() - 1.0) > 1e-6) {
      throw std::invalid_argument("reference: invalid sample at index " + std::to_string(k));
    }
  }
}

ReferenceTrajectory generate_reference(const Track& track, const ReferenceOptions& opts) {
  if (!(opts.speed > 0.5 && opts.speed <= 10.0)) {
    throw std::invalid_argument("generate_reference: speed must be in (0.5, 10]");
  }
  track.validate();
  const int n = static_cast<int>(track.gates.size());
  if (n < 2) throw std::invalid_argument("generate_reference: need at least 2 gates");
  if (!opts.gate_offsets.empty() && static_cast<int>(opts.gate_offsets.size()) != n) {
    throw std::invalid_argument("generate_reference: gate_offsets size mismatch");
  }

  Spline spline;
  for (int k = 0; k < n; ++k) {
    const Gate& g = track.gates[k];
    Eigen::Vector3d c = g.center;
    if (!opts.gate_offsets.empty()) {
      c += opts.gate_offsets[k].x() * g.right() + opts.gate_offsets[k].y() * g.up;
    }
    spline.pts.push_back(c);
  }

  // Arc-length table over one loop starting mid-way through the last segment.
  const double u_start = n - 0.5;
  constexpr int kPerSeg = 2000;
  const int m = n * kPerSeg;
  std::vector<double> us(m + 1), ss(m + 1);
  us[0] = u_start;
  ss[0] = 0.0;
  Eigen::Vector3d prev = loop_point(spline.pts, u_start);
  for (int i = 1; i <= m; ++i) {
    us[i] = u_start + static_cast<double>(i) / kPerSeg;
    const Eigen::Vector3d cur = loop_point(spline.pts, us[i]);
    // Two chords per step.
    const Eigen::Vector3d mid = loop_point(spline.pts, 0.5 * (us[i - 1] + us[i]));
    ss[i] = ss[i - 1] + (mid - prev).norm() + (cur - mid).norm();
    prev = cur;
  }
  const double length = ss[m];

  // The loop must not clip any gate frame and must pass gates in order.
  {
    int expected = 0;
    Eigen::Vector3d a = loop_point(spline.pts, us[0]);
    for (int i = 1; i <= m; ++i) {
      const Eigen::Vector3d b = loop_point(spline.pts, us[i]);
      for (const Gate& g : track.gates) {
        const GateCrossing c = check_gate_pass(a, b, g);
        if (c == GateCrossing::FrameHit) {
          throw std::invalid_argument("generate_reference: loop clips the frame of gate " +
                                      std::to_string(g.index));
        }
        if (c == GateCrossing::Pass) {
          if (g.index != expected % n) {
            throw std::invalid_argument("generate_reference: loop passes gate " +
                                        std::to_string(g.index) + " out of order");
          }
          ++expected;
        }
      }
      a = b;
    }
    if (expected != n) {
      throw std::invalid_argument("generate_reference: loop passes " + std::to_string(expected) +
                                  " of " + std::to_string(n) + " gates");
    }
  }

  const double period = length / opts.speed;
  auto u_of_s = [&](double s) {
    s = std::fmod(s, length);
    if (s < 0) s += length;
    const auto it = std::upper_bound(ss.begin(), ss.end(), s);
    const std::size_t i = std::clamp<std::size_t>(it - ss.begin(), 1, m);
    const double f = (s - ss[i - 1]) / (ss[i] - ss[i - 1]);
    return us[i - 1] + f * (us[i] - us[i - 1]);
  };
  struct Kin {
    Eigen::Vector3d p, v, a;
  };
  auto kin = [&](double t) {
    const double u = u_of_s(opts.speed * t);
    const Eigen::Vector3d d1 = spline.d1(u);
    const Eigen::Vector3d d2 = spline.d2(u);
    const double n1 = d1.norm();
    const Eigen::Vector3d tangent = d1 / n1;
    const Eigen::Vector3d perp = d2 - d2.dot(tangent) * tangent;
    return Kin{loop_point(spline.pts, u), opts.speed * tangent,
               (opts.speed * opts.speed / (n1 * n1)) * perp};
  };
  // Catmull-Rom acceleration jumps at the knots; the attitude follows a
  // Gaussian-smoothed acceleration (sigma 60 ms) so body rates stay bounded.
  auto smooth_kin = [&](double t) {
    constexpr double sigma = 0.06;
    constexpr int half = 8;
    Kin c = kin(t);
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double wsum = 0.0;
    for (int i = -half; i <= half; ++i) {
      const double off = 2.5 * sigma * i / half;
      const double w = std::exp(-0.5 * off * off / (sigma * sigma));
      acc += w * kin(t + off).a;
      wsum += w;
    }
    c.a = acc / wsum;
    return c;
  };

  const int count = static_cast<int>(std::ceil(period / ReferenceTrajectory::kDt - 1e-9));
  std::vector<RefSample> samples;
  samples.reserve(count);
  constexpr double h = ReferenceTrajectory::kDt;
  for (int k = 0; k < count; ++k) {
    const double t = k * ReferenceTrajectory::kDt;
    const Kin c = smooth_kin(t);
    RefSample s;
    s.t = t;
    s.p = c.p;
    s.v = c.v;
    s.q = attitude_from(c.a, c.v, opts.g);
    const Kin before = smooth_kin(t - 0.5 * h);
    const Kin after = smooth_kin(t + 0.5 * h);
    s.w = body_rate(attitude_from(before.a, before.v, opts.g),
                    attitude_from(after.a, after.v, opts.g), h);
    samples.push_back(s);
  }
  ReferenceTrajectory ref(std::move(samples), true, period);
  ref.validate();
  return ref;
}

std::vector<ReferenceTrajectory> generate_reference_set(const Track& track,
                                                        const ReferenceSetOptions& opts,
                                                        std::uint64_t seed) {
  std::vector<ReferenceTrajectory> out;
  for (int r = 0; r < opts.count; ++r) {
    Rng rng(derive_seed(seed, {0x5245u, static_cast<std::uint64_t>(r)}));
    ReferenceOptions ro;
    ro.g = opts.g;
    ro.speed = uniform(rng, opts.speed_min, opts.speed_max);
    for (std::size_t k = 0; k < track.gates.size(); ++k) {
      const double dx = uniform(rng, -opts.offset, opts.offset);
      const double dy = uniform(rng, -opts.offset, opts.offset);
      ro.gate_offsets.emplace_back(dx, dy);
    }
    out.push_back(generate_reference(track, ro));
  }
  return out;
}

QuadState initial_state(const ReferenceTrajectory& ref) {
  const RefSample s = ref.at(0.0);
  QuadState x;
  x.t = 0.0;
  x.p = s.p;
  x.v = s.v;
  x.q = s.q;
  x.w = s.w;
  return x;
}

std::string reference_to_csv(const ReferenceTrajectory& ref) {
  std::ostringstream os;
  os << "ts,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz\n";
  os << std::setprecision(17);
  for (const auto& s : ref.samples()) {
    os << s.t << ',' << s.p.x() << ',' << s.p.y() << ',' << s.p.z() << ',' << s.q.w() << ','
       << s.q.x() << ',' << s.q.y() << ',' << s.q.z() << ',' << s.v.x() << ',' << s.v.y() << ','
       << s.v.z() << ',' << s.w.x() << ',' << s.w.y() << ',' << s.w.z() << '\n';
  }
  return os.str();
}

ReferenceTrajectory reference_from_csv(const std::string& text) {
  const io::CsvTable table = io::parse_csv(text);
  static const char* kCols[] = {"ts", "px", "py", "pz", "qw", "qx", "qy",
                                "qz", "vx", "vy", "vz", "wx", "wy", "wz"};
  int idx[14];
  for (int i = 0; i < 14; ++i) {
    idx[i] = table.column(kCols[i]);
    if (idx[i] < 0) {
      throw std::invalid_argument(std::string("reference CSV: missing column '") + kCols[i] + "'");
    }
  }
  std::vector<RefSample> samples;
  for (const auto& row : table.rows) {
    if (row.size() < table.header.size()) throw std::invalid_argument("reference CSV: short row");
    double v[14];
    for (int i = 0; i < 14; ++i) v[i] = io::to_double(row[idx[i]], kCols[i]);
    RefSample s;
    s.t = v[0];
    s.p = {v[1], v[2], v[3]};
    s.q = Eigen::Quaterniond(v[4], v[5], v[6], v[7]);
    if (std::abs(s.q.norm() - 1.0) > 1e-12) s.q.normalize();
    s.v = {v[8], v[9], v[10]};
    s.w = {v[11], v[12], v[13]};
    samples.push_back(s);
  }
  if (samples.size() < 2) throw std::invalid_argument("reference CSV: fewer than 2 samples");
  // Rebase time to start at zero.
  const double t0 = samples.front().t;
  for (auto& s : samples) s.t -= t0;
  const bool closed = (samples.front().p - samples.back().p).norm() < 0.5;
  const double period = closed ? samples.back().t + ReferenceTrajectory::kDt : samples.back().t;
  ReferenceTrajectory ref(std::move(samples), closed, period);
  ref.validate();
  return ref;
}

ReferenceTrajectory load_reference(const std::string& path) {
  return reference_from_csv(io::read_file(path));
}

void save_reference(const ReferenceTrajectory& ref, const std::string& path) {
  io::write_file(path, reference_to_csv(ref));
}

}  // namespace gazeracer
