#include "gazeracer/tracks/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "gazeracer/simd/kernels.hpp"

namespace gazeracer::tracks {

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

float GrayImage::sample(double x, double y) const {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(x), width - 2 < 0 ? 0 : width - 2);
  const int y0 = std::min(static_cast<int>(y), height - 2 < 0 ? 0 : height - 2);
  const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
  const double bot = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
  return static_cast<float>(top + fy * (bot - top));
}

GrayImage gray_image(const Frame& frame) {
  GrayImage g;
  g.width = frame.width;
  g.height = frame.height;
  g.data = to_gray(frame);
  return g;
}

// ---------------------------------------------------------------------------
// Harris
// ---------------------------------------------------------------------------

GrayImage harris_response(const GrayImage& img, double k) {
  const int w = img.width, h = img.height;
  const std::size_t n = img.data.size();
  std::vector<float> ix(n, 0.0f), iy(n, 0.0f);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const float a = img.at(x - 1, y - 1), b = img.at(x, y - 1), c = img.at(x + 1, y - 1);
      const float d = img.at(x - 1, y), f = img.at(x + 1, y);
      const float g = img.at(x - 1, y + 1), hh = img.at(x, y + 1), i = img.at(x + 1, y + 1);
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      ix[o] = ((c + 2 * f + i) - (a + 2 * d + g)) * 0.125f;
      iy[o] = ((g + 2 * hh + i) - (a + 2 * b + c)) * 0.125f;
    }
  }
  const auto& kern = simd::kernels();
  std::vector<float> xx(n), yy(n), xy(n);
  kern.mul(ix.data(), ix.data(), xx.data(), n);
  kern.mul(iy.data(), iy.data(), yy.data(), n);
  kern.mul(ix.data(), iy.data(), xy.data(), n);

  GrayImage r(w, h, 0.0f);
  for (int y = 2; y < h - 2; ++y) {
    for (int x = 2; x < w - 2; ++x) {
      double sxx = 0, syy = 0, sxy = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const std::size_t row = static_cast<std::size_t>(y + dy) * w;
        for (int dx = -1; dx <= 1; ++dx) {
          sxx += xx[row + x + dx];
          syy += yy[row + x + dx];
          sxy += xy[row + x + dx];
        }
      }
      const double tr = sxx + syy;
      r.at(x, y) = static_cast<float>(sxx * syy - sxy * sxy - k * tr * tr);
    }
  }
  return r;
}

std::vector<Corner> harris_corners(const GrayImage& img, const HarrisConfig& cfg,
                                   const std::vector<Eigen::Vector2d>& occupied) {
  const GrayImage r = harris_response(img, cfg.k);
  const float mx = r.data.empty() ? 0.0f : *std::max_element(r.data.begin(), r.data.end());
  if (!(mx > 0.0f)) return {};
  const double thr = cfg.quality * mx;
  std::vector<Corner> cand;
  for (int y = 1; y < r.height - 1; ++y) {
    for (int x = 1; x < r.width - 1; ++x) {
      const float v = r.at(x, y);
      if (v < thr || v <= 0.0f) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dx || dy) && r.at(x + dx, y + dy) > v) {
            peak = false;
            break;
          }
        }
      }
      if (peak) cand.push_back({Eigen::Vector2d(x, y), v});
    }
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [](const Corner& a, const Corner& b) { return a.response > b.response; });
  const double d2 = cfg.min_distance * cfg.min_distance;
  std::vector<Corner> out;
  for (const Corner& c : cand) {
    if (static_cast<int>(out.size()) >= cfg.max_corners) break;
    auto near = [&](const Eigen::Vector2d& q) { return (q - c.p).squaredNorm() < d2; };
    if (std::any_of(occupied.begin(), occupied.end(), near)) continue;
    if (std::any_of(out.begin(), out.end(), [&](const Corner& o) { return near(o.p); })) continue;
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lucas-Kanade
// ---------------------------------------------------------------------------

namespace {

GrayImage downsample(const GrayImage& img) {
  static constexpr float k[5] = {1 / 16.f, 4 / 16.f, 6 / 16.f, 4 / 16.f, 1 / 16.f};
  const int w = img.width, h = img.height;
  GrayImage tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float s = 0;
      for (int i = -2; i <= 2; ++i) s += k[i + 2] * img.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = s;
    }
  }
  GrayImage out((w + 1) / 2, (h + 1) / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      float s = 0;
      for (int i = -2; i <= 2; ++i) s += k[i + 2] * tmp.at(2 * x, std::clamp(2 * y + i, 0, h - 1));
      out.at(x, y) = s;
    }
  }
  return out;
}

std::vector<GrayImage> pyramid(const GrayImage& img, int levels) {
  std::vector<GrayImage> p{img};
  for (int l = 1; l < levels && p.back().width >= 8 && p.back().height >= 8; ++l) {
    p.push_back(downsample(p.back()));
  }
  return p;
}

void central_gradients(const GrayImage& img, GrayImage& gx, GrayImage& gy) {
  const int w = img.width, h = img.height;
  gx = GrayImage(w, h);
  gy = GrayImage(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gx.at(x, y) = 0.5f * (img.at(std::min(x + 1, w - 1), y) - img.at(std::max(x - 1, 0), y));
      gy.at(x, y) = 0.5f * (img.at(x, std::min(y + 1, h - 1)) - img.at(x, std::max(y - 1, 0)));
    }
  }
}

}  // namespace

LkResult lk_track(const GrayImage& prev, const GrayImage& next,
                  const std::vector<Eigen::Vector2d>& points, const LkConfig& cfg) {
  if (prev.width != next.width || prev.height != next.height) {
    throw std::invalid_argument("lk_track: frames differ in size");
  }
  if (cfg.window < 3 || cfg.window % 2 == 0) throw std::invalid_argument("lk_track: window must be odd >= 3");
  const auto pa = pyramid(prev, cfg.levels);
  const auto pb = pyramid(next, cfg.levels);
  const int levels = static_cast<int>(pa.size());
  std::vector<GrayImage> gxs(levels), gys(levels);
  for (int l = 0; l < levels; ++l) central_gradients(pa[l], gxs[l], gys[l]);

  const int r = cfg.window / 2;
  const int area = cfg.window * cfg.window;
  std::vector<double> tmpl(area), gx(area), gy(area);
  LkResult res;
  res.points.resize(points.size());
  res.tracked.assign(points.size(), true);
  for (std::size_t i = 0; i < points.size(); ++i) {
    Eigen::Vector2d guess = Eigen::Vector2d::Zero();
    bool ok = true;
    for (int l = levels - 1; l >= 0 && ok; --l) {
      const double scale = std::ldexp(1.0, -l);
      const Eigen::Vector2d p = points[i] * scale;
      double gxx = 0, gyy = 0, gxy = 0;
      for (int dy = -r, j = 0; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++j) {
          tmpl[j] = pa[l].sample(p.x() + dx, p.y() + dy);
          gx[j] = gxs[l].sample(p.x() + dx, p.y() + dy);
          gy[j] = gys[l].sample(p.x() + dx, p.y() + dy);
          gxx += gx[j] * gx[j];
          gyy += gy[j] * gy[j];
          gxy += gx[j] * gy[j];
        }
      }
      const double det = gxx * gyy - gxy * gxy;
      const double min_eig = 0.5 * (gxx + gyy - std::sqrt((gxx - gyy) * (gxx - gyy) + 4 * gxy * gxy));
      if (min_eig / area < cfg.min_eigenvalue || det <= 0.0) {
        ok = false;
        break;
      }
      Eigen::Vector2d v = Eigen::Vector2d::Zero();
      bool converged = false;
      for (int it = 0; it < cfg.max_iterations; ++it) {
        double bx = 0, by = 0;
        const Eigen::Vector2d q = p + guess + v;
        for (int dy = -r, j = 0; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx, ++j) {
            const double diff = tmpl[j] - pb[l].sample(q.x() + dx, q.y() + dy);
            bx += diff * gx[j];
            by += diff * gy[j];
          }
        }
        const Eigen::Vector2d delta((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
        v += delta;
        if (!delta.allFinite()) break;
        if (delta.norm() < cfg.epsilon) {
          converged = true;
          break;
        }
      }
      if (l == 0 && !converged) ok = false;
      guess = l > 0 ? Eigen::Vector2d(2.0 * (guess + v)) : Eigen::Vector2d(guess + v);
    }
    const Eigen::Vector2d q = points[i] + guess;
    if (ok && (q.x() < 0 || q.y() < 0 || q.x() > prev.width - 1 || q.y() > prev.height - 1)) ok = false;
    if (ok) {
      double resid = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          resid += std::abs(prev.sample(points[i].x() + dx, points[i].y() + dy) -
                            next.sample(q.x() + dx, q.y() + dy));
        }
      }
      if (resid / area > cfg.max_residual) ok = false;
    }
    res.points[i] = q;
    res.tracked[i] = ok;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Epipolar rejection
// ---------------------------------------------------------------------------

namespace {

// Similarity taking the points' centroid to the origin and their mean
// distance to sqrt(2).
Eigen::Matrix3d normalizer(const std::vector<Eigen::Vector2d>& pts, const std::vector<std::size_t>& idx) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (std::size_t i : idx) c += pts[i];
  c /= static_cast<double>(idx.size());
  double d = 0;
  for (std::size_t i : idx) d += (pts[i] - c).norm();
  d /= static_cast<double>(idx.size());
  const double s = d > 1e-12 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

Eigen::Vector3d hom(const Eigen::Vector2d& p) { return {p.x(), p.y(), 1.0}; }

Eigen::Matrix3d fundamental_from(const std::vector<Eigen::Vector2d>& a,
                                 const std::vector<Eigen::Vector2d>& b,
                                 const std::vector<std::size_t>& idx) {
  const Eigen::Matrix3d ta = normalizer(a, idx), tb = normalizer(b, idx);
  Eigen::MatrixXd m(std::max<std::size_t>(idx.size(), 9), 9);
  m.setZero();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector3d p = ta * hom(a[idx[r]]), q = tb * hom(b[idx[r]]);
    m.row(r) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(), p.x(), p.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Eigen::Matrix3d fn;
  fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  Eigen::JacobiSVD<Eigen::Matrix3d> s2(fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = s2.singularValues();
  sv(2) = 0.0;
  fn = s2.matrixU() * sv.asDiagonal() * s2.matrixV().transpose();
  Eigen::Matrix3d out = tb.transpose() * fn * ta;
  const double norm = out.norm();
  return norm > 0 ? Eigen::Matrix3d(out / norm) : out;
}

Eigen::Matrix3d homography_from(const std::vector<Eigen::Vector2d>& a,
                                const std::vector<Eigen::Vector2d>& b,
                                const std::vector<std::size_t>& idx) {
  const Eigen::Matrix3d ta = normalizer(a, idx), tb = normalizer(b, idx);
  Eigen::MatrixXd m(std::max<std::size_t>(2 * idx.size(), 9), 9);
  m.setZero();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector3d p = ta * hom(a[idx[r]]), q = tb * hom(b[idx[r]]);
    m.row(2 * r) << -p.x(), -p.y(), -1, 0, 0, 0, q.x() * p.x(), q.x() * p.y(), q.x();
    m.row(2 * r + 1) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return tb.inverse() * hn * ta;
}

double transfer_error(const Eigen::Matrix3d& h, const Eigen::Matrix3d& hinv, const Eigen::Vector2d& a,
                      const Eigen::Vector2d& b) {
  const Eigen::Vector3d fb = h * hom(a), fa = hinv * hom(b);
  if (std::abs(fb.z()) < 1e-12 || std::abs(fa.z()) < 1e-12) return HUGE_VAL;
  return std::sqrt((fb.hnormalized() - b).squaredNorm() + (fa.hnormalized() - a).squaredNorm());
}

std::vector<std::size_t> draw(std::size_t n, int k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

template <class Fit, class Err>
std::vector<bool> ransac(std::size_t n, int sample, int iterations, double thr, Rng& rng, Fit fit, Err err) {
  std::vector<bool> best(n, false);
  std::size_t best_count = 0;
  std::vector<bool> cur(n);
  for (int it = 0; it < iterations; ++it) {
    const auto model = fit(draw(n, sample, rng));
    if (!model.allFinite()) continue;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) count += cur[i] = err(model, i) <= thr;
    if (count > best_count) {
      best_count = count;
      best = cur;
    }
  }
  // Refit on the consensus set; keep the refit only if it explains as much.
  if (best_count >= static_cast<std::size_t>(sample)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (best[i]) idx.push_back(i);
    }
    const auto model = fit(idx);
    if (model.allFinite()) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) count += cur[i] = err(model, i) <= thr;
      if (count >= best_count) best = cur;
    }
  }
  return best;
}

}  // namespace

Eigen::Matrix3d fundamental_8point(const std::vector<Eigen::Vector2d>& a,
                                   const std::vector<Eigen::Vector2d>& b) {
  if (a.size() != b.size() || a.size() < 8) throw std::invalid_argument("fundamental_8point: need >= 8 pairs");
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return fundamental_from(a, b, idx);
}

double symmetric_epipolar_distance(const Eigen::Matrix3d& f, const Eigen::Vector2d& a,
                                   const Eigen::Vector2d& b) {
  const Eigen::Vector3d lb = f * hom(a), la = f.transpose() * hom(b);
  const double e = hom(b).dot(lb);
  const double nb = lb.head<2>().squaredNorm(), na = la.head<2>().squaredNorm();
  if (nb < 1e-300 || na < 1e-300) return std::abs(e) < 1e-300 ? 0.0 : HUGE_VAL;
  return std::sqrt(e * e / nb + e * e / na);
}

EpipolarResult epipolar_reject(const std::vector<Eigen::Vector2d>& a,
                               const std::vector<Eigen::Vector2d>& b, std::uint64_t seed,
                               double threshold, int iterations) {
  if (a.size() != b.size()) throw std::invalid_argument("epipolar_reject: point counts differ");
  EpipolarResult res;
  const std::size_t n = a.size();
  if (n < 8) {
    res.inlier.assign(n, true);
    res.low_confidence = true;
    return res;
  }
  Rng rng(seed);
  res.inlier = ransac(
      n, 8, iterations, threshold, rng,
      [&](const std::vector<std::size_t>& idx) { return fundamental_from(a, b, idx); },
      [&](const Eigen::Matrix3d& f, std::size_t i) { return symmetric_epipolar_distance(f, a[i], b[i]); });
  std::vector<std::size_t> in;
  for (std::size_t i = 0; i < n; ++i) {
    if (res.inlier[i]) in.push_back(i);
  }
  if (in.size() >= 8) res.fundamental = fundamental_from(a, b, in);

  // Rotation-only motion or a planar scene leaves F undetermined: any single
  // outlier then fits some member of the solution family. When a homography
  // explains (almost) as many pairs, its consensus decides instead.
  const auto h_in = ransac(
      n, 4, iterations, threshold, rng,
      [&](const std::vector<std::size_t>& idx) { return homography_from(a, b, idx); },
      [&](const Eigen::Matrix3d& h, std::size_t i) {
        return transfer_error(h, h.inverse(), a[i], b[i]);
      });
  const auto f_count = static_cast<std::size_t>(std::count(res.inlier.begin(), res.inlier.end(), true));
  const auto h_count = static_cast<std::size_t>(std::count(h_in.begin(), h_in.end(), true));
  const std::size_t slack = std::max<std::size_t>(1, n / 50);
  if (h_count + slack >= f_count) res.inlier = h_in;
  return res;
}

// ---------------------------------------------------------------------------
// Sampling and tracker
// ---------------------------------------------------------------------------

std::vector<float> FeatureTrackSet::flatten() const {
  std::vector<float> out;
  out.reserve(kCount * kDims);
  for (const FeatureTrack& t : tracks) {
    out.insert(out.end(), {static_cast<float>(t.x), static_cast<float>(t.y), static_cast<float>(t.vx),
                           static_cast<float>(t.vy), static_cast<float>(t.age)});
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t active, Rng& rng) {
  constexpr auto k = static_cast<std::size_t>(FeatureTrackSet::kCount);
  if (active == 0) throw std::invalid_argument("sample_tracks: no active tracks");
  if (active == k) {
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  if (active > k) return draw(active, static_cast<int>(k), rng);
  std::vector<std::size_t> idx(k);
  for (auto& i : idx) i = uniform_index(rng, active);
  return idx;
}

TrackerConfig TrackerConfig::for_resolution(int width) {
  TrackerConfig cfg;
  cfg.harris.min_distance = 8.0 * width / 128.0;
  return cfg;
}

FeatureTracker::FeatureTracker(TrackerConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed), rng_(seed) {}

void FeatureTracker::reset() {
  rng_.seed(seed_);
  prev_ = {};
  tracks_.clear();
  finished_.clear();
  frame_count_ = 0;
}

void FeatureTracker::detect(const GrayImage& gray) {
  const int room = cfg_.max_tracks - static_cast<int>(tracks_.size());
  if (room <= 0) return;
  std::vector<Eigen::Vector2d> occupied;
  for (const Track& t : tracks_) occupied.push_back(t.p);
  HarrisConfig hc = cfg_.harris;
  hc.max_corners = room;
  for (const Corner& c : harris_corners(gray, hc, occupied)) tracks_.push_back({c.p});
}

FeatureTrackSet FeatureTracker::step(const Frame& frame, double dt) { return step(gray_image(frame), dt); }

FeatureTrackSet FeatureTracker::step(const GrayImage& gray, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("feature tracker: dt must be positive");
  if (frame_count_ > 0) {
    if (gray.width != prev_.width || gray.height != prev_.height) {
      throw std::invalid_argument("feature tracker: frame size changed");
    }
    std::vector<Eigen::Vector2d> pts;
    for (const Track& t : tracks_) pts.push_back(t.p);
    const LkResult lk = lk_track(prev_, gray, pts, cfg_.lk);
    std::vector<Eigen::Vector2d> from, to;
    std::vector<std::size_t> which;
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      if (lk.tracked[i]) {
        from.push_back(pts[i]);
        to.push_back(lk.points[i]);
        which.push_back(i);
      } else {
        finished_.push_back(tracks_[i].age);
      }
    }
    const EpipolarResult ep = epipolar_reject(from, to, rng_(), cfg_.ransac_threshold);
    std::vector<Track> kept;
    for (std::size_t j = 0; j < which.size(); ++j) {
      Track t = tracks_[which[j]];
      if (!ep.inlier[j]) {
        finished_.push_back(t.age);
        continue;
      }
      t.v = (to[j] - from[j]) / dt;
      t.p = to[j];
      t.age = std::min(t.age + 1, 255);
      kept.push_back(t);
    }
    tracks_ = std::move(kept);
  }
  if (frame_count_ % cfg_.redetect_every == 0 || static_cast<int>(tracks_.size()) < cfg_.redetect_below) {
    detect(gray);
  }
  prev_ = gray;
  ++frame_count_;

  FeatureTrackSet set;
  if (tracks_.empty()) {
    set.empty = true;
    return set;
  }
  const double sx = 2.0 / (gray.width - 1), sy = 2.0 / (gray.height - 1);
  const auto idx = sample_indices(tracks_.size(), rng_);
  for (int s = 0; s < FeatureTrackSet::kCount; ++s) {
    const Track& t = tracks_[idx[s]];
    set.tracks[s] = {std::clamp(t.p.x() * sx - 1.0, -1.0, 1.0), std::clamp(t.p.y() * sy - 1.0, -1.0, 1.0),
                     t.v.x() * sx, t.v.y() * sy, t.age};
  }
  return set;
}

std::string track_sets_to_csv(const std::vector<FeatureTrackSet>& sets) {
  std::ostringstream os;
  os.precision(9);
  os << "tick,slot,x,y,vx,vy,age\n";
  for (std::size_t k = 0; k < sets.size(); ++k) {
    for (int s = 0; s < FeatureTrackSet::kCount; ++s) {
      const FeatureTrack& t = sets[k].tracks[s];
      os << k << ',' << s << ',' << t.x << ',' << t.y << ',' << t.vx << ',' << t.vy << ',' << t.age << '\n';
    }
  }
  return os.str();
}

}  // namespace gazeracer::tracks
