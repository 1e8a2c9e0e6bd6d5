#include <doctest.h>

#include <cmath>

#include "gazeracer/mpc/mpc.hpp"
#include "gazeracer/mpc/reference.hpp"
#include "gazeracer/sim/rollout.hpp"

using namespace gazeracer;

namespace {

double path_length(const ReferenceTrajectory& ref) {
  double len = 0.0;
  const auto& s = ref.samples();
  for (std::size_t i = 1; i < s.size(); ++i) len += (s[i].p - s[i - 1].p).norm();
  if (ref.closed()) len += (s.front().p - s.back().p).norm();
  return len;
}

// Straight level flight along +x at 2 m altitude.
ReferenceTrajectory straight_line(double speed, double duration) {
  std::vector<RefSample> samples;
  const int n = static_cast<int>(std::lround(duration / ReferenceTrajectory::kDt)) + 1;
  for (int i = 0; i < n; ++i) {
    RefSample r;
    r.t = i * ReferenceTrajectory::kDt;
    r.p = {speed * r.t, 0.0, 2.0};
    r.v = {speed, 0.0, 0.0};
    samples.push_back(r);
  }
  return ReferenceTrajectory(samples, false, (n - 1) * ReferenceTrajectory::kDt);
}

}  // namespace

TEST_CASE("reference basics") {
  const Track oval = generate_track("oval");
  const ReferenceTrajectory ref = generate_reference(oval, {3.0});
  ref.validate();
  CHECK(ref.closed());
  for (const auto& g : oval.gates) {
    double best = 1e9;
    for (const auto& s : ref.samples()) best = std::min(best, (s.p - g.center).norm());
    CHECK(best < 0.2);
  }
  const auto& s = ref.samples();
  for (std::size_t i = 1; i < s.size(); ++i) {
    CHECK(s[i].t - s[i - 1].t == doctest::Approx(0.02));
    CHECK((s[i].p - s[i - 1].p).norm() < 0.5);
  }
  const ReferenceTrajectory fast = generate_reference(oval, {6.0});
  CHECK(fast.duration() / ref.duration() == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("figure8 duration matches length over speed") {
  const Track f8 = generate_track("figure8");
  const ReferenceTrajectory ref = generate_reference(f8, {5.0});
  CHECK(path_length(ref) / 5.0 == doctest::Approx(ref.duration()).epsilon(0.01));
  // Same order of magnitude as an 11.8 s human lap.
  CHECK(ref.duration() > 11.8 / 3);
  CHECK(ref.duration() < 11.8 * 3);
}

TEST_CASE("reference attitude follows thrust direction and yaw follows velocity") {
  const ReferenceTrajectory ref = generate_reference(generate_track("figure8"), {5.0});
  for (std::size_t i = 0; i < ref.samples().size(); i += 25) {
    const RefSample& r = ref.samples()[i];
    CHECK(std::abs(r.q.norm() - 1.0) < 1e-9);
    const Eigen::Vector3d xb = r.q * Eigen::Vector3d::UnitX();
    const Eigen::Vector2d vh = r.v.head<2>().normalized();
    CHECK(xb.head<2>().normalized().dot(vh) > 0.99);
  }
}

TEST_CASE("reference rejects bad speed and round-trips CSV") {
  const Track oval = generate_track("oval");
  CHECK_THROWS_AS(generate_reference(oval, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(generate_reference(oval, {10.5}), std::invalid_argument);
  const ReferenceTrajectory ref = generate_reference(oval, {4.0});
  const std::string csv = reference_to_csv(ref);
  CHECK(csv.rfind("ts,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz", 0) == 0);
  const ReferenceTrajectory back = reference_from_csv(csv);
  REQUIRE(back.samples().size() == ref.samples().size());
  CHECK(back.closed());
  CHECK((back.samples()[17].p - ref.samples()[17].p).norm() < 1e-12);
  CHECK(reference_to_csv(back) == csv);
}

TEST_CASE("reference set is seeded and jittered") {
  const Track f8 = generate_track("figure8");
  ReferenceSetOptions opts;
  opts.count = 3;
  const auto a = generate_reference_set(f8, opts, 5);
  const auto b = generate_reference_set(f8, opts, 5);
  const auto c = generate_reference_set(f8, opts, 6);
  REQUIRE(a.size() == 3);
  CHECK(reference_to_csv(a[1]) == reference_to_csv(b[1]));
  CHECK(reference_to_csv(a[1]) != reference_to_csv(c[1]));
  for (const auto& r : a) {
    const double speed = path_length(r) / r.duration();
    CHECK(speed >= 4.0 * 0.99);
    CHECK(speed <= 6.0 * 1.01);
  }
}

TEST_CASE("hover reference gives hover command at a stationary optimum") {
  MpcConfig cfg;
  QuadParams params;
  std::vector<RefSample> samples;
  for (int i = 0; i < 100; ++i) {
    RefSample r;
    r.t = i * 0.02;
    r.p = {0, 0, 2};
    samples.push_back(r);
  }
  const ReferenceTrajectory ref(samples, false, 99 * 0.02);
  QuadState s;
  s.p = {0, 0, 2};
  const auto window = reference_window(ref, 0.0, cfg);
  const MpcSolution sol = solve_mpc(s, window, cfg, params);
  CHECK(sol.first().c == doctest::Approx(9.81).epsilon(1e-3 / 9.81));
  CHECK(sol.first().rates.norm() < 1e-3);
  // Cost gradient w.r.t. the first command vanishes.
  for (int k = 0; k < 4; ++k) {
    auto up = sol.controls, dn = sol.controls;
    const double h = 1e-4;
    Eigen::Vector4d a = up[0].as_vector(), b = dn[0].as_vector();
    a[k] += h;
    b[k] -= h;
    up[0] = Command::from_vector(a);
    dn[0] = Command::from_vector(b);
    const double grad = (mpc_cost(s, up, window, cfg, params) - mpc_cost(s, dn, window, cfg, params)) / (2 * h);
    CHECK(std::abs(grad) < 1e-3);
  }
}

TEST_CASE("lateral displacement steers back with the correct roll sign") {
  MpcConfig cfg;
  QuadParams params;
  const ReferenceTrajectory ref = straight_line(2.0, 5.0);
  QuadState s = initial_state(ref);
  s.p.y() += 0.5;
  const MpcSolution sol = solve_mpc(s, reference_window(ref, 0.0, cfg), cfg, params);
  // Positive roll rate tilts thrust toward -y.
  CHECK(sol.first().rates.x() > 0.0);
  s.p.y() -= 1.0;
  CHECK(solve_mpc(s, reference_window(ref, 0.0, cfg), cfg, params).first().rates.x() < 0.0);
}

TEST_CASE("accepted iteration costs are non-increasing") {
  MpcConfig cfg;
  QuadParams params;
  const ReferenceTrajectory ref = generate_reference(generate_track("figure8"), {5.0});
  QuadState s = initial_state(ref);
  s.p += Eigen::Vector3d(0.3, -0.4, 0.2);
  s.v += Eigen::Vector3d(1.0, 0.5, 0.0);
  const MpcSolution sol = solve_mpc(s, reference_window(ref, 0.0, cfg), cfg, params);
  REQUIRE(sol.cost_trace.size() >= 2);
  for (std::size_t i = 1; i < sol.cost_trace.size(); ++i) CHECK(sol.cost_trace[i] <= sol.cost_trace[i - 1]);
  CHECK(sol.cost() < sol.cost_trace.front());
  for (const auto& u : sol.controls) {
    CHECK(u.c >= 0.0);
    CHECK(u.c <= 21.7);
    CHECK(u.rates.cwiseAbs().maxCoeff() <= 6.0);
  }
}

TEST_CASE("non-finite state falls back to hover") {
  MpcConfig cfg;
  QuadParams params;
  const ReferenceTrajectory ref = straight_line(2.0, 3.0);
  QuadState s = initial_state(ref);
  s.v.x() = 1e300;
  const MpcSolution sol = solve_mpc(s, reference_window(ref, 0.0, cfg), cfg, params);
  CHECK(sol.fallback);
  CHECK(sol.first().c == doctest::Approx(9.81));
}

TEST_CASE("closed-loop expert completes the figure8") {
  const Track f8 = generate_track("figure8");
  const ReferenceTrajectory ref = generate_reference(f8, {5.0});
  MpcExpert expert({}, {});
  const RolloutLog log = run_rollout(expert_controller(expert), f8, ref, {}, 1);
  CHECK(log.completed());
  CHECK(log.gates_passed == 10);
  double max_err = 0.0;
  int warm_iters_max = 0;
  for (const auto& tick : log.ticks) {
    max_err = std::max(max_err, (tick.state.p - ref.at(tick.state.t).p).norm());
  }
  CHECK(max_err < 0.5);
  CHECK(expert.fallback_count() == 0);

  // Warm-started solves on the trajectory converge quickly.
  expert.reset();
  int over = 0, total = 0;
  for (const auto& tick : log.ticks) {
    expert.command(tick.state, ref);
    warm_iters_max = std::max(warm_iters_max, expert.last().iterations);
    if (total > 0 && expert.last().iterations > 5) ++over;
    ++total;
  }
  CHECK(over == 0);

  MpcExpert again({}, {});
  const RolloutLog log2 = run_rollout(expert_controller(again), f8, ref, {}, 1);
  CHECK(rollout_to_csv(log) == rollout_to_csv(log2));
}
