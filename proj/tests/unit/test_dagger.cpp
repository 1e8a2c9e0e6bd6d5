#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "gazeracer/dagger/dagger.hpp"

using namespace gazeracer;
using namespace gazeracer::dagger;

namespace {

constexpr int kW = 32, kH = 24;

policy::PolicyConfig image_config() {
  policy::PolicyConfig c;
  c.modality = policy::Modality::Image;
  c.image_width = kW;
  c.image_height = kH;
  return c;
}

CameraModel small_camera() {
  CameraModel cam;
  cam.width = kW;
  cam.height = kH;
  return cam;
}

}  // namespace

TEST_CASE("schedule totals and ramps") {
  const DaggerSchedule s;
  CHECK(s.total_rollouts() == 150);
  CHECK(s.total_epochs() == 100);
  CHECK(s.noise_probability(0) == doctest::Approx(0.05));
  CHECK(s.noise_probability(2) == doctest::Approx(0.15));
  CHECK(s.noise_probability(4) == doctest::Approx(0.25));
  const policy::CommandScale scale;
  CHECK(s.tau(0, scale)[0] == doctest::Approx(2.0 / 9.81));
  CHECK(s.tau(0, scale)[1] == doctest::Approx(0.5 / 6.0));
  CHECK(s.tau(2, scale)[3] == doctest::Approx(0.5 * 2.25 / 6.0));

  const DaggerSchedule d = DaggerSchedule::desk();
  CHECK(d.total_rollouts() == 18);
  CHECK(d.total_epochs() == 30);
  DaggerSchedule bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("degenerate schedules") {
  const Track track = generate_track("oval");
  const ReferenceTrajectory ref = generate_reference(track, {});
  const policy::PolicyConfig pc = image_config();
  policy::Policy model(pc, 1);
  MpcExpert expert({}, {});
  policy::ImageFrontEnd front(kW, kH);
  const RateConfig rates;

  SUBCASE("zero noise and threshold is behavior cloning") {
    AggregatedDataset data(pc);
    const CollectResult r = collect_rollout(model, expert, front, small_camera(), track, ref, rates, {}, 3, data);
    REQUIRE(r.log.completed());
    CHECK(r.policy_ticks == 0);
    CHECK(r.noisy_ticks == 0);
    CHECK(data.size() == r.log.ticks.size());
    const policy::CommandScale scale;
    // Labels replay exactly through a fresh expert on the logged states.
    MpcExpert replay({}, {});
    for (std::size_t k = 0; k < r.log.ticks.size(); ++k) {
      const TickRecord& t = r.log.ticks[k];
      REQUIRE(t.expert.has_value());
      CHECK(t.applied.as_vector() == t.expert->as_vector());
      CHECK(data.label(k) == scale.normalize(*t.expert));
      CHECK(replay.command(t.state, ref).as_vector() == t.expert->as_vector());
    }
    const policy::ObservationBundle b = data.bundle(0);
    CHECK(b.visual.size() == static_cast<std::size_t>(pc.visual_len) * 3 * kW * kH);
    // Padding at tick zero: every visual slot holds the first frame.
    CHECK(std::equal(b.visual.begin(), b.visual.begin() + 3 * kW * kH, b.visual.end() - 3 * kW * kH));
  }

  SUBCASE("unbounded threshold applies the policy everywhere") {
    AggregatedDataset data(pc);
    CollectConfig cc;
    cc.tau = Eigen::Vector4d::Constant(1e9);
    cc.noise_probability = 1.0;
    const CollectResult r = collect_rollout(model, expert, front, small_camera(), track, ref, rates, cc, 3, data);
    CHECK(r.expert_ticks == 0);
    CHECK(r.policy_ticks == r.log.ticks.size());
    CHECK(r.expert_fraction() == 0.0);
  }

  SUBCASE("untrained policy in the first iteration is mostly overridden") {
    AggregatedDataset data(pc);
    const DaggerSchedule s = DaggerSchedule::desk();
    CollectConfig cc;
    cc.tau = s.tau(0, {});
    cc.noise_probability = s.noise_probability(0);
    const CollectResult r = collect_rollout(model, expert, front, small_camera(), track, ref, rates, cc, 3, data);
    MESSAGE("expert fraction " << r.expert_fraction() << ", noisy ticks " << r.noisy_ticks);
    CHECK(r.expert_fraction() >= 0.9);
    CHECK(r.noisy_ticks > 0);
  }
}

TEST_CASE("training overfits a small dataset deterministically") {
  policy::PolicyConfig pc;
  AggregatedDataset data(pc);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<float> ref(pc.ref_len * policy::kSampleDims), st(pc.state_len * policy::kSampleDims);
    for (auto& v : ref) v = static_cast<float>(uniform(rng, -1, 1));
    for (auto& v : st) v = static_cast<float>(uniform(rng, -1, 1));
    std::vector<float> vis(pc.visual_sample_size());
    for (auto& v : vis) v = static_cast<float>(uniform(rng, 0, 1));
    const std::size_t id = data.add_visual(vis);
    Eigen::Vector4d y;
    for (int d = 0; d < 4; ++d) y[d] = uniform(rng, -0.5, 0.5);
    data.add(ref, st, std::vector<std::size_t>(pc.visual_len, id), y, 0);
  }
  policy::Policy a(pc, 2), b(pc, 2);
  const TrainConfig cfg{200, 64, 1e-3};
  const auto la = train_iteration(a, data, cfg, 9);
  MESSAGE("final training MSE " << la.back());
  CHECK(la.back() < 1e-3);
  CHECK(la.back() < la.front());
  const auto lb = train_iteration(b, data, {5, 64, 1e-3}, 9);
  CHECK(std::equal(lb.begin(), lb.end(), la.begin()));

  AggregatedDataset empty(pc);
  CHECK_THROWS_AS(train_iteration(a, empty, cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(data.add({}, {}, {}, Eigen::Vector4d::Zero(), 0), std::invalid_argument);
}

TEST_CASE("run_dagger bookkeeping") {
  const Track track = generate_track("oval");
  std::vector<ReferenceTrajectory> refs = generate_reference_set(track, {.count = 3}, 2);
  const policy::PolicyConfig pc = image_config();
  policy::Policy model(pc, 1);
  DaggerSetup setup;
  setup.camera = small_camera();
  setup.schedule.iterations = 2;
  setup.schedule.rollouts = 2;
  setup.schedule.epochs = 1;
  setup.rates.timeout_factor = 0.3;
  const auto fe = policy::front_end_factory(pc, nullptr, setup.camera, setup.rates.vision_hz);
  std::vector<std::string> lines;
  const DaggerResult r = run_dagger(
      model, fe, track, refs, setup, 7, [&](const RolloutRecord& rec) { lines.push_back(rec.to_json()); });
  REQUIRE(r.rollouts.size() == 4);
  REQUIRE(r.iterations.size() == 2);
  const std::vector<int> expected_refs{0, 1, 2, 0};
  std::size_t last = 0;
  for (std::size_t i = 0; i < r.rollouts.size(); ++i) {
    CHECK(r.rollouts[i].reference == expected_refs[i]);
    CHECK(r.rollouts[i].dataset_size > last);
    last = r.rollouts[i].dataset_size;
    const auto j = nlohmann::json::parse(lines[i]);
    CHECK(j.at("dataset_size").get<std::size_t>() == last);
    CHECK(j.contains("expert_fraction"));
  }
  CHECK(r.dataset_size == last);
  for (const auto& it : r.iterations) CHECK(it.losses.size() == 1);

  policy::Policy reloaded(pc, 99);
  reloaded.load(r.iterations.back().weights);
  CHECK(reloaded.save() == r.iterations.back().weights);
  CHECK(reloaded.save() == model.save());
}
