#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gazeracer/mpc/mpc.hpp"
#include "gazeracer/nn/weights.hpp"
#include "gazeracer/policy/policy.hpp"
#include "oracles.hpp"

using namespace gazeracer;
using namespace gazeracer::policy;

namespace {

PolicyConfig small_config(Modality m) {
  PolicyConfig c;
  c.modality = m;
  c.ref_len = 5;
  c.state_len = 6;
  c.visual_len = 4;
  c.attention_features = 6;
  c.image_width = 16;
  c.image_height = 16;
  c.temporal_channels = {5, 4, 3};
  c.head = {8, 6, 5};
  c.pointnet_units = 4;
  c.image_channels = {2, 3, 2, 2};
  return c;
}

ObservationBundle random_bundle(const PolicyConfig& c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ObservationBundle o;
  auto fill = [&](std::vector<float>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) x = static_cast<float>(uniform(rng, lo, hi));
  };
  fill(o.reference, static_cast<std::size_t>(c.ref_len) * kSampleDims);
  fill(o.state, static_cast<std::size_t>(c.state_len) * kSampleDims);
  fill(o.visual, static_cast<std::size_t>(c.visual_len) * c.visual_sample_size());
  return o;
}

nn::Param<float>* find(Policy& p, const std::string& name) {
  for (auto* q : p.params()) {
    if (q->name == name) return q;
  }
  FAIL("no parameter " << name);
  return nullptr;
}

}  // namespace

TEST_CASE("visual sample sizes") {
  PolicyConfig c;
  CHECK(c.visual_sample_size() == 48);
  c.modality = Modality::Tracks;
  CHECK(c.visual_sample_size() == 200);
  c.modality = Modality::Image;
  CHECK(c.visual_sample_size() == 3 * 128 * 96);
  Policy image(c, 1);
  // Four stride-2 convs take 128x96 to 8x6 with 32 channels.
  CHECK(find(image, "visual.conv1.weight")->value.dim(1) == 1536);
  CHECK(modality_from_string("tracks") == Modality::Tracks);
  CHECK_THROWS_AS(modality_from_string("lidar"), std::invalid_argument);
  CHECK(image.tag() == "policy-image");
}

TEST_CASE("forward is deterministic and finite on bounded inputs") {
  for (Modality m : {Modality::Attention, Modality::Tracks, Modality::Image}) {
    CAPTURE(to_string(m));
    const PolicyConfig c = small_config(m);
    Policy p(c, 3);
    Rng rng(4);
    const ObservationBundle o = random_bundle(c, rng);
    CHECK(p.predict(o) == p.predict(o));
    for (int i = 0; i < 50; ++i) CHECK(p.predict(random_bundle(c, rng, -10, 10)).allFinite());
  }
  PolicyConfig full;
  Policy p(full, 3);
  Rng rng(5);
  for (int i = 0; i < 10; ++i) CHECK(p.predict(random_bundle(full, rng, -10, 10)).allFinite());
}

TEST_CASE("tracks branch is invariant to slot order") {
  const PolicyConfig c = small_config(Modality::Tracks);
  Policy p(c, 7);
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const ObservationBundle o = random_bundle(c, rng);
    std::vector<int> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 39; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
    ObservationBundle q = o;
    for (int l = 0; l < c.visual_len; ++l) {
      for (int s = 0; s < 40; ++s) {
        for (int d = 0; d < 5; ++d) q.visual[l * 200 + s * 5 + d] = o.visual[l * 200 + perm[s] * 5 + d];
      }
    }
    CHECK(p.predict(o) == p.predict(q));
  }
}

TEST_CASE("shape mismatches name the branch") {
  const PolicyConfig c = small_config(Modality::Attention);
  Policy p(c, 1);
  Rng rng(2);
  ObservationBundle o = random_bundle(c, rng);
  o.visual.pop_back();
  CHECK_THROWS_WITH_AS(p.predict(o), doctest::Contains("visual branch"), std::invalid_argument);
  o = random_bundle(c, rng);
  o.reference.push_back(0);
  CHECK_THROWS_WITH_AS(p.predict(o), doctest::Contains("reference branch"), std::invalid_argument);
  o = random_bundle(c, rng);
  o.state.clear();
  CHECK_THROWS_WITH_AS(p.predict(o), doctest::Contains("state branch"), std::invalid_argument);

  o = random_bundle(c, rng);
  PolicyBatch<float> b = make_batch<float>(c, std::vector<const ObservationBundle*>{&o});
  b.visual = nn::Tensor<float>({1, 7, c.visual_len});
  CHECK_THROWS_WITH_AS(p.forward(b, false), doctest::Contains("visual branch"), std::invalid_argument);
}

TEST_CASE("act clamps and falls back to hover") {
  const PolicyConfig c = small_config(Modality::Attention);
  Policy p(c, 1);
  Rng rng(2);
  const ObservationBundle o = random_bundle(c, rng);
  const QuadParams params;
  auto* w = find(p, "head.out.weight");
  auto* b = find(p, "head.out.bias");
  w->value.zero();
  b->value.data = {static_cast<float>((30.0 - 9.81) / 9.81), 0.5f, -2.0f, 0.0f};
  const Command raw = forward_policy(p, o, {});
  CHECK(raw.c == doctest::Approx(30.0).epsilon(1e-6));
  const ActResult a = act(p, o, params);
  CHECK_FALSE(a.fallback);
  CHECK(a.command.c == doctest::Approx(21.7));
  CHECK(a.command.rates.x() == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(a.command.rates.y() == doctest::Approx(-6.0));

  b->value[1] = std::nanf("");
  const ActResult nan = act(p, o, params);
  CHECK(nan.fallback);
  CHECK(nan.command.c == doctest::Approx(params.g));
  CHECK(nan.command.rates.norm() == 0.0);

  const CommandScale s;
  const Command u{12.0, {1.0, -2.0, 3.0}};
  const Command back = s.denormalize(s.normalize(u));
  CHECK(back.c == doctest::Approx(12.0));
  CHECK((back.rates - u.rates).norm() < 1e-12);
}

TEST_CASE("weights round trip with modality tag") {
  const PolicyConfig c = small_config(Modality::Tracks);
  Policy a(c, 1), b(c, 2);
  Rng rng(3);
  const ObservationBundle o = random_bundle(c, rng);
  CHECK(a.predict(o) != b.predict(o));
  b.load(a.save());
  CHECK(a.predict(o) == b.predict(o));
  CHECK(nn::weights_tag(a.save()) == "policy-tracks");
  Policy att(small_config(Modality::Attention), 1);
  CHECK_THROWS_AS(att.load(a.save()), std::invalid_argument);
}

TEST_CASE("full policy gradient in 64-bit mode") {
  for (Modality m : {Modality::Attention, Modality::Tracks, Modality::Image}) {
    CAPTURE(to_string(m));
    PolicyConfig c = small_config(m);
    if (m == Modality::Image) c.visual_len = 4;
    PolicyModel<double> net(c, 5);
    Rng rng(6);
    std::vector<ObservationBundle> obs{random_bundle(c, rng), random_bundle(c, rng)};
    std::vector<const ObservationBundle*> ptrs{&obs[0], &obs[1]};
    PolicyBatch<double> batch = make_batch<double>(c, ptrs);
    nn::Tensor<double> target({2, 4});
    for (auto& v : target.data) v = uniform(rng, -1, 1);
    const auto params = net.params();
    for (auto* p : params) {
      if (p->name.ends_with(".bias")) {
        for (auto& v : p->value.data) v = uniform(rng, -0.2, 0.2);
      }
    }
    auto loss = [&]() { return nn::mse_loss<double>(net.forward(batch, true), target, nullptr); };
    nn::zero_grad(params);
    nn::Tensor<double> g;
    nn::mse_loss(net.forward(batch, true), target, &g);
    const PolicyBatch<double> gin = net.backward(g);

    std::vector<std::pair<std::string, std::vector<double>*>> values{
        {"reference", &batch.reference.data}, {"state", &batch.state.data}, {"visual", &batch.visual.data}};
    std::vector<std::vector<double>> analytic{gin.reference.data, gin.state.data, gin.visual.data};
    for (auto* p : params) {
      values.emplace_back(p->name, &p->value.data);
      analytic.push_back(p->grad.data);
    }
    for (const auto& e : oracle::finite_difference(values, analytic, loss, 1e-6)) {
      CAPTURE(e.name);
      CHECK(e.rel < 1e-4);
    }
  }
}

TEST_CASE("observation windows pad at tick zero and hold frames") {
  const Track track = generate_track("oval");
  const ReferenceTrajectory ref = generate_reference(track, {});
  PolicyConfig c;
  c.modality = Modality::Image;
  CameraModel cam;
  cam.width = 32;
  cam.height = 24;
  c.image_width = 32;
  c.image_height = 24;
  ImageFrontEnd front(32, 24);
  ObservationAssembler assembler(c, front, cam);

  std::vector<ObservationBundle> seen;
  std::vector<bool> fresh;
  Controller ctrl = [&](const TickContext& ctx) {
    seen.push_back(assembler.assemble(ctx));
    fresh.push_back(ctx.new_frame);
    return ControlOutput{ctx.rates->params.hover(), std::nullopt, CommandSource::Policy};
  };
  RateConfig rates;
  rates.timeout_factor = 0.2;
  run_rollout(ctrl, track, ref, rates, 1);
  REQUIRE(seen.size() > 40);

  const ObservationBundle& first = seen[0];
  for (int k = 1; k < c.ref_len; ++k) {
    CHECK(std::equal(first.reference.begin(), first.reference.begin() + kSampleDims,
                     first.reference.begin() + k * kSampleDims));
  }
  for (int k = 1; k < c.state_len; ++k) {
    CHECK(std::equal(first.state.begin(), first.state.begin() + kSampleDims, first.state.begin() + k * kSampleDims));
  }
  const std::size_t f = c.visual_sample_size();
  for (int k = 1; k < c.visual_len; ++k) {
    CHECK(std::equal(first.visual.begin(), first.visual.begin() + f, first.visual.begin() + k * f));
  }
  // The newest state sample is the current state; the window slides by two
  // physics steps per control tick.
  const ObservationBundle& late = seen[40];
  const ObservationBundle& next = seen[41];
  CHECK(std::equal(next.state.begin(), next.state.end() - 2 * kSampleDims, late.state.begin() + 2 * kSampleDims));
  // Visual features are held between vision ticks.
  for (std::size_t i = 30; i < 41; ++i) {
    const bool same = std::equal(seen[i + 1].visual.begin(), seen[i + 1].visual.end(), seen[i].visual.begin());
    if (!fresh[i + 1]) CHECK(same);
  }
}

TEST_CASE("tracks front-end feeds forty slots") {
  const Track track = generate_track("figure8");
  const ReferenceTrajectory ref = generate_reference(track, {});
  PolicyConfig c;
  c.modality = Modality::Tracks;
  CameraModel cam;
  TrackFrontEnd front(tracks::TrackerConfig::for_resolution(cam.width), 3, 1.0 / 25);
  ObservationAssembler assembler(c, front, cam);
  Policy p(c, 1);
  MpcExpert expert({}, {});
  int ticks = 0;
  Controller ctrl = [&](const TickContext& ctx) {
    const ObservationBundle o = assembler.assemble(ctx);
    CHECK(o.visual.size() == 5u * 40u * 5u);
    CHECK(o.finite());
    CHECK(std::isfinite(act(p, o, ctx.rates->params).command.c));
    ++ticks;
    const Command u = expert.command(ctx.state, *ctx.reference);
    return ControlOutput{u, u, CommandSource::Expert};
  };
  RateConfig rates;
  rates.timeout_factor = 0.1;
  run_rollout(ctrl, track, ref, rates, 1);
  CHECK(ticks > 20);

  ImageFrontEnd wrong(64, 48);
  CHECK_THROWS_AS(ObservationAssembler(c, wrong, cam), std::invalid_argument);
}
