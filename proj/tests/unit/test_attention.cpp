#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "gazeracer/attention/dataset.hpp"
#include "gazeracer/attention/net.hpp"
#include "gazeracer/nn/weights.hpp"
#include "oracles.hpp"

using namespace gazeracer;
using namespace gazeracer::attention;

namespace {

Frame gray_frame(int w, int h, std::uint8_t v = 128) {
  Frame f(w, h);
  std::fill(f.pixels.begin(), f.pixels.end(), v);
  return f;
}

Frame noise_frame(int w, int h, std::uint64_t seed) {
  Frame f(w, h);
  Rng rng(seed);
  for (auto& v : f.pixels) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return f;
}

// Frames with a bright blob and a map peaked on it.
AttentionDataset blob_dataset(int n, int w, int h, int laps, std::uint64_t seed) {
  AttentionDataset ds;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Frame f = gray_frame(w, h, 60);
    const int cx = static_cast<int>(uniform_index(rng, w - 8)) + 4;
    const int cy = static_cast<int>(uniform_index(rng, h - 8)) + 4;
    for (int y = cy - 2; y <= cy + 2; ++y) {
      for (int x = cx - 2; x <= cx + 2; ++x) std::fill(f.at(x, y), f.at(x, y) + 3, std::uint8_t{250});
    }
    FixationWindow win;
    win.fixations = {Eigen::Vector2d(cx, cy)};
    win.variance = {4.0, 4.0};
    ds.frames.push_back(f);
    ds.maps.push_back(build_attention_map(win, w, h));
    ds.lap.push_back(i * laps / n);
  }
  return ds;
}

}  // namespace

TEST_CASE("encoder feature lengths") {
  CHECK(AttentionNetConfig{128, 96, 16}.feature_length() == 48);
  CHECK(AttentionNetConfig{400, 300, 16}.feature_length() == 475);

  AttentionNet small({128, 96, 4});
  CHECK(small.encoder_features(gray_frame(128, 96)).size() == 48);
  AttentionNet large({400, 300, 4});
  const auto f = large.encoder_features(gray_frame(400, 300));
  CHECK(f.size() == 475);
  const AttentionMap m = large.predict(gray_frame(400, 300));
  CHECK(m.width == 400);
  CHECK(m.height == 300);
}

TEST_CASE("prediction is a distribution") {
  AttentionNet net({128, 96, 16}, 3);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const AttentionMap m = net.predict(noise_frame(128, 96, s));
    CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(*std::min_element(m.values.begin(), m.values.end()) >= 0.0);
  }
  const AttentionMap u = net.predict(gray_frame(128, 96));
  const auto [lo, hi] = std::minmax_element(u.values.begin(), u.values.end());
  CHECK(*hi / *lo < 10.0);
}

TEST_CASE("input size is checked") {
  AttentionNet net({128, 96, 4});
  CHECK_THROWS_AS(net.predict(gray_frame(64, 48)), std::invalid_argument);
  CHECK_THROWS_AS(AttentionNet({8, 8, 4}), std::invalid_argument);
}

TEST_CASE("weights round trip") {
  AttentionNet a({64, 48, 4}, 1), b({64, 48, 4}, 2);
  const Frame f = noise_frame(64, 48, 9);
  CHECK(a.predict(f).values != b.predict(f).values);
  b.load(a.save());
  CHECK(a.predict(f).values == b.predict(f).values);
  CHECK(nn::weights_tag(a.save()) == "attention-net");
  AttentionNet c({64, 48, 8});
  CHECK_THROWS_AS(c.load(a.save()), std::invalid_argument);
}

TEST_CASE("full network gradient in 64-bit mode") {
  AttentionModel<double> net({32, 32, 2}, 5);
  Rng rng(11);
  nn::Tensor<double> x({2, 3, 32, 32});
  for (auto& v : x.data) v = uniform01(rng);
  const AttentionDataset ds = blob_dataset(2, 32, 32, 1, 4);
  nn::Tensor<double> target({2, 1, 32, 32});
  for (int n = 0; n < 2; ++n) std::copy(ds.maps[n].values.begin(), ds.maps[n].values.end(), target.ptr() + n * 1024);

  // Nonzero biases keep pre-activations off the ReLU kink where whole
  // channels are inactive.
  const auto params = net.params();
  for (auto* p : params) {
    if (p->name.ends_with(".bias") || p->name.ends_with(".beta")) {
      for (auto& v : p->value.data) v = uniform(rng, -0.2, 0.2);
    }
  }
  // Batch statistics make every sample's output depend on the whole batch.
  auto loss = [&]() { return nn::kl_loss_from_logits<double>(net.logits(x, true), target, nullptr); };
  nn::zero_grad(params);
  nn::Tensor<double> g;
  nn::kl_loss_from_logits(net.logits(x, true), target, &g);
  const auto gx = net.backward(g);

  std::vector<std::pair<std::string, std::vector<double>*>> values{{"input", &x.data}};
  std::vector<std::vector<double>> analytic{gx.data};
  for (auto* p : params) {
    if (!p->trainable) continue;
    values.emplace_back(p->name, &p->value.data);
    analytic.push_back(p->grad.data);
  }
  for (const auto& e : oracle::finite_difference(values, analytic, loss, 1e-6)) {
    CAPTURE(e.name);
    CHECK(e.rel < 1e-4);
  }
}

TEST_CASE("augment") {
  const Frame f = noise_frame(64, 48, 2);
  CHECK(augment(f, 5, AugmentConfig::none()).pixels == f.pixels);
  CHECK(augment(f, 5).pixels == augment(f, 5).pixels);

  int changed = 0;
  for (std::uint64_t s = 0; s < 8; ++s) changed += augment(f, s).pixels != f.pixels;
  CHECK(changed >= 6);

  AugmentConfig erase_only = AugmentConfig::none();
  erase_only.erase = 1.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Frame e = augment(f, s, erase_only);
    int x0 = 64, x1 = -1, y0 = 48, y1 = -1, diff = 0;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (!std::equal(e.at(x, y), e.at(x, y) + 3, f.at(x, y))) {
          ++diff;
          CHECK(e.at(x, y)[0] == 128);
          x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
      }
    }
    const int area = (x1 - x0 + 1) * (y1 - y0 + 1);
    CHECK(area >= 0.04 * 64 * 48);
    CHECK(area <= 0.21 * 64 * 48);
    CHECK(diff >= area * 0.95);  // pixels already gray are unchanged
  }
}

TEST_CASE("split by lap") {
  const AttentionDataset ds = blob_dataset(50, 32, 32, 5, 1);
  CHECK(ds.lap_starts() == std::vector<std::size_t>{0, 10, 20, 30, 40});
  AttentionDataset tr, va;
  split_dataset(ds, 0.2, tr, va);
  CHECK(tr.size() == 40);
  CHECK(va.size() == 10);
  CHECK(va.lap.front() == 4);
  AttentionDataset one = blob_dataset(5, 32, 32, 1, 1);
  CHECK_THROWS_AS(split_dataset(one, 0.2, tr, va), std::invalid_argument);
}

TEST_CASE("training is deterministic and learns a blob") {
  const AttentionDataset ds = blob_dataset(32, 32, 32, 1, 8);
  TrainAttentionConfig cfg;
  cfg.epochs = 30;
  cfg.batch = 8;
  cfg.lr = 3e-3;
  cfg.augment = false;
  AttentionNet a({32, 32, 8}, 1), b({32, 32, 8}, 1);
  const auto ra = train_attention(a, ds, &ds, cfg, 4);
  const auto rb = train_attention(b, ds, &ds, cfg, 4);
  CHECK(ra.final_loss == rb.final_loss);
  CHECK(a.save() == b.save());
  CHECK(ra.epochs.back().train_kl < 0.5 * ra.epochs.front().train_kl);
  CHECK(ra.epochs.back().val.kl_mean < summarize_metrics(ds.maps, std::vector<AttentionMap>(
                                                                     ds.size(), baseline_mean_map(ds.maps)))
                                           .kl_mean);
}

TEST_CASE("non-finite loss names the batch") {
  const AttentionDataset ds = blob_dataset(8, 32, 32, 1, 8);
  AttentionNet net({32, 32, 4});
  for (auto* p : net.params()) {
    if (p->name == "decoder.score.bias") p->value[0] = std::nanf("");
  }
  TrainAttentionConfig cfg;
  cfg.batch = 4;
  cfg.augment = false;
  try {
    train_attention(net, ds, nullptr, cfg, 1);
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("epoch 1, batch 0") != std::string::npos);
  }
}

TEST_CASE("generated dataset round trip") {
  const Track track = generate_track("oval");
  ReferenceSetOptions ro;
  ro.count = 2;
  const auto refs = generate_reference_set(track, ro, 3);
  DataGenConfig cfg;
  cfg.frames = 40;
  cfg.width = 64;
  cfg.height = 48;
  const GeneratedData data = generate_attention_data(track, refs, cfg, {}, {}, 9);
  REQUIRE(data.dataset.size() == 40);
  CHECK(data.dataset.lap_starts().size() == 2);
  CHECK(data.gaze.size() > 40);
  for (const auto& m : data.dataset.maps) CHECK(m.sum() == doctest::Approx(1.0));

  const auto dir = std::filesystem::temp_directory_path() / "gazeracer_test_dataset";
  std::filesystem::remove_all(dir);
  save_generated(data, dir.string());
  const AttentionDataset back = load_dataset(dir.string());
  CHECK(back.lap == data.dataset.lap);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.frames[i].pixels == data.dataset.frames[i].pixels);
    for (std::size_t j = 0; j < back.maps[i].values.size(); j += 97) {
      CHECK(back.maps[i].values[j] == doctest::Approx(data.dataset.maps[i].values[j]).epsilon(1e-6));
    }
  }
  std::filesystem::remove_all(dir);
}
