// Acceptance runner: one PASS/FAIL line per criterion A1-A9.
//
//   acceptance --cli <gazeracer binary> --work <dir> [--only A1,A5] [--known-fail A3]
//              [--attention-weights <file>]
//
// Exit status is 0 when every selected criterion passes, or fails only among
// the --known-fail list (those lines still read FAIL).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gazeracer/attention/dataset.hpp"
#include "gazeracer/config/config.hpp"
#include "gazeracer/dagger/dagger.hpp"
#include "gazeracer/eval/eval.hpp"
#include "gazeracer/gaze/attention_map.hpp"
#include "gazeracer/nn/layers.hpp"
#include "gazeracer/tracks/features.hpp"
#include "gazeracer/util/io.hpp"
#include "oracles.hpp"

using namespace gazeracer;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kA1RelTol = 1e-9;
constexpr double kA1Seconds = 10.0;
constexpr double kA2KlExpected = 0.1438;
constexpr double kA2KlTol = 1e-6;  // against the closed form; the rounded value is checked at 5e-5
constexpr double kA3Seconds = 20 * 60.0;
constexpr double kA3OverfitPx = 10.0;
constexpr double kA3OverfitFraction = 0.9;
constexpr int kA3OverfitEpochs = 100;
constexpr double kA4RelTol = 1e-4;
constexpr double kA5MaxError = 0.5;
constexpr double kA5Seconds = 5 * 60.0;
constexpr int kA6MinGates = 5;
constexpr int kA6EvalRuns = 10;
constexpr double kA6MinFraction = 0.7;
constexpr double kA6Seconds = 60 * 60.0;
constexpr int kA6ShadowRefs = 3;
constexpr double kA8BudgetMs = 40.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<std::string> notes;  // printed indented below the result line
};

struct Context {
  std::string cli;
  fs::path work;
  config::Config cfg;            // defaults
  std::string attention_weights;  // set by A3 when it runs
};

// A1 ---------------------------------------------------------------------------

AttentionMap brute_force_map(const FixationWindow& win, int w, int h) {
  AttentionMap m(w, h);
  const double sx = win.variance.x(), sy = win.variance.y();
  const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(sx * sy));
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = 0.0;
      for (const auto& f : win.fixations) {
        const double dx = x - f.x(), dy = y - f.y();
        best = std::max(best, norm * std::exp(-0.5 * (dx * dx / sx + dy * dy / sy)));
      }
      m.at(x, y) = best;
      total += best;
    }
  }
  for (double& v : m.values) v /= total;
  return m;
}

Outcome a1(Context&) {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    FixationWindow win;
    const int n = 1 + static_cast<int>(uniform_index(rng, 25));
    for (int i = 0; i < n; ++i) win.fixations.emplace_back(uniform(rng, 0, 127), uniform(rng, 0, 95));
    win.variance = {uniform(rng, 2, 30), uniform(rng, 2, 30)};
    const AttentionMap got = build_attention_map(win, 128, 96);
    const AttentionMap want = brute_force_map(win, 128, 96);
    for (std::size_t i = 0; i < got.values.size(); ++i) {
      worst = std::max(worst, std::abs(got.values[i] - want.values[i]) / std::max(want.values[i], 1e-300));
    }
  }
  const double s = seconds_since(t0);
  return {worst < kA1RelTol && s < kA1Seconds, fmt("100 windows at 128x96, max rel err %.2e, %.2f s", worst, s)};
}

// A2 ---------------------------------------------------------------------------

Outcome a2(Context&) {
  auto two = [](double a, double b) {
    AttentionMap m(2, 1);
    m.values = {a, b};
    return m;
  };
  const AttentionMap a = two(0.5, 0.5);
  const double self = kl_divergence(a, a);
  const double kl = kl_divergence(a, two(0.25, 0.75));
  const double closed = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  const bool inf = std::isinf(kl_divergence(a, two(0.0, 1.0)));
  Rng rng(7);
  AttentionMap m(40, 30);
  for (double& v : m.values) v = uniform01(rng);
  AttentionMap affine = m;
  for (double& v : affine.values) v = 3.5 * v + 0.2;
  const double cc_self = pearson_cc(m, m).value_or(0.0);
  const double cc_affine = pearson_cc(m, affine).value_or(0.0);
  const bool pass = self == 0.0 && std::abs(kl - closed) < kA2KlTol && std::abs(kl - kA2KlExpected) < 5e-5 && inf &&
                    std::abs(cc_self - 1.0) < 1e-12 && std::abs(cc_affine - 1.0) < 1e-12;
  return {pass, fmt("KL(A||A)=%g, KL=%.7f, KL mismatch=%s, CC(A,A)=%.12f, CC affine=%.12f", self, kl,
                    inf ? "inf" : "finite", cc_self, cc_affine)};
}

// A3 ---------------------------------------------------------------------------

Outcome a3(Context& ctx) {
  const auto t0 = Clock::now();
  const config::Config& cfg = ctx.cfg;
  const Track track = generate_track(cfg.data_track);
  attention::DataGenConfig d = cfg.data;
  d.width = cfg.camera.width;
  d.height = cfg.camera.height;
  d.camera = cfg.camera;
  const auto data =
      attention::generate_attention_data(track, cfg.reference_split(track, "train"), d, cfg.mpc, cfg.rates, 7);
  attention::AttentionDataset train, val;
  attention::split_dataset(data.dataset, cfg.attention.val_fraction, train, val);
  attention::AttentionNet net(cfg.attention_net(), 7);
  attention::train_attention(net, train, &val, cfg.attention.train, 7);
  const std::string weights = (ctx.work / "attention.nnw").string();
  io::write_file(weights, net.save());
  ctx.attention_weights = weights;

  const auto model = summarize_metrics(val.maps, attention::predict_all(net, val.frames));
  const auto mean = summarize_metrics(val.maps, std::vector<AttentionMap>(val.size(), baseline_mean_map(train.maps)));
  const auto shuffled = summarize_shuffled(val.maps, baseline_shuffle(val.size(), val.lap_starts(), 3));
  const bool beats = model.kl_mean < mean.kl_mean && model.kl_mean < shuffled.kl_mean &&
                     model.cc_mean > mean.cc_mean && model.cc_mean > shuffled.cc_mean;

  // Overfit: the first 32 frames, full batch, no augmentation.
  attention::AttentionDataset small;
  for (std::size_t i = 0; i < 32; ++i) {
    small.frames.push_back(train.frames[i]);
    small.maps.push_back(train.maps[i]);
    small.lap.push_back(train.lap[i]);
  }
  attention::AttentionNet over(cfg.attention_net(), 8);
  attention::TrainAttentionConfig oc;
  oc.epochs = kA3OverfitEpochs;
  oc.batch = 32;
  oc.lr = 1e-3;
  oc.augment = false;
  attention::train_attention(over, small, nullptr, oc, 8);
  const auto pred = attention::predict_all(over, small.frames);
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += (pred[i].argmax() - small.maps[i].argmax()).cast<double>().norm() <= kA3OverfitPx;
  }
  const double frac = hits / 32.0;
  const double s = seconds_since(t0);
  return {beats && frac >= kA3OverfitFraction && s < kA3Seconds,
          fmt("val KL/CC model %.3f/%.3f, mean map %.3f/%.3f, shuffled %s/%.3f; overfit argmax hits %d/32 "
              "(need %.0f%%); %.0f s",
              model.kl_mean, model.cc_mean, mean.kl_mean, mean.cc_mean,
              std::isinf(shuffled.kl_mean) ? "inf" : fmt("%.3f", shuffled.kl_mean).c_str(), shuffled.cc_mean, hits,
              100 * kA3OverfitFraction, s)};
}

// A4 ---------------------------------------------------------------------------

nn::Tensor<double> random_tensor(nn::Shape s, Rng& rng) {
  nn::Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = uniform(rng, -1, 1);
  return t;
}

double layer_error(nn::Layer<double>& layer, const nn::Tensor<double>& x, std::uint64_t seed, bool train = true) {
  Rng rng(seed);
  layer.init(rng);
  return oracle::worst(oracle::check_layer(layer, x, seed + 1, train));
}

double policy_error(policy::Modality m) {
  policy::PolicyConfig c;
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
  policy::PolicyModel<double> net(c, 5);
  Rng rng(6);
  std::vector<policy::ObservationBundle> obs(2);
  for (auto& o : obs) {
    auto fill = [&](std::vector<float>& v, std::size_t n) {
      v.resize(n);
      for (auto& x : v) x = static_cast<float>(uniform(rng, -1, 1));
    };
    fill(o.reference, static_cast<std::size_t>(c.ref_len) * policy::kSampleDims);
    fill(o.state, static_cast<std::size_t>(c.state_len) * policy::kSampleDims);
    fill(o.visual, static_cast<std::size_t>(c.visual_len) * c.visual_sample_size());
  }
  std::vector<const policy::ObservationBundle*> ptrs{&obs[0], &obs[1]};
  auto batch = policy::make_batch<double>(c, ptrs);
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
  const auto gin = net.backward(g);
  std::vector<std::pair<std::string, std::vector<double>*>> values{
      {"reference", &batch.reference.data}, {"state", &batch.state.data}, {"visual", &batch.visual.data}};
  std::vector<std::vector<double>> analytic{gin.reference.data, gin.state.data, gin.visual.data};
  for (auto* p : params) {
    values.emplace_back(p->name, &p->value.data);
    analytic.push_back(p->grad.data);
  }
  return oracle::worst(oracle::finite_difference(values, analytic, loss, 1e-6));
}

Outcome a4(Context&) {
  using namespace nn;
  Rng rng(6);
  std::vector<std::pair<std::string, double>> errs;
  {
    Linear<double> l(5, 3);
    errs.emplace_back("linear", layer_error(l, random_tensor({4, 5}, rng), 10));
  }
  {
    Conv1d<double> l(3, 4, 2);
    errs.emplace_back("conv1d", layer_error(l, random_tensor({2, 3, 6}, rng), 11));
  }
  {
    Conv2d<double> l(2, 3, 3, 2, 1, true);
    errs.emplace_back("conv2d", layer_error(l, random_tensor({2, 2, 7, 6}, rng), 12));
  }
  {
    BatchNorm2d<double> l(3);
    Rng r2(1);
    l.init(r2);
    for (auto& g : l.gamma.value.data) g = uniform(r2, 0.5, 1.5);
    errs.emplace_back("batchnorm2d", oracle::worst(oracle::check_layer(l, random_tensor({3, 3, 3, 4}, rng), 13)));
  }
  {
    BatchNorm2d<double> l(2);
    errs.emplace_back("batchnorm2d-eval", layer_error(l, random_tensor({2, 2, 3, 3}, rng), 14, false));
  }
  {
    ReLU<double> l;
    errs.emplace_back("relu", layer_error(l, random_tensor({3, 7}, rng), 15));
  }
  {
    MaxPool2d<double> l(2);
    errs.emplace_back("maxpool2d", layer_error(l, random_tensor({2, 2, 5, 6}, rng), 16));
  }
  {
    UpsampleNearest<double> l(7, 9);
    errs.emplace_back("upsample", layer_error(l, random_tensor({2, 2, 3, 4}, rng), 17));
  }
  {
    SoftmaxSpatial<double> l;
    errs.emplace_back("softmax", layer_error(l, random_tensor({2, 1, 3, 4}, rng), 18));
  }
  {
    ChannelMean<double> l;
    errs.emplace_back("channel-mean", layer_error(l, random_tensor({2, 3, 2, 3}, rng), 19));
  }
  {
    PoolLength<double> mean(PoolLength<double>::Mode::Mean), mx(PoolLength<double>::Mode::Max);
    errs.emplace_back("mean-length", layer_error(mean, random_tensor({2, 3, 5}, rng), 20));
    errs.emplace_back("max-length", layer_error(mx, random_tensor({2, 3, 5}, rng), 21));
  }
  {
    Flatten<double> l;
    errs.emplace_back("flatten", layer_error(l, random_tensor({2, 3, 2, 2}, rng), 22));
  }
  {
    ResBlock<double> l(2, 3, 2);
    errs.emplace_back("resblock", layer_error(l, random_tensor({2, 2, 6, 5}, rng), 23));
  }
  for (policy::Modality m : {policy::Modality::Attention, policy::Modality::Tracks, policy::Modality::Image}) {
    errs.emplace_back("policy-" + std::string(policy::to_string(m)), policy_error(m));
  }
  double worst = 0.0;
  std::string name;
  for (const auto& [n, e] : errs) {
    if (e >= worst) {
      worst = e;
      name = n;
    }
  }
  return {worst < kA4RelTol, fmt("%zu checks, worst rel err %.2e (%s)", errs.size(), worst, name.c_str())};
}

// A5 ---------------------------------------------------------------------------

Outcome a5(Context& ctx) {
  const auto t0 = Clock::now();
  const config::Config& cfg = ctx.cfg;
  const Track track = generate_track("figure8");
  int runs = 0, complete = 0;
  double max_err = 0.0;
  for (const std::string split : {"train", "test"}) {
    const auto refs = cfg.reference_split(track, split);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      for (int rep = 0; rep < cfg.eval.reps; ++rep) {
        MpcExpert expert(cfg.mpc, cfg.rates.params);
        const RolloutLog log = run_rollout(expert_controller(expert), track, refs[i], cfg.rates,
                                           derive_seed(5, {split == "train" ? 0u : 1u, i, std::uint64_t(rep)}));
        ++runs;
        complete += log.completed() && log.gates_passed == log.total_gates;
        for (const auto& t : log.ticks) max_err = std::max(max_err, (t.state.p - refs[i].at(t.state.t).p).norm());
      }
    }
  }
  const double s = seconds_since(t0);
  return {complete == runs && runs == 2 * cfg.references.options.count * cfg.eval.reps && max_err < kA5MaxError &&
              s < kA5Seconds,
          fmt("%d/%d laps complete 10/10 gates, max position error %.3f m, %.0f s", complete, runs, max_err, s)};
}

// A6 ---------------------------------------------------------------------------

struct ModalityRun {
  int enough = 0;
  int successes = 0;
  double mean_gates = 0.0;
  eval::ShadowReport trained, untrained;
  double train_s = 0.0, total_s = 0.0;
};

ModalityRun run_modality(policy::Modality m, const config::Config& cfg, attention::AttentionNet& net,
                         const Track& track, const std::vector<ReferenceTrajectory>& train_refs,
                         const std::vector<ReferenceTrajectory>& test_refs) {
  const auto t0 = Clock::now();
  ModalityRun r;
  policy::PolicyConfig pc = cfg.resolved_policy();
  pc.modality = m;
  policy::Policy model(pc, 3), untrained(pc, 3);
  const auto fe = policy::front_end_factory(pc, &net, cfg.camera, cfg.rates.vision_hz);
  dagger::run_dagger(model, fe, track, train_refs, {cfg.dagger, cfg.rates, cfg.mpc, cfg.camera}, 5);
  r.train_s = seconds_since(t0);

  const std::vector<ReferenceTrajectory> eval_refs(train_refs.begin(), train_refs.begin() + kA6EvalRuns);
  const auto sr = eval::evaluate_success(eval::policy_trials(model, fe, cfg.camera), track, eval_refs, 1, cfg.rates, 99);
  for (const auto& t : sr.trials) {
    r.enough += t.gates_passed >= kA6MinGates;
    r.mean_gates += t.gates_passed / static_cast<double>(sr.trials.size());
  }
  r.successes = sr.successes;

  const std::vector<ReferenceTrajectory> shadow_refs(test_refs.begin(), test_refs.begin() + kA6ShadowRefs);
  r.trained = eval::offline_command_eval(eval::policy_shadow(model, fe, cfg.camera), track, shadow_refs, cfg.rates,
                                         cfg.mpc, 1);
  r.untrained = eval::offline_command_eval(eval::policy_shadow(untrained, fe, cfg.camera), track, shadow_refs,
                                           cfg.rates, cfg.mpc, 1);
  r.total_s = seconds_since(t0);
  return r;
}

Outcome a6(Context& ctx) {
  const config::Config& cfg = ctx.cfg;
  const Track track = generate_track(cfg.policy_track);
  const auto train_refs = cfg.reference_split(track, "train");
  const auto test_refs = cfg.reference_split(track, "test");
  attention::AttentionNet net(cfg.attention_net(), 0);
  if (!ctx.attention_weights.empty()) net.load(io::read_file(ctx.attention_weights));

  std::vector<std::pair<policy::Modality, ModalityRun>> runs;
  for (policy::Modality m : {policy::Modality::Attention, policy::Modality::Tracks, policy::Modality::Image}) {
    runs.emplace_back(m, run_modality(m, cfg, net, track, train_refs, test_refs));
  }
  const ModalityRun& a = runs.front().second;
  bool better = true;
  std::string mse;
  for (int d = 0; d < 4; ++d) {
    better = better && a.trained.normalized.mse[d] < a.untrained.normalized.mse[d];
    mse += fmt(" %s %.4f<%.4f", eval::kCommandNames[d], a.trained.normalized.mse[d], a.untrained.normalized.mse[d]);
  }
  const bool pass = a.enough >= static_cast<int>(std::ceil(kA6MinFraction * kA6EvalRuns)) && better &&
                    a.total_s < kA6Seconds;
  Outcome o{pass, fmt("attention: %d/%d eval runs with >= %d/6 gates (%d complete); shadow MSE trained<untrained:%s; "
                      "training %.0f s, total %.0f s",
                      a.enough, kA6EvalRuns, kA6MinGates, a.successes, mse.c_str(), a.train_s, a.total_s)};
  o.notes.push_back("modality comparison (not gated): runs>=5 gates, complete, mean gates, shadow MSE "
                    "throttle/roll/pitch/yaw");
  for (const auto& [m, r] : runs) {
    const auto& e = r.trained.normalized.mse;
    o.notes.push_back(fmt("%-10s %2d/%d  %2d/%d  %.1f  %.4f %.4f %.4f %.4f", std::string(policy::to_string(m)).c_str(),
                          r.enough, kA6EvalRuns, r.successes, kA6EvalRuns, r.mean_gates, e[0], e[1], e[2], e[3]));
  }
  return o;
}

// A7 ---------------------------------------------------------------------------

Outcome a7(Context& ctx) {
  const config::Config& cfg = ctx.cfg;
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };

  config::Config quick = cfg;
  quick.rates.timeout_factor = 0.02;
  const Track fig8 = generate_track("figure8");
  const auto trials = eval::evaluate_success(eval::hover_trials(), fig8, quick.reference_split(fig8, "test"),
                                             quick.eval.reps, quick.rates, 1);
  expect(trials.trials.size() == 180, "180 trials");

  expect(tracks::FeatureTrackSet::kCount == 40 && tracks::FeatureTrackSet::kDims == 5 && tracks::FeatureTrackSet{}.flatten().size() == 200,
         "40x5 track set");
  policy::PolicyConfig tc = cfg.resolved_policy();
  tc.modality = policy::Modality::Tracks;
  expect(tc.visual_sample_size() == 200, "tracks policy input 200");

  attention::AttentionNet big({400, 300, cfg.attention.base_channels}, 1);
  Frame f;
  f.width = 400;
  f.height = 300;
  f.pixels.assign(400 * 300 * 3, 128);
  expect(big.config().feature_length() == 475 && big.encoder_features(f).size() == 475, "475 encoder features");

  const dagger::DaggerSchedule full;
  expect(full.total_rollouts() == 150 && full.total_epochs() == 100, "150 rollouts / 100 epochs");
  const dagger::DaggerSchedule desk = dagger::DaggerSchedule::desk();
  expect(desk.iterations == 3 && desk.rollouts == 6 && desk.epochs == 10, "desk schedule 3x6x10");

  const QuadParams qp = cfg.rates.params;
  const Command wild{30.0, Eigen::Vector3d(9.0, -9.0, 0.5)};
  const Command c = clamp_command(wild, qp).command;
  expect(qp.c_max == 21.7 && qp.w_max == 6.0 && c.c == 21.7 && c.rates.x() == 6.0 && c.rates.y() == -6.0,
         "clamps 21.7 / 6");

  const Bounds bounds = fig8.bounds;
  const Eigen::Vector3d extent = bounds.max - bounds.min;
  expect(extent == Eigen::Vector3d(30, 15, 8), "bounds 30x15x8");

  expect(cfg.camera.hfov == 80.0 && cfg.camera.uptilt == 25.0, "camera 80 hfov / 25 uptilt");

  std::string detail = "180 trials, 40x5 tracks, 475 features at 400x300, 150/100 schedule, clamps 21.7/6, "
                       "bounds 30x15x8, camera 80/25";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " [" + b + "]";
  }
  return {bad.empty(), detail};
}

// A8 / A9 (through the command-line tool) ---------------------------------------

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome a8(Context& ctx) {
  const fs::path out = ctx.work / "bench";
  std::string cmd = ctx.cli + " bench --modality attention --out " + out.string();
  if (!ctx.attention_weights.empty()) cmd += " --attention-weights " + ctx.attention_weights;
  const int rc = run(cmd);
  if (rc != 0 && rc != 2) return {false, fmt("bench exited with %d", rc)};
  std::istringstream csv(io::read_file((out / "bench.csv").string()));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  std::vector<std::string> cols;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  if (cols.size() < 5) return {false, "bench.csv is malformed"};
  const int ticks = std::stoi(cols[1]);
  const double p50 = std::stod(cols[3]), p95 = std::stod(cols[4]);
  return {ticks == 500 && p95 < kA8BudgetMs,
          fmt("attention act() over %d ticks: p50 %.2f ms, p95 %.2f ms (budget %.0f ms)", ticks, p50, p95,
              kA8BudgetMs)};
}

std::vector<std::pair<std::string, std::string>> dir_bytes(const fs::path& dir) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).string(), io::read_file(e.path().string()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome a9(Context& ctx) {
  const fs::path root = ctx.work / "determinism";
  fs::remove_all(root);
  io::ensure_dir(root.string());
  const std::string config = (root / "config.json").string();
  io::write_file(config, R"({"data": {"frames": 120}, "references": {"count": 3},
  "attention": {"epochs": 1, "batch": 16, "augment": false},
  "dagger": {"iterations": 1, "rollouts": 1, "epochs": 1}, "eval": {"reps": 1}})");
  const std::string common = " --config " + config + " --seed 17 --jobs 1";
  // The evaluated policy is trained once and shared by both runs.
  const std::string shared = (root / "policy").string();
  if (run(ctx.cli + " train-policy --modality image" + common + " --out " + shared) != 0) {
    return {false, "train-policy failed"};
  }
  std::vector<std::string> differing;
  int failures = 0;
  std::vector<std::vector<std::pair<std::string, std::string>>> runs;
  for (int r = 0; r < 2; ++r) {
    const std::string base = (root / ("run" + std::to_string(r))).string();
    failures += run(ctx.cli + " gen-data" + common + " --out " + base + "/data") != 0;
    failures += run(ctx.cli + " train-attention" + common + " --data " + base + "/data --out " + base + "/attention") != 0;
    failures += run(ctx.cli + " evaluate" + common + " --policy " + shared + "/policy-image.nnw --out " + base +
                    "/evaluate") != 0;
    runs.push_back(dir_bytes(base));
  }
  if (failures) return {false, fmt("%d pipeline commands failed", failures)};
  bool same = runs[0].size() == runs[1].size();
  for (std::size_t i = 0; same && i < runs[0].size(); ++i) {
    if (runs[0][i] != runs[1][i]) differing.push_back(runs[0][i].first);
  }
  same = same && differing.empty();
  std::string detail = fmt("gen-data, train-attention, evaluate: %zu files compared", runs[0].size());
  if (!same) {
    detail = "differing:";
    for (const auto& d : differing) detail += " " + d;
  }
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria A1-A9"};
  Context ctx;
  std::string only, known;
  std::string work = "acceptance_work";
  app.add_option("--cli", ctx.cli, "path to the gazeracer command-line tool")->required();
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  app.add_option("--attention-weights", ctx.attention_weights, "attention weights for A6/A8 when A3 is not run");
  app.add_option("--known-fail", known, "comma-separated criteria whose failure does not fail the run");
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  io::ensure_dir(work);

  auto split = [](const std::string& s) {
    std::set<std::string> out;
    std::stringstream ss(s);
    for (std::string t; std::getline(ss, t, ',');) {
      if (!t.empty()) out.insert(t);
    }
    return out;
  };
  const auto selected = split(only);
  const auto known_fail = split(known);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}};
  int unexpected = 0;
  std::string report;
  auto emit = [&](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report += line + "\n";
    io::write_file((ctx.work / "acceptance_report.txt").string(), report);
  };
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    emit(fmt("%s %s  %s [%.1f s]%s", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(t0),
             !o.pass && known_fail.contains(id) ? " (known failure)" : ""));
    for (const auto& n : o.notes) emit("    " + n);
    if (!o.pass && !known_fail.contains(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
