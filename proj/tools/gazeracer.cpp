#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gazeracer/attention/dataset.hpp"
#include "gazeracer/config/config.hpp"
#include "gazeracer/dagger/dagger.hpp"
#include "gazeracer/eval/eval.hpp"
#include "gazeracer/nn/weights.hpp"
#include "gazeracer/util/io.hpp"

using namespace gazeracer;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "root seed");
  cmd->add_option("--out", c.out, "artifact directory");
  cmd->add_option("--jobs", c.jobs, "worker count (only 1 is supported)");
}

config::Config resolve(const Common& c) {
  config::Config cfg = c.config.empty() ? config::parse_config("{}") : config::load_config(c.config);
  if (c.jobs != 1) throw config::ConfigError("--jobs: only a single worker is supported");
  return cfg;
}

void prepare_out(const Common& c, const config::Config& cfg) {
  io::ensure_dir(c.out);
  io::write_file(c.out + "/config_snapshot.json", config::to_json(cfg));
}

Track track_named(const std::string& name) {
  if (name == "oval" || name == "figure8") return generate_track(name);
  return load_track(name);
}

std::vector<ReferenceTrajectory> references(const config::Config& cfg, const Track& track, const std::string& split) {
  return cfg.reference_split(track, split);
}

std::string ref_name(const std::string& split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu.csv", split.c_str(), i);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

struct LoadedPolicy {
  std::string name;
  std::unique_ptr<policy::Policy> model;
};

LoadedPolicy load_policy(const std::string& path, const config::Config& cfg) {
  const std::string bytes = io::read_file(path);
  const std::string tag = nn::weights_tag(bytes);
  if (tag.rfind("policy-", 0) != 0) throw std::invalid_argument(path + ": not a policy weight file (tag '" + tag + "')");
  policy::PolicyConfig pc = cfg.resolved_policy();
  pc.modality = policy::modality_from_string(tag.substr(7));
  LoadedPolicy lp{tag.substr(7), std::make_unique<policy::Policy>(pc, 0)};
  lp.model->load(bytes);
  return lp;
}

std::unique_ptr<attention::AttentionNet> load_attention(const std::string& path, const config::Config& cfg,
                                                        std::uint64_t seed) {
  auto net = std::make_unique<attention::AttentionNet>(cfg.attention_net(), seed);
  if (!path.empty()) net->load(io::read_file(path));
  return net;
}

// Subcommands -----------------------------------------------------------------

void make_track(const Common& c, const std::string& name) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const Track t = track_named(name);
  save_track(t, c.out + "/track.json");
  log("wrote " + c.out + "/track.json (" + std::to_string(t.gates.size()) + " gates)");
}

void gen_reference(const Common& c, std::string track_name) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  if (track_name.empty()) track_name = cfg.policy_track;
  const Track track = track_named(track_name);
  for (const std::string split : {"train", "test"}) {
    const auto refs = references(cfg, track, split);
    for (std::size_t i = 0; i < refs.size(); ++i) save_reference(refs[i], c.out + "/" + ref_name(split, i));
  }
  log("wrote " + std::to_string(2 * cfg.references.options.count) + " references to " + c.out);
}

void gen_data(const Common& c) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const Track track = track_named(cfg.data_track);
  attention::DataGenConfig d = cfg.data;
  d.width = cfg.camera.width;
  d.height = cfg.camera.height;
  d.camera = cfg.camera;
  const auto data = attention::generate_attention_data(track, references(cfg, track, "train"), d, cfg.mpc, cfg.rates,
                                                       c.seed);
  attention::save_generated(data, c.out);
  log("wrote " + std::to_string(data.dataset.size()) + " frames to " + c.out);
}

void train_attention_cmd(const Common& c, const std::string& data_dir) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const attention::AttentionDataset all = attention::load_dataset(data_dir);
  attention::AttentionDataset train, val;
  attention::split_dataset(all, cfg.attention.val_fraction, train, val);
  attention::AttentionNet net(cfg.attention_net(), c.seed);
  std::ostringstream csv;
  csv << "epoch,train_kl,val_kl,val_kl_infinite,val_cc\n";
  attention::train_attention(net, train, &val, cfg.attention.train, c.seed, [&](const attention::EpochLog& e) {
    csv << e.epoch << ',' << num(e.train_kl) << ',' << num(e.val.kl_mean) << ',' << e.val.kl_infinite << ','
        << num(e.val.cc_mean) << '\n';
    log("epoch " + std::to_string(e.epoch) + " train KL " + num(e.train_kl) + " val KL " + num(e.val.kl_mean) +
        " val CC " + num(e.val.cc_mean));
  });
  io::write_file(c.out + "/attention.nnw", net.save());
  io::write_file(c.out + "/train_log.csv", csv.str());
}

void eval_attention(const Common& c, const std::string& data_dir, const std::string& weights) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const attention::AttentionDataset all = attention::load_dataset(data_dir);
  attention::AttentionDataset train, val;
  attention::split_dataset(all, cfg.attention.val_fraction, train, val);
  auto net = load_attention(weights, cfg, c.seed);
  const auto pred = attention::predict_all(*net, val.frames);
  const AttentionMap mean = baseline_mean_map(train.maps);
  const auto model = summarize_metrics(val.maps, pred);
  const auto mean_m = summarize_metrics(val.maps, std::vector<AttentionMap>(val.size(), mean));
  const auto shuffled = summarize_shuffled(val.maps, baseline_shuffle(val.size(), val.lap_starts(), c.seed));
  std::ostringstream csv;
  csv << "model,frames,kl,kl_infinite,cc\n";
  for (const auto& [name, m] : {std::pair{"attention", model}, std::pair{"mean_map", mean_m},
                                std::pair{"shuffled", shuffled}}) {
    csv << name << ',' << m.frames << ',' << num(m.kl_mean) << ',' << m.kl_infinite << ',' << num(m.cc_mean) << '\n';
  }
  io::write_file(c.out + "/metrics.csv", csv.str());
  std::cout << csv.str();
}

void train_policy(const Common& c, const std::string& modality, const std::string& attention_weights) {
  const config::Config cfg = resolve(c);
  policy::PolicyConfig pc = cfg.resolved_policy();
  pc.modality = policy::modality_from_string(modality);
  if (pc.modality == policy::Modality::Attention && attention_weights.empty()) {
    throw std::invalid_argument("train-policy: the attention modality needs --attention-weights");
  }
  prepare_out(c, cfg);
  const Track track = track_named(cfg.policy_track);
  std::unique_ptr<attention::AttentionNet> net;
  if (pc.modality == policy::Modality::Attention) net = load_attention(attention_weights, cfg, 0);
  policy::Policy model(pc, c.seed);
  dagger::DaggerSetup setup{cfg.dagger, cfg.rates, cfg.mpc, cfg.camera};
  io::ensure_dir(c.out + "/checkpoints");
  std::string provenance;
  std::ostringstream losses;
  losses << "iteration,epoch,loss\n";
  const auto result = dagger::run_dagger(
      model, policy::front_end_factory(pc, net.get(), cfg.camera, cfg.rates.vision_hz), track,
      references(cfg, track, "train"), setup, c.seed,
      [&](const dagger::RolloutRecord& r) {
        provenance += r.to_json() + "\n";
        io::write_file(c.out + "/provenance.ndjson", provenance);
        log("iteration " + std::to_string(r.iteration + 1) + " rollout " + std::to_string(r.rollout + 1) + ": gates " +
            std::to_string(r.gates_passed) + "/" + std::to_string(r.total_gates) + ", expert " +
            num(r.expert_fraction) + ", dataset " + std::to_string(r.dataset_size));
      },
      [&](const dagger::IterationRecord& r) {
        for (std::size_t e = 0; e < r.losses.size(); ++e) {
          losses << r.iteration + 1 << ',' << e + 1 << ',' << num(r.losses[e]) << '\n';
        }
        io::write_file(c.out + "/checkpoints/iteration_" + std::to_string(r.iteration + 1) + ".nnw", r.weights);
        log("iteration " + std::to_string(r.iteration + 1) + " final loss " + num(r.losses.back()));
      });
  io::write_file(c.out + "/losses.csv", losses.str());
  io::write_file(c.out + "/policy-" + modality + ".nnw", model.save());
  log("trained on " + std::to_string(result.dataset_size) + " samples from " + std::to_string(result.rollouts.size()) +
      " rollouts");
}

void evaluate(const Common& c, const std::vector<std::string>& policies, const std::string& attention_weights,
              bool expert) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const Track track = track_named(cfg.policy_track);
  const auto refs = references(cfg, track, cfg.eval.split);
  auto net = load_attention(attention_weights, cfg, 0);
  std::vector<eval::NamedSuccess> results;
  if (expert) {
    results.push_back({"expert", eval::evaluate_success(eval::expert_trials(cfg.mpc, cfg.rates.params), track, refs,
                                                        cfg.eval.reps, cfg.rates, c.seed)});
  }
  for (const std::string& path : policies) {
    LoadedPolicy lp = load_policy(path, cfg);
    const auto fe = policy::front_end_factory(lp.model->config(), net.get(), cfg.camera, cfg.rates.vision_hz);
    results.push_back({lp.name, eval::evaluate_success(eval::policy_trials(*lp.model, fe, cfg.camera), track, refs,
                                                       cfg.eval.reps, cfg.rates, c.seed)});
    log(lp.name + ": " + std::to_string(results.back().report.successes) + "/" +
        std::to_string(results.back().report.trials.size()) + " successful trials");
  }
  if (results.empty()) throw std::invalid_argument("evaluate: give --policy and/or --expert");
  eval::write_report(c.out, results, {}, config::to_json(cfg));
  std::cout << eval::summary_text(results, {});
}

void shadow_eval(const Common& c, const std::vector<std::string>& policies, const std::string& attention_weights,
                 bool untrained) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const Track track = track_named(cfg.policy_track);
  const auto refs = references(cfg, track, cfg.eval.split);
  auto net = load_attention(attention_weights, cfg, 0);
  std::vector<eval::NamedShadow> results;
  for (const std::string& path : policies) {
    LoadedPolicy lp = load_policy(path, cfg);
    const auto fe = policy::front_end_factory(lp.model->config(), net.get(), cfg.camera, cfg.rates.vision_hz);
    results.push_back({lp.name, eval::offline_command_eval(eval::policy_shadow(*lp.model, fe, cfg.camera), track, refs,
                                                           cfg.rates, cfg.mpc, c.seed)});
    if (untrained) {
      policy::Policy fresh(lp.model->config(), c.seed);
      results.push_back({lp.name + "-untrained",
                         eval::offline_command_eval(eval::policy_shadow(fresh, fe, cfg.camera), track, refs, cfg.rates,
                                                    cfg.mpc, c.seed)});
    }
  }
  if (results.empty()) throw std::invalid_argument("shadow-eval: give at least one --policy");
  eval::write_report(c.out, {}, results, config::to_json(cfg));
  std::cout << eval::summary_text({}, results);
}

int bench(const Common& c, const std::vector<std::string>& modalities, const std::string& attention_weights) {
  const config::Config cfg = resolve(c);
  prepare_out(c, cfg);
  const Track track = track_named(cfg.policy_track);
  const ReferenceTrajectory ref = references(cfg, track, "train").front();
  auto net = load_attention(attention_weights, cfg, c.seed);
  std::ostringstream csv;
  csv << "modality,ticks,mean_ms,p50_ms,p95_ms,max_ms,budget_ms,over_budget\n";
  int over = 0;
  for (const std::string& m : modalities) {
    policy::PolicyConfig pc = cfg.resolved_policy();
    pc.modality = policy::modality_from_string(m);
    policy::Policy model(pc, c.seed);
    auto front = policy::front_end_factory(pc, net.get(), cfg.camera, cfg.rates.vision_hz)(c.seed);
    const eval::LatencyStats st =
        eval::bench_act(model, *front, cfg.camera, track, ref, cfg.rates, cfg.mpc, cfg.bench.ticks);
    const bool flag = st.p95 > cfg.bench.budget_ms;
    over += flag;
    csv << m << ',' << st.samples_ms.size() << ',' << num(st.mean) << ',' << num(st.p50) << ',' << num(st.p95) << ','
        << num(st.max) << ',' << num(cfg.bench.budget_ms) << ',' << (flag ? "yes" : "no") << '\n';
    std::printf("%-10s act p50 %7.3f ms  p95 %7.3f ms  max %7.3f ms%s\n", m.c_str(), st.p50, st.p95, st.max,
                flag ? "  OVER BUDGET" : "");
  }
  io::write_file(c.out + "/bench.csv", csv.str());
  return over == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaze-driven drone racing workbench"};
  app.require_subcommand(1);
  Common common;

  auto* mk = app.add_subcommand("make-track", "write a bundled track layout as JSON");
  std::string track_name = "oval";
  mk->add_option("--name", track_name, "oval or figure8");

  auto* gr = app.add_subcommand("gen-reference", "generate train/test reference trajectories");
  std::string ref_track;
  gr->add_option("--track", ref_track, "track name or file (default: policy.track)");

  auto* gd = app.add_subcommand("gen-data", "render frames, synthetic gaze and attention maps along expert laps");

  auto* ta = app.add_subcommand("train-attention", "train the attention network");
  std::string data_dir;
  ta->add_option("--data", data_dir, "dataset directory from gen-data")->required();

  auto* ea = app.add_subcommand("eval-attention", "attention metrics against baselines on the held-out laps");
  std::string att_weights;
  ea->add_option("--data", data_dir, "dataset directory from gen-data")->required();
  ea->add_option("--weights", att_weights, "attention weights")->required();

  auto* tp = app.add_subcommand("train-policy", "train a policy with DAgger");
  std::string modality = "attention";
  tp->add_option("--modality", modality, "attention, tracks or image")
      ->check(CLI::IsMember({"attention", "tracks", "image"}));
  tp->add_option("--attention-weights", att_weights, "attention weights for the attention modality");

  auto* ev = app.add_subcommand("evaluate", "closed-loop gate success rates");
  std::vector<std::string> policies;
  bool expert = false;
  ev->add_option("--policy", policies, "policy weights (repeatable)");
  ev->add_option("--attention-weights", att_weights, "attention weights for attention policies");
  ev->add_flag("--expert", expert, "also evaluate the MPC expert");

  auto* se = app.add_subcommand("shadow-eval", "offline command errors while the expert flies");
  bool untrained = false;
  se->add_option("--policy", policies, "policy weights (repeatable)");
  se->add_option("--attention-weights", att_weights, "attention weights for attention policies");
  se->add_flag("--untrained", untrained, "also score a freshly initialized policy of each modality");

  auto* be = app.add_subcommand("bench", "per-tick act() latency per modality");
  std::vector<std::string> modalities{"attention", "tracks", "image"};
  be->add_option("--modality", modalities, "modalities to time (repeatable)")
      ->check(CLI::IsMember({"attention", "tracks", "image"}));
  be->add_option("--attention-weights", att_weights, "attention weights (random when omitted)");

  auto* cs = app.add_subcommand("config-schema", "print every configuration key with its default");
  std::string preset;
  cs->add_option("--preset", preset, "print a preset instead (desk or full)");

  for (auto* cmd : {mk, gr, gd, ta, ea, tp, ev, se, be, cs}) add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (mk->parsed()) make_track(common, track_name);
    else if (gr->parsed()) gen_reference(common, ref_track);
    else if (gd->parsed()) gen_data(common);
    else if (ta->parsed()) train_attention_cmd(common, data_dir);
    else if (ea->parsed()) eval_attention(common, data_dir, att_weights);
    else if (tp->parsed()) train_policy(common, modality, att_weights);
    else if (ev->parsed()) evaluate(common, policies, att_weights, expert);
    else if (se->parsed()) shadow_eval(common, policies, att_weights, untrained);
    else if (be->parsed()) return bench(common, modalities, att_weights);
    else if (cs->parsed()) {
      if (!common.config.empty()) resolve(common);
      std::cout << (preset.empty() ? config::schema_json() : config::preset_json(preset));
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
