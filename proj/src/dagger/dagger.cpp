#include "gazeracer/dagger/dagger.hpp"

#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "gazeracer/nn/adam.hpp"
#include "gazeracer/util/fpenv.hpp"

namespace gazeracer::dagger {

using policy::ObservationBundle;

DaggerSchedule DaggerSchedule::desk() {
  DaggerSchedule s;
  s.iterations = 3;
  s.rollouts = 6;
  s.epochs = 10;
  return s;
}

void DaggerSchedule::validate() const {
  if (iterations < 1 || rollouts < 1 || epochs < 1 || batch < 1) {
    throw std::invalid_argument("dagger: iterations, rollouts, epochs and batch must be positive");
  }
  if (!(noise_p_start >= 0 && noise_p_start <= 1 && noise_p_end >= 0 && noise_p_end <= 1)) {
    throw std::invalid_argument("dagger: noise probabilities must lie in [0, 1]");
  }
  if (!(noise_thrust >= 0 && noise_rates >= 0 && tau_thrust >= 0 && tau_rates >= 0 && tau_growth > 0 && lr > 0)) {
    throw std::invalid_argument("dagger: noise scales and thresholds must be non-negative, growth and lr positive");
  }
}

double DaggerSchedule::noise_probability(int iteration) const {
  if (iterations == 1) return noise_p_start;
  return noise_p_start + (noise_p_end - noise_p_start) * iteration / (iterations - 1);
}

Eigen::Vector4d DaggerSchedule::tau(int iteration, const policy::CommandScale& scale) const {
  const double f = std::pow(tau_growth, iteration);
  const double r = tau_rates * f / scale.w_max;
  return {tau_thrust * f / scale.g, r, r, r};
}

AggregatedDataset::AggregatedDataset(policy::PolicyConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::size_t AggregatedDataset::add_visual(std::vector<float> features) {
  if (static_cast<int>(features.size()) != cfg_.visual_sample_size()) {
    throw std::invalid_argument("dataset: visual sample has " + std::to_string(features.size()) + " values, expected " +
                                std::to_string(cfg_.visual_sample_size()));
  }
  pool_.push_back(std::move(features));
  return pool_.size() - 1;
}

void AggregatedDataset::add(std::vector<float> reference, std::vector<float> state, std::vector<std::size_t> visual,
                            const Eigen::Vector4d& label, int iteration) {
  if (static_cast<int>(reference.size()) != cfg_.ref_len * policy::kSampleDims ||
      static_cast<int>(state.size()) != cfg_.state_len * policy::kSampleDims ||
      static_cast<int>(visual.size()) != cfg_.visual_len) {
    throw std::invalid_argument("dataset: window lengths do not match the policy configuration");
  }
  for (std::size_t v : visual) {
    if (v >= pool_.size()) throw std::invalid_argument("dataset: visual index out of range");
  }
  reference_.push_back(std::move(reference));
  state_.push_back(std::move(state));
  visual_.push_back(std::move(visual));
  labels_.push_back(label);
  iterations_.push_back(iteration);
}

ObservationBundle AggregatedDataset::bundle(std::size_t i) const {
  ObservationBundle o;
  o.reference = reference_.at(i);
  o.state = state_[i];
  o.visual.reserve(static_cast<std::size_t>(cfg_.visual_len) * cfg_.visual_sample_size());
  for (std::size_t v : visual_[i]) o.visual.insert(o.visual.end(), pool_[v].begin(), pool_[v].end());
  return o;
}

double CollectResult::expert_fraction() const {
  const std::size_t n = expert_ticks + policy_ticks;
  return n == 0 ? 0.0 : static_cast<double>(expert_ticks) / n;
}

CollectResult collect_rollout(policy::Policy& model, MpcExpert& expert, policy::VisualFrontEnd& front_end,
                              const CameraModel& camera, const Track& track, const ReferenceTrajectory& ref,
                              const RateConfig& rates, const CollectConfig& cfg, std::uint64_t seed,
                              AggregatedDataset& out) {
  const policy::PolicyConfig& pc = model.config();
  policy::ObservationAssembler assembler(pc, front_end, camera);
  const policy::CommandScale scale{rates.params.g, rates.params.w_max};
  const auto f = static_cast<std::size_t>(pc.visual_sample_size());
  std::deque<std::size_t> held;
  CollectResult res;
  expert.reset();

  Controller ctrl = [&](const TickContext& ctx) {
    ObservationBundle obs = assembler.assemble(ctx);
    const Command label = expert.command(ctx.state, ref);
    const Command proposal = clamp_command(policy::forward_policy(model, obs, scale), rates.params).command;

    if (ctx.new_frame || held.empty()) {
      held.push_back(out.add_visual(std::vector<float>(obs.visual.end() - static_cast<std::ptrdiff_t>(f),
                                                       obs.visual.end())));
      while (static_cast<int>(held.size()) > pc.visual_len) held.pop_front();
    }
    std::vector<std::size_t> ids(static_cast<std::size_t>(pc.visual_len) - held.size(), held.front());
    ids.insert(ids.end(), held.begin(), held.end());
    const Eigen::Vector4d y = scale.normalize(label);
    out.add(std::move(obs.reference), std::move(obs.state), std::move(ids), y, cfg.iteration);
    ++res.samples;

    const Eigen::Vector4d gap = (scale.normalize(proposal) - y).cwiseAbs();
    if ((gap.array() <= cfg.tau.array()).all()) {
      ++res.policy_ticks;
      return ControlOutput{proposal, label, CommandSource::Policy};
    }
    ++res.expert_ticks;
    if (uniform01(*ctx.rng) < cfg.noise_probability) {
      ++res.noisy_ticks;
      Command noisy = label;
      noisy.c += cfg.noise_thrust * normal01(*ctx.rng);
      for (int i = 0; i < 3; ++i) noisy.rates[i] += cfg.noise_rates * normal01(*ctx.rng);
      return ControlOutput{clamp_command(noisy, rates.params).command, label, CommandSource::Noise};
    }
    return ControlOutput{label, label, CommandSource::Expert};
  };
  res.log = run_rollout(ctrl, track, ref, rates, seed);
  return res;
}

std::vector<double> train_iteration(policy::Policy& model, const AggregatedDataset& data, const TrainConfig& cfg,
                                    std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("train-policy: empty dataset");
  if (cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr > 0)) {
    throw std::invalid_argument("train-policy: epochs, batch and lr must be positive");
  }
  DenormalGuard ftz;
  const auto params = model.params();
  nn::Adam<float> opt(params, nn::AdamConfig{.lr = cfg.lr});
  Rng rng(derive_seed(seed, {0x5452}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<ObservationBundle> obs;
      obs.reserve(end - start);
      nn::Tensor<float> target({static_cast<int>(end - start), 4});
      for (std::size_t k = start; k < end; ++k) {
        obs.push_back(data.bundle(order[k]));
        for (int d = 0; d < 4; ++d) target[(k - start) * 4 + d] = static_cast<float>(data.label(order[k])[d]);
      }
      std::vector<const ObservationBundle*> ptrs;
      for (const auto& o : obs) ptrs.push_back(&o);
      nn::zero_grad(params);
      nn::Tensor<float> g;
      const double loss = nn::mse_loss(model.forward(policy::make_batch<float>(model.config(), ptrs), true), target, &g);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train-policy: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      model.backward(g);
      opt.step();
      total += loss * static_cast<double>(end - start);
      seen += end - start;
    }
    losses.push_back(total / static_cast<double>(seen));
  }
  return losses;
}

std::string RolloutRecord::to_json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["rollout"] = rollout;
  j["reference"] = reference;
  j["seed"] = seed;
  j["gates_passed"] = gates_passed;
  j["total_gates"] = total_gates;
  j["termination"] = termination;
  j["expert_fraction"] = expert_fraction;
  j["dataset_size"] = dataset_size;
  return j.dump();
}

DaggerResult run_dagger(policy::Policy& model, const policy::FrontEndFactory& front_ends, const Track& track,
                        const std::vector<ReferenceTrajectory>& refs, const DaggerSetup& setup, std::uint64_t seed,
                        const std::function<void(const RolloutRecord&)>& on_rollout,
                        const std::function<void(const IterationRecord&)>& on_iteration) {
  if (refs.empty()) throw std::invalid_argument("dagger: no references");
  const DaggerSchedule& s = setup.schedule;
  s.validate();
  const policy::CommandScale scale{setup.rates.params.g, setup.rates.params.w_max};
  AggregatedDataset data(model.config());
  MpcExpert expert(setup.mpc, setup.rates.params);
  DaggerResult result;
  for (int it = 0; it < s.iterations; ++it) {
    CollectConfig cc;
    cc.iteration = it;
    cc.noise_probability = s.noise_probability(it);
    cc.tau = s.tau(it, scale);
    cc.noise_thrust = s.noise_thrust;
    cc.noise_rates = s.noise_rates;
    for (int k = 0; k < s.rollouts; ++k) {
      const int ref_id = (it * s.rollouts + k) % static_cast<int>(refs.size());
      const std::uint64_t rs = derive_seed(seed, {0x524f4c4c, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(k)});
      auto front = front_ends(derive_seed(rs, {0x56495a}));
      const CollectResult c =
          collect_rollout(model, expert, *front, setup.camera, track, refs[ref_id], setup.rates, cc, rs, data);
      RolloutRecord rec;
      rec.iteration = it;
      rec.rollout = k;
      rec.reference = ref_id;
      rec.seed = rs;
      rec.gates_passed = c.log.gates_passed;
      rec.total_gates = c.log.total_gates;
      rec.termination = std::string(to_string(c.log.termination.cause));
      rec.expert_fraction = c.expert_fraction();
      rec.dataset_size = data.size();
      result.rollouts.push_back(rec);
      if (on_rollout) on_rollout(rec);
    }
    IterationRecord ir;
    ir.iteration = it;
    ir.losses = train_iteration(model, data, {s.epochs, s.batch, s.lr},
                                derive_seed(seed, {0x5452414e, static_cast<std::uint64_t>(it)}));
    ir.weights = model.save();
    if (on_iteration) on_iteration(ir);
    result.iterations.push_back(std::move(ir));
  }
  result.dataset_size = data.size();
  return result;
}

}  // namespace gazeracer::dagger
