#include "gazeracer/eval/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gazeracer/util/io.hpp"

namespace gazeracer::eval {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Controller closures share ownership of their per-trial state.
struct PolicyRun {
  std::unique_ptr<policy::VisualFrontEnd> front;
  std::unique_ptr<policy::ObservationAssembler> assembler;
};

}  // namespace

TrialFactory expert_trials(const MpcConfig& mpc, const QuadParams& params) {
  return [mpc, params](std::uint64_t) {
    auto expert = std::make_shared<MpcExpert>(mpc, params);
    return Controller([expert](const TickContext& ctx) {
      const Command u = expert->command(ctx.state, *ctx.reference);
      return ControlOutput{u, u, CommandSource::Expert};
    });
  };
}

TrialFactory hover_trials() {
  return [](std::uint64_t) {
    return Controller([](const TickContext& ctx) {
      return ControlOutput{ctx.rates->params.hover(), std::nullopt, CommandSource::Policy};
    });
  };
}

TrialFactory policy_trials(policy::Policy& model, policy::FrontEndFactory front_ends, const CameraModel& camera) {
  return [&model, front_ends = std::move(front_ends), camera](std::uint64_t seed) {
    auto run = std::make_shared<PolicyRun>();
    run->front = front_ends(derive_seed(seed, {0x56495a}));
    run->assembler = std::make_unique<policy::ObservationAssembler>(model.config(), *run->front, camera);
    return Controller([&model, run](const TickContext& ctx) {
      const policy::ActResult a = policy::act(model, run->assembler->assemble(ctx), ctx.rates->params);
      return ControlOutput{a.command, std::nullopt, CommandSource::Policy};
    });
  };
}

Interval wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = trials, p = successes / n, z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

SuccessReport evaluate_success(const TrialFactory& factory, const Track& track,
                               const std::vector<ReferenceTrajectory>& refs, int reps, const RateConfig& rates,
                               std::uint64_t seed) {
  if (refs.empty()) throw std::invalid_argument("evaluate: no references");
  if (reps < 1) throw std::invalid_argument("evaluate: reps must be positive");
  SuccessReport r;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    for (int rep = 0; rep < reps; ++rep) {
      Trial t;
      t.reference_id = static_cast<int>(i);
      t.rep = rep;
      t.seed = derive_seed(seed, {0x4556414c, i, static_cast<std::uint64_t>(rep)});
      const RolloutLog log = run_rollout(factory(t.seed), track, refs[i], rates, t.seed);
      t.gates_passed = log.gates_passed;
      t.total_gates = log.total_gates;
      t.cause = std::string(to_string(log.termination.cause));
      t.terminated = log.completed() ? "completed"
                     : log.termination.cause == TerminationCause::Timeout ? "timeout"
                                                                           : "crashed";
      r.successes += t.success();
      r.trials.push_back(std::move(t));
    }
  }
  const int n = static_cast<int>(r.trials.size());
  r.rate = static_cast<double>(r.successes) / n;
  r.ci = wilson_interval(r.successes, n);
  return r;
}

ShadowFactory policy_shadow(policy::Policy& model, policy::FrontEndFactory front_ends, const CameraModel& camera) {
  return [&model, front_ends = std::move(front_ends), camera](std::uint64_t seed) {
    auto run = std::make_shared<PolicyRun>();
    run->front = front_ends(derive_seed(seed, {0x56495a}));
    run->assembler = std::make_unique<policy::ObservationAssembler>(model.config(), *run->front, camera);
    return ShadowPredictor([&model, run](const TickContext& ctx) {
      return policy::act(model, run->assembler->assemble(ctx), ctx.rates->params).command;
    });
  };
}

ShadowReport offline_command_eval(const ShadowFactory& factory, const Track& track,
                                  const std::vector<ReferenceTrajectory>& refs, const RateConfig& rates,
                                  const MpcConfig& mpc, std::uint64_t seed) {
  if (refs.empty()) throw std::invalid_argument("shadow-eval: no references");
  const policy::CommandScale scale{rates.params.g, rates.params.w_max};
  ShadowReport r;
  MpcExpert expert(mpc, rates.params);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::uint64_t s = derive_seed(seed, {0x53484144, i});
    ShadowPredictor predict = factory(s);
    expert.reset();
    Controller ctrl = [&](const TickContext& ctx) {
      const Command u = expert.command(ctx.state, *ctx.reference);
      const Command p = predict(ctx);
      const Eigen::Vector4d dn = scale.normalize(p) - scale.normalize(u);
      const Eigen::Vector4d dr = p.as_vector() - u.as_vector();
      for (int d = 0; d < 4; ++d) {
        r.normalized.mse[d] += dn[d] * dn[d];
        r.normalized.l1[d] += std::abs(dn[d]);
        r.raw.mse[d] += dr[d] * dr[d];
        r.raw.l1[d] += std::abs(dr[d]);
      }
      ++r.ticks;
      return ControlOutput{u, u, CommandSource::Expert};
    };
    run_rollout(ctrl, track, refs[i], rates, s);
  }
  for (CommandErrors* e : {&r.normalized, &r.raw}) {
    for (int d = 0; d < 4; ++d) {
      e->mse[d] /= static_cast<double>(r.ticks);
      e->l1[d] /= static_cast<double>(r.ticks);
    }
  }
  return r;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * values.size()));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

LatencyStats bench_act(policy::Policy& model, policy::VisualFrontEnd& front_end, const CameraModel& camera,
                       const Track& track, const ReferenceTrajectory& ref, const RateConfig& rates,
                       const MpcConfig& mpc, int ticks) {
  if (ticks < 1) throw std::invalid_argument("bench: ticks must be positive");
  policy::ObservationAssembler assembler(model.config(), front_end, camera);
  MpcExpert expert(mpc, rates.params);
  LatencyStats st;
  RateConfig long_run = rates;
  long_run.timeout_factor = std::max(rates.timeout_factor, 1.0);
  // Laps repeat until enough ticks are timed.
  for (std::uint64_t lap = 0; static_cast<int>(st.samples_ms.size()) < ticks; ++lap) {
    expert.reset();
    Controller ctrl = [&](const TickContext& ctx) {
      if (static_cast<int>(st.samples_ms.size()) < ticks) {
        TickContext forced = ctx;
        forced.new_frame = true;
        const auto t0 = std::chrono::steady_clock::now();
        const policy::ActResult a = policy::act(model, assembler.assemble(forced), ctx.rates->params);
        const auto t1 = std::chrono::steady_clock::now();
        if (!std::isfinite(a.command.c)) throw std::runtime_error("bench: non-finite command");
        st.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      const Command u = expert.command(ctx.state, *ctx.reference);
      return ControlOutput{u, u, CommandSource::Expert};
    };
    const RolloutLog log = run_rollout(ctrl, track, ref, long_run, lap);
    if (log.ticks.empty()) throw std::runtime_error("bench: rollout produced no ticks");
  }
  st.p50 = percentile(st.samples_ms, 0.5);
  st.p95 = percentile(st.samples_ms, 0.95);
  st.max = *std::max_element(st.samples_ms.begin(), st.samples_ms.end());
  st.mean = std::accumulate(st.samples_ms.begin(), st.samples_ms.end(), 0.0) / st.samples_ms.size();
  return st;
}

std::string success_to_csv(const SuccessReport& report) {
  std::ostringstream os;
  os << "reference_id,rep,gates_passed,total_gates,terminated,cause\n";
  for (const Trial& t : report.trials) {
    os << t.reference_id << ',' << t.rep << ',' << t.gates_passed << ',' << t.total_gates << ',' << t.terminated
       << ',' << t.cause << '\n';
  }
  return os.str();
}

std::string shadow_to_csv(const std::vector<NamedShadow>& reports) {
  std::ostringstream os;
  os << "policy,command,mse,l1,mse_raw,l1_raw\n";
  for (const NamedShadow& n : reports) {
    for (int d = 0; d < 4; ++d) {
      os << n.name << ',' << kCommandNames[d] << ',' << fmt("%.9g", n.report.normalized.mse[d]) << ','
         << fmt("%.9g", n.report.normalized.l1[d]) << ',' << fmt("%.9g", n.report.raw.mse[d]) << ','
         << fmt("%.9g", n.report.raw.l1[d]) << '\n';
    }
  }
  return os.str();
}

std::string summary_text(const std::vector<NamedSuccess>& success, const std::vector<NamedShadow>& shadow) {
  std::ostringstream os;
  for (const NamedSuccess& s : success) {
    const SuccessReport& r = s.report;
    double gates = 0.0;
    for (const Trial& t : r.trials) gates += t.gates_passed;
    os << s.name << ": " << r.successes << "/" << r.trials.size() << " trials successful (" << fmt("%.1f", 100 * r.rate)
       << "%, 95% CI " << fmt("%.1f", 100 * r.ci.low) << "-" << fmt("%.1f", 100 * r.ci.high) << "%), mean gates "
       << fmt("%.2f", r.trials.empty() ? 0.0 : gates / r.trials.size()) << "\n";
  }
  for (const NamedShadow& n : shadow) {
    os << "\nshadow " << n.name << " (" << n.report.ticks << " ticks, normalized units)\n";
    os << "  command     MSE          L1\n";
    for (int d = 0; d < 4; ++d) {
      char line[96];
      std::snprintf(line, sizeof line, "  %-9s %-12.6f %-12.6f\n", kCommandNames[d], n.report.normalized.mse[d],
                    n.report.normalized.l1[d]);
      os << line;
    }
  }
  if (success.size() > 1 || shadow.size() > 1) {
    os << "\ncomparison\n  policy      success   throttle   roll       pitch      yaw  (shadow MSE)\n";
    std::vector<std::string> names;
    for (const auto& s : success) names.push_back(s.name);
    for (const auto& s : shadow) {
      if (std::find(names.begin(), names.end(), s.name) == names.end()) names.push_back(s.name);
    }
    for (const std::string& name : names) {
      char line[160];
      std::string rate = "-";
      for (const auto& s : success) {
        if (s.name == name) rate = fmt("%.3f", s.report.rate);
      }
      std::snprintf(line, sizeof line, "  %-11s %-9s", name.c_str(), rate.c_str());
      os << line;
      bool found = false;
      for (const auto& s : shadow) {
        if (s.name != name) continue;
        found = true;
        for (int d = 0; d < 4; ++d) os << ' ' << fmt("%-10.5f", s.report.normalized.mse[d]);
      }
      if (!found) os << " -";
      os << "\n";
    }
  }
  return os.str();
}

void write_report(const std::string& dir, const std::vector<NamedSuccess>& success,
                  const std::vector<NamedShadow>& shadow, const std::string& config_json) {
  io::ensure_dir(dir);
  for (std::size_t i = 0; i < success.size(); ++i) {
    const std::string name = i == 0 ? "success.csv" : "success_" + success[i].name + ".csv";
    io::write_file(dir + "/" + name, success_to_csv(success[i].report));
  }
  if (!shadow.empty()) io::write_file(dir + "/shadow.csv", shadow_to_csv(shadow));
  io::write_file(dir + "/summary.txt", summary_text(success, shadow));
  io::write_file(dir + "/config_snapshot.json", config_json);
}

}  // namespace gazeracer::eval
