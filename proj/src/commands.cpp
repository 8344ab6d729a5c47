#include "rlhf_lab/commands.hpp"

#include <chrono>
#include <sstream>

#include "rlhf_lab/oracles.hpp"

namespace rlhf {

namespace fs = std::filesystem;

namespace {

struct Writer {
  fs::path dir;
  CommandOutcome& outcome;

  fs::path operator()(const std::string& name) const { return dir / name; }
  void record(const std::string& name) { outcome.artifacts.push_back({name, sha256_file(dir / name)}); }
};

BanditInstance bandit_instance(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& cmd) {
  if (cfg.env.kind == "grid") return make_grid_env(cfg.env.grid, seed);
  if (cfg.env.kind == "counterexample") return make_counterexample(cfg.env.epsilon);
  throw ConfigError(cmd + " needs env.kind grid or counterexample (got '" + cfg.env.kind + "')", "env.kind");
}

Policy reference_policy(const ExperimentConfig& cfg, const BanditEnv& env, std::uint64_t seed,
                        const std::string& cmd) {
  switch (cfg.method.policy) {
    case ModelKind::Tabular:
      return Policy::tabular_from_probs(env.reference);
    case ModelKind::Mlp: {
      Rng init = Rng(seed).split(101).split(1);
      SftConfig distill = cfg.method.distill;
      distill.seed = seed;
      return train_sft(Policy::mlp(env.num_prompts, env.num_responses, cfg.method.policy_mlp, init),
                       distillation_demos(env.reference), distill)
          .policy;
    }
    case ModelKind::Autoregressive:
      break;
  }
  throw ConfigError(cmd + " on a bandit env needs method.policy tabular or mlp", "method.policy");
}

RewardModel initial_reward_model(const ExperimentConfig& cfg, std::size_t prompts, std::size_t responses,
                                 std::uint64_t seed) {
  if (cfg.method.reward_model == ModelKind::Mlp) {
    Rng init = Rng(seed).split(101).split(2);
    return RewardModel::mlp(prompts, responses, cfg.method.reward_mlp, init);
  }
  return RewardModel::tabular(prompts, responses);
}

RewardTrainConfig seeded(RewardTrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}
DpoConfig seeded(DpoConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}
PpoConfig seeded(PpoConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}
SftConfig seeded(SftConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

void add_verdict(CommandOutcome& out, Writer& w, const VerdictReport& v) {
  write_json(w("verdict.json"), verdict_to_json(v));
  w.record("verdict.json");
  for (const auto& c : v.checks) {
    out.summary.push_back(std::string(c.passed ? "PASS " : "FAIL ") + c.name + " measured=" +
                          format_number(c.measured) + " threshold=" + format_number(c.threshold));
  }
  out.summary.push_back(v.name + (v.passed() ? ": PASS" : ": FAIL"));
  out.ok = v.passed();
  out.verdict = v;
}

void cmd_train_rm(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto seed = cfg.seeds.front();
  const auto inst = bandit_instance(cfg, seed, out.command);
  auto rm = initial_reward_model(cfg, inst.env.num_prompts, inst.env.num_responses, seed);
  const auto res = train_reward_model(rm, inst.dataset, seeded(cfg.reward, seed));
  write_dataset_jsonl(inst.dataset, w("dataset.jsonl"));
  w.record("dataset.jsonl");
  write_loss_csv(w("reward_loss.csv"), res.losses);
  w.record("reward_loss.csv");
  write_json(w("reward_model.json"), reward_model_to_json(res.model));
  w.record("reward_model.json");
  out.summary.push_back("final reward loss " + format_number(res.losses.back()));
}

void cmd_train_sft(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto seed = cfg.seeds.front();
  const auto inst = bandit_instance(cfg, seed, out.command);
  std::vector<Demonstration> demos;
  for (const auto& p : inst.dataset.pairs()) demos.push_back({p.prompt, {static_cast<int>(p.winner)}, 1.0});
  Policy init;
  if (cfg.method.policy == ModelKind::Mlp) {
    Rng rng = Rng(seed).split(101).split(1);
    init = Policy::mlp(inst.env.num_prompts, inst.env.num_responses, cfg.method.policy_mlp, rng);
  } else {
    init = reference_policy(cfg, inst.env, seed, out.command);
  }
  const auto res = train_sft(init, demos, seeded(cfg.method.sft, seed));
  write_loss_csv(w("sft_loss.csv"), res.losses);
  w.record("sft_loss.csv");
  write_json(w("policy.json"), policy_to_json(res.policy));
  w.record("policy.json");
  out.summary.push_back("final sft loss " + format_number(res.losses.back()));
}

void cmd_train_dpo(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto seed = cfg.seeds.front();
  const auto inst = bandit_instance(cfg, seed, out.command);
  const Policy ref = reference_policy(cfg, inst.env, seed, out.command);
  const auto res = train_dpo(ref, ref, inst.dataset, seeded(cfg.dpo.train, seed), &inst.env);
  write_dataset_jsonl(inst.dataset, w("dataset.jsonl"));
  w.record("dataset.jsonl");
  write_dpo_metrics_csv(w("dpo_metrics.csv"), res.metrics);
  w.record("dpo_metrics.csv");
  write_json(w("policy.json"), policy_to_json(res.policy));
  w.record("policy.json");
  out.summary.push_back("final dpo loss " + format_number(res.metrics.back().loss) + ", J " +
                        format_number(res.metrics.back().objective));
}

void cmd_train_dpo_iter(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto seed = cfg.seeds.front();
  const auto inst = bandit_instance(cfg, seed, out.command);
  const Policy start = reference_policy(cfg, inst.env, seed, out.command);
  DpoIterConfig ic;
  ic.rounds = cfg.dpo.rounds;
  ic.pairs_per_round = cfg.dpo.pairs_per_round;
  ic.inner = seeded(cfg.dpo.train, seed);
  ic.winner_floor = cfg.dpo.winner_floor;
  ic.seed = seed;
  const auto& truth = inst.env.true_reward;
  const auto res = train_dpo_iter(start, inst.env, [&truth](std::size_t x, std::size_t y) { return truth(x, y); }, ic);
  std::ostringstream csv;
  csv << "round,pairs,injected_winners,final_dpo_loss,J_before,J_after,ood_mass\n";
  Json rounds = Json::array();
  for (const auto& r : res.rounds) {
    csv << r.round << ',' << r.pairs << ',' << r.injected_winners << ',' << format_number(r.final_dpo_loss) << ','
        << format_number(r.objective_before) << ',' << format_number(r.objective_after) << ','
        << format_number(r.ood_mass) << '\n';
    rounds.push_back({{"round", r.round},
                      {"pairs", r.pairs},
                      {"injected_winners", r.injected_winners},
                      {"final_dpo_loss", r.final_dpo_loss},
                      {"J_before", r.objective_before},
                      {"J_after", r.objective_after},
                      {"ood_mass", r.ood_mass},
                      {"reference", policy_to_json(r.reference)},
                      {"policy", policy_to_json(r.policy)}});
  }
  write_text(w("dpo_iter_rounds.csv"), csv.str());
  w.record("dpo_iter_rounds.csv");
  write_json(w("dpo_iter_rounds.json"), rounds);
  w.record("dpo_iter_rounds.json");
  write_json(w("policy.json"), policy_to_json(res.policy));
  w.record("policy.json");
  out.summary.push_back("rounds " + std::to_string(res.rounds.size()) + ", final J " +
                        format_number(res.rounds.back().objective_after));
}

void cmd_train_ppo(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto seed = cfg.seeds.front();
  PpoResult res;
  if (cfg.env.kind == "token") {
    const auto env = make_token_env(cfg.env.vocab, cfg.env.max_len, cfg.env.num_prompts, seed, cfg.env.success_reward);
    const Policy init = Policy::autoregressive(cfg.env.num_prompts, cfg.env.vocab, cfg.env.max_len);
    res = train_ppo(init, make_critic(init), init, token_task(env), seeded(cfg.ppo, seed));
  } else {
    const auto inst = bandit_instance(cfg, seed, out.command);
    const Policy ref = reference_policy(cfg, inst.env, seed, out.command);
    auto rm = initial_reward_model(cfg, inst.env.num_prompts, inst.env.num_responses, seed);
    const auto rm_res = train_reward_model(rm, inst.dataset, seeded(cfg.reward, seed));
    write_loss_csv(w("reward_loss.csv"), rm_res.losses);
    w.record("reward_loss.csv");
    write_json(w("reward_model.json"), reward_model_to_json(rm_res.model));
    w.record("reward_model.json");
    PpoEvaluation eval;
    const auto& truth = inst.env.true_reward;
    eval.task_reward = [&truth](std::size_t x, std::span<const int> s) {
      return truth(x, static_cast<std::size_t>(s[0]));
    };
    res = train_ppo(ref, make_critic(ref), ref, bandit_task(inst.env, rm_res.model), seeded(cfg.ppo, seed), eval);
  }
  write_ppo_metrics_csv(w("ppo_metrics.csv"), res.metrics);
  w.record("ppo_metrics.csv");
  write_json(w("policy.json"), policy_to_json(res.policy));
  w.record("policy.json");
  const auto& last = res.metrics.back();
  out.summary.push_back("final mean reward " + format_number(last.mean_reward) + ", J " +
                        format_number(last.objective) + ", kl " + format_number(last.kl));
}

void cmd_verify_theorem(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto res = verify_counterexample(cfg.counterexample());
  std::ostringstream csv;
  csv << "delta,loss\n";
  for (const auto& [d, l] : res.delta_sweep) csv << format_number(d) << ',' << format_number(l) << '\n';
  write_text(w("delta_sweep.csv"), csv.str());
  w.record("delta_sweep.csv");
  Json detail;
  detail["candidate_loss"] = res.candidate_loss;
  detail["candidate_closed_form"] = res.candidate_closed_form;
  detail["ppo_policy"] = res.ppo_policy;
  detail["ppo_y3_analytic_bound"] = res.ppo_y3_analytic_bound;
  detail["min_reward_loss"] = res.min_reward_loss;
  detail["min_dpo_loss"] = res.min_dpo_loss;
  detail["reward_model"] = reward_model_to_json(res.reward_model);
  write_json(w("theorem.json"), detail);
  w.record("theorem.json");
  add_verdict(out, w, res.verdict);
}

void cmd_grid_study(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto res = run_grid_study(cfg.grid_study());
  std::ostringstream csv;
  csv << "seed,max_dpo_inflation,max_ppo_leak,ppo_diag_argmax\n";
  for (const auto& s : res.seeds) {
    const std::string name = "heatmap_seed" + std::to_string(s.seed) + ".json";
    write_json(w(name), heatmap_bundle(s, {{"tool", "rlhf_lab"}, {"version", kVersion}}));
    w.record(name);
    csv << s.seed << ',' << format_number(s.max_dpo_inflation) << ',' << format_number(s.max_ppo_leak) << ','
        << s.ppo_diag_argmax << '\n';
  }
  write_text(w("grid_summary.csv"), csv.str());
  w.record("grid_summary.csv");
  add_verdict(out, w, res.verdict);
}

void cmd_ablate(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto res = run_ablation(cfg.ablation());
  write_ablation_csv(w("ablation.csv"), res.rows);
  w.record("ablation.csv");
  Json summaries = Json::array();
  for (const auto& s : res.summaries) {
    summaries.push_back({{"group", s.group}, {"variant", s.variant}, {"mean", s.mean}, {"std", s.std}, {"n", s.n}});
    out.summary.push_back(s.variant + " mean " + format_number(s.mean) + " std " + format_number(s.std));
  }
  write_json(w("ablation_summary.json"), summaries);
  w.record("ablation_summary.json");
  add_verdict(out, w, res.verdict);
}

void cmd_dist_shift(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto res = run_distribution_shift(cfg.dist_shift());
  std::ostringstream csv;
  csv << "method,base,seed,J\n";
  for (const auto& c : res.cells) csv << c.method << ',' << c.base << ',' << c.seed << ',' << format_number(c.objective) << '\n';
  write_text(w("dist_shift.csv"), csv.str());
  w.record("dist_shift.csv");
  add_verdict(out, w, res.verdict);
}

void cmd_ood_divergence(const ExperimentConfig& cfg, Writer& w, CommandOutcome& out) {
  const auto seed = cfg.seeds.front();
  const auto inst = bandit_instance(cfg, seed, out.command);
  const auto rm = initial_reward_model(cfg, inst.env.num_prompts, inst.env.num_responses, seed);
  const auto rep = ood_reward_divergence(rm, inst.dataset, cfg.analysis.probe, cfg.analysis.divergence);
  write_divergence_csv(w("divergence.csv"), rep);
  w.record("divergence.csv");
  VerdictReport v;
  v.name = "ood_divergence";
  v.checks.push_back({"gap_exceeds_threshold", rep.final_gap > cfg.analysis.divergence.threshold, rep.final_gap,
                      cfg.analysis.divergence.threshold});
  v.checks.push_back({"loss_within_eps", rep.final_loss <= cfg.analysis.divergence.eps_loss, rep.final_loss,
                      cfg.analysis.divergence.eps_loss});
  out.summary.push_back("steps " + std::to_string(rep.steps));
  add_verdict(out, w, v);
}

using Handler = void (*)(const ExperimentConfig&, Writer&, CommandOutcome&);

Handler handler_for(const std::string& name) {
  if (name == "train-rm") return cmd_train_rm;
  if (name == "train-sft") return cmd_train_sft;
  if (name == "train-dpo") return cmd_train_dpo;
  if (name == "train-dpo-iter") return cmd_train_dpo_iter;
  if (name == "train-ppo") return cmd_train_ppo;
  if (name == "verify-theorem") return cmd_verify_theorem;
  if (name == "grid-study") return cmd_grid_study;
  if (name == "ablate") return cmd_ablate;
  if (name == "dist-shift") return cmd_dist_shift;
  if (name == "ood-divergence") return cmd_ood_divergence;
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace

std::vector<std::string> command_names() { return config_profiles(); }

void prepare_output_dir(const fs::path& out_dir) {
  if (fs::is_directory(out_dir)) return;
  if (fs::exists(out_dir)) throw std::runtime_error("output path " + out_dir.string() + " is not a directory");
  const fs::path parent = fs::absolute(out_dir).parent_path();
  if (!fs::is_directory(parent)) {
    throw std::runtime_error("output directory parent " + parent.string() + " does not exist");
  }
  fs::create_directory(out_dir);
}

CommandOutcome run_command(const std::string& name, const ExperimentConfig& cfg, const fs::path& out_dir) {
  const Handler handler = handler_for(name);
  cfg.validate();
  prepare_output_dir(out_dir);
  const auto start = std::chrono::steady_clock::now();
  CommandOutcome outcome;
  outcome.command = name;
  Writer w{out_dir, outcome};
  write_json(w("config.json"), config_to_json(cfg));
  w.record("config.json");
  handler(cfg, w, outcome);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(cfg, outcome, secs, out_dir / "manifest.json");
  return outcome;
}

Json make_manifest(const ExperimentConfig& cfg, const CommandOutcome& outcome, double wall_clock_seconds) {
  Json j;
  j["tool"] = "rlhf_lab";
  j["version"] = kVersion;
  j["command"] = outcome.command;
  j["seeds"] = cfg.seeds;
  j["config"] = config_to_json(cfg);
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["ok"] = outcome.ok;
  Json arts = Json::array();
  for (const auto& a : outcome.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
  j["artifacts"] = arts;
  return j;
}

void write_manifest(const ExperimentConfig& cfg, const CommandOutcome& outcome, double wall_clock_seconds,
                    const fs::path& path) {
  write_json(path, make_manifest(cfg, outcome, wall_clock_seconds));
}

}  // namespace rlhf
