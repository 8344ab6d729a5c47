#include "rlhf_lab/config.hpp"

#include <fstream>
#include <sstream>

namespace rlhf {

namespace {

Json mlp_json(const MlpInit& m) {
  return {{"hidden", m.hidden}, {"input_scale", m.input_scale}, {"output_scale", m.output_scale}};
}

MlpInit mlp_from(const Json& j) {
  return {j.at("hidden").get<std::size_t>(), j.at("input_scale").get<double>(), j.at("output_scale").get<double>()};
}

Json sft_json(const SftConfig& s) {
  return {{"lr", s.lr}, {"steps", s.steps}, {"batch_size", s.batch_size}};
}

SftConfig sft_from(const Json& j) {
  return {j.at("lr").get<double>(), j.at("steps").get<std::size_t>(), j.at("batch_size").get<std::size_t>(), 0};
}

std::string type_name(const Json& j) {
  if (j.is_number_unsigned()) return "nonnegative integer";
  if (j.is_number()) return "number";
  if (j.is_boolean()) return "boolean";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

// Overlay user onto base, checking keys and value types against base.
void overlay(Json& base, const Json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError((path.empty() ? std::string("config") : path) + " must be an object", path);
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'", key);
    Json& slot = base[it.key()];
    const Json& v = it.value();
    bool ok = false;
    if (slot.is_object()) {
      overlay(slot, v, key);
      continue;
    }
    if (slot.is_null()) {
      ok = v.is_null() || v.is_number();  // optional numeric
    } else if (slot.is_number_unsigned()) {
      ok = v.is_number_unsigned();
    } else if (slot.is_number()) {
      ok = v.is_number();
    } else if (slot.is_boolean()) {
      ok = v.is_boolean();
    } else if (slot.is_string()) {
      ok = v.is_string();
    } else if (slot.is_array()) {
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number_unsigned(); });
    }
    if (!ok) {
      throw ConfigError("config key '" + key + "' expects " + (slot.is_array() ? "array of nonnegative integers" : type_name(slot)) +
                            ", got " + type_name(v),
                        key);
    }
    slot = v;
  }
}

[[noreturn]] void bad(const std::string& field, const std::string& what, double got) {
  throw ConfigError(field + " " + what + " (got " + format_number(got) + ")", field);
}

void positive(const std::string& field, double v) {
  if (!(v > 0.0)) bad(field, "must be positive", v);
}
void nonnegative(const std::string& field, double v) {
  if (!(v >= 0.0)) bad(field, "must be nonnegative", v);
}
void unit_interval(const std::string& field, double v) {
  if (!(v >= 0.0 && v <= 1.0)) bad(field, "must lie in [0, 1]", v);
}
void at_least(const std::string& field, std::size_t v, std::size_t lo) {
  if (v < lo) bad(field, "must be at least " + std::to_string(lo), static_cast<double>(v));
}

}  // namespace

std::vector<std::string> config_profiles() {
  return {"train-rm", "train-sft", "train-dpo", "train-dpo-iter", "train-ppo",
          "verify-theorem", "grid-study", "ablate", "dist-shift", "ood-divergence"};
}

ExperimentConfig default_config(const std::string& profile) {
  ExperimentConfig c;
  if (profile == "verify-theorem") {
    const CounterexampleConfig ce;
    c.env.kind = "counterexample";
    c.env.epsilon = ce.ref_smoothing;
    c.reward = ce.reward;
    c.dpo.train = ce.dpo;
    c.dpo.train.beta = ce.beta;
    c.analysis.delta = ce.delta;
    c.analysis.candidate_loss_tolerance = ce.candidate_loss_tolerance;
    c.analysis.ppo_y3_bound = ce.ppo_y3_bound;
    c.analysis.min_loss_tolerance = ce.min_loss_tolerance;
  } else if (profile == "ood-divergence") {
    c.env.kind = "counterexample";
  } else if (profile == "grid-study") {
    const GridStudyConfig g;
    c.env.grid = g.grid;
    c.seeds = g.seeds;
    c.method.policy = g.policy_kind;
    c.method.reward_model = g.reward_kind;
    c.method.policy_mlp = g.policy_mlp;
    c.method.reward_mlp = g.reward_mlp;
    c.method.distill = g.distill;
    c.reward = g.reward;
    c.dpo.train = g.dpo;
    c.ppo = g.ppo;
    c.analysis.dpo_inflation_threshold = g.dpo_inflation_threshold;
    c.analysis.ppo_leak_threshold = g.ppo_leak_threshold;
    c.analysis.min_diag_argmax = g.min_diag_argmax;
    c.analysis.min_seeds_inflation = g.min_seeds_inflation;
    c.analysis.min_seeds_no_leak = g.min_seeds_no_leak;
    c.analysis.min_seeds_diag = g.min_seeds_diag;
  } else if (profile == "ablate") {
    const AblationConfig a;
    c.env.kind = "token";
    c.env.vocab = a.vocab;
    c.env.max_len = a.max_len;
    c.env.num_prompts = a.num_prompts;
    c.env.success_reward = a.success_reward;
    c.method.policy = ModelKind::Autoregressive;
    c.seeds = a.seeds;
    c.ppo = a.base;
    c.analysis.small_batch = a.small_batch;
    c.analysis.large_batch = a.large_batch;
    c.analysis.batch_sweep = a.batch_sweep;
    c.analysis.ema_alpha = a.ema_alpha;
  } else if (profile == "dist-shift") {
    const DistShiftConfig d;
    c.env.grid = d.grid;
    c.seeds = d.seeds;
    c.method.demos_per_prompt = d.demos_per_prompt;
    c.method.sft = d.sft;
    c.reward = d.reward;
    c.dpo.train = d.dpo;
    c.ppo = d.ppo;
  }
  return c;
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["env"] = {{"kind", c.env.kind},
              {"n", c.env.grid.n},
              {"pairs_per_prompt", c.env.grid.pairs_per_prompt},
              {"diagonal_pairs", c.env.grid.diagonal_pairs},
              {"ref_logit_scale", c.env.grid.ref_logit_scale},
              {"epsilon", c.env.epsilon},
              {"vocab", c.env.vocab},
              {"max_len", c.env.max_len},
              {"num_prompts", c.env.num_prompts},
              {"success_reward", c.env.success_reward}};
  j["method"] = {{"policy", to_string(c.method.policy)},
                 {"reward_model", to_string(c.method.reward_model)},
                 {"policy_mlp", mlp_json(c.method.policy_mlp)},
                 {"reward_mlp", mlp_json(c.method.reward_mlp)},
                 {"sft", sft_json(c.method.sft)},
                 {"distill", sft_json(c.method.distill)},
                 {"demos_per_prompt", c.method.demos_per_prompt}};
  const auto& p = c.ppo;
  j["ppo"] = {{"batch_size", p.batch_size},     {"minibatches", p.minibatches},   {"actor_lr", p.actor_lr},
              {"critic_lr", p.critic_lr},       {"clip_ratio", p.clip_ratio},     {"value_clip", p.value_clip},
              {"kl_coef", p.kl_coef},           {"reward_clip", p.reward_clip},   {"gae_lambda", p.gae_lambda},
              {"discount", p.discount},         {"iterations", p.epochs},         {"update_passes", p.update_passes},
              {"temperature", p.temperature},   {"top_k", p.top_k},               {"adv_norm", p.adv_norm},
              {"value_norm", p.value_norm},     {"ema_alpha", p.ema_alpha}};
  const auto& d = c.dpo.train;
  j["dpo"] = {{"beta", d.beta},
              {"lr", d.lr},
              {"steps", d.steps},
              {"batch_size", d.batch_size},
              {"eval_interval", d.eval_interval},
              {"rounds", c.dpo.rounds},
              {"pairs_per_round", c.dpo.pairs_per_round},
              {"winner_floor", c.dpo.winner_floor ? Json(*c.dpo.winner_floor) : Json(nullptr)}};
  j["reward"] = {{"lr", c.reward.lr}, {"steps", c.reward.steps}, {"batch_size", c.reward.batch_size}};
  const auto& a = c.analysis;
  j["analysis"] = {{"delta", a.delta},
                   {"candidate_loss_tolerance", a.candidate_loss_tolerance},
                   {"ppo_y3_bound", a.ppo_y3_bound},
                   {"min_loss_tolerance", a.min_loss_tolerance},
                   {"dpo_inflation_threshold", a.dpo_inflation_threshold},
                   {"ppo_leak_threshold", a.ppo_leak_threshold},
                   {"min_diag_argmax", a.min_diag_argmax},
                   {"min_seeds_inflation", a.min_seeds_inflation},
                   {"min_seeds_no_leak", a.min_seeds_no_leak},
                   {"min_seeds_diag", a.min_seeds_diag},
                   {"divergence",
                    {{"eps_loss", a.divergence.eps_loss},
                     {"threshold", a.divergence.threshold},
                     {"max_steps", a.divergence.max_steps},
                     {"ascent_lr", a.divergence.ascent_lr},
                     {"descent_lr", a.divergence.descent_lr},
                     {"probe", {a.probe.prompt, a.probe.y_prime, a.probe.y_star}}}},
                   {"small_batch", a.small_batch},
                   {"large_batch", a.large_batch},
                   {"batch_sweep", a.batch_sweep},
                   {"ema_alpha", a.ema_alpha}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig config_from_json(const Json& user, const std::string& profile) {
  Json j = config_to_json(default_config(profile));
  overlay(j, user, "");
  // winner_floor's default is null, so the overlay cannot type it; the rest
  // of the document is now known to match the schema.
  ExperimentConfig c;
  const auto& e = j["env"];
  c.env.kind = e["kind"].get<std::string>();
  c.env.grid.n = e["n"].get<std::size_t>();
  c.env.grid.pairs_per_prompt = e["pairs_per_prompt"].get<std::size_t>();
  c.env.grid.diagonal_pairs = e["diagonal_pairs"].get<std::size_t>();
  c.env.grid.ref_logit_scale = e["ref_logit_scale"].get<double>();
  c.env.epsilon = e["epsilon"].get<double>();
  c.env.vocab = e["vocab"].get<std::size_t>();
  c.env.max_len = e["max_len"].get<std::size_t>();
  c.env.num_prompts = e["num_prompts"].get<std::size_t>();
  c.env.success_reward = e["success_reward"].get<double>();

  const auto& m = j["method"];
  try {
    c.method.policy = model_kind_from_string(m["policy"].get<std::string>());
  } catch (const std::exception& ex) {
    throw ConfigError("method.policy: " + std::string(ex.what()), "method.policy");
  }
  try {
    c.method.reward_model = model_kind_from_string(m["reward_model"].get<std::string>());
  } catch (const std::exception& ex) {
    throw ConfigError("method.reward_model: " + std::string(ex.what()), "method.reward_model");
  }
  c.method.policy_mlp = mlp_from(m["policy_mlp"]);
  c.method.reward_mlp = mlp_from(m["reward_mlp"]);
  c.method.sft = sft_from(m["sft"]);
  c.method.distill = sft_from(m["distill"]);
  c.method.demos_per_prompt = m["demos_per_prompt"].get<std::size_t>();

  const auto& p = j["ppo"];
  c.ppo.batch_size = p["batch_size"].get<std::size_t>();
  c.ppo.minibatches = p["minibatches"].get<std::size_t>();
  c.ppo.actor_lr = p["actor_lr"].get<double>();
  c.ppo.critic_lr = p["critic_lr"].get<double>();
  c.ppo.clip_ratio = p["clip_ratio"].get<double>();
  c.ppo.value_clip = p["value_clip"].get<double>();
  c.ppo.kl_coef = p["kl_coef"].get<double>();
  c.ppo.reward_clip = p["reward_clip"].get<double>();
  c.ppo.gae_lambda = p["gae_lambda"].get<double>();
  c.ppo.discount = p["discount"].get<double>();
  c.ppo.epochs = p["iterations"].get<std::size_t>();
  c.ppo.update_passes = p["update_passes"].get<std::size_t>();
  c.ppo.temperature = p["temperature"].get<double>();
  c.ppo.top_k = p["top_k"].get<std::size_t>();
  c.ppo.adv_norm = p["adv_norm"].get<bool>();
  c.ppo.value_norm = p["value_norm"].get<bool>();
  c.ppo.ema_alpha = p["ema_alpha"].get<double>();

  const auto& d = j["dpo"];
  c.dpo.train.beta = d["beta"].get<double>();
  c.dpo.train.lr = d["lr"].get<double>();
  c.dpo.train.steps = d["steps"].get<std::size_t>();
  c.dpo.train.batch_size = d["batch_size"].get<std::size_t>();
  c.dpo.train.eval_interval = d["eval_interval"].get<std::size_t>();
  c.dpo.rounds = d["rounds"].get<std::size_t>();
  c.dpo.pairs_per_round = d["pairs_per_round"].get<std::size_t>();
  if (!d["winner_floor"].is_null()) c.dpo.winner_floor = d["winner_floor"].get<double>();

  const auto& r = j["reward"];
  c.reward.lr = r["lr"].get<double>();
  c.reward.steps = r["steps"].get<std::size_t>();
  c.reward.batch_size = r["batch_size"].get<std::size_t>();

  const auto& a = j["analysis"];
  auto& ca = c.analysis;
  ca.delta = a["delta"].get<double>();
  ca.candidate_loss_tolerance = a["candidate_loss_tolerance"].get<double>();
  ca.ppo_y3_bound = a["ppo_y3_bound"].get<double>();
  ca.min_loss_tolerance = a["min_loss_tolerance"].get<double>();
  ca.dpo_inflation_threshold = a["dpo_inflation_threshold"].get<double>();
  ca.ppo_leak_threshold = a["ppo_leak_threshold"].get<double>();
  ca.min_diag_argmax = a["min_diag_argmax"].get<std::size_t>();
  ca.min_seeds_inflation = a["min_seeds_inflation"].get<std::size_t>();
  ca.min_seeds_no_leak = a["min_seeds_no_leak"].get<std::size_t>();
  ca.min_seeds_diag = a["min_seeds_diag"].get<std::size_t>();
  const auto& dv = a["divergence"];
  ca.divergence.eps_loss = dv["eps_loss"].get<double>();
  ca.divergence.threshold = dv["threshold"].get<double>();
  ca.divergence.max_steps = dv["max_steps"].get<std::size_t>();
  ca.divergence.ascent_lr = dv["ascent_lr"].get<double>();
  ca.divergence.descent_lr = dv["descent_lr"].get<double>();
  const auto probe = dv["probe"].get<std::vector<std::size_t>>();
  if (probe.size() != 3) {
    throw ConfigError("analysis.divergence.probe must be [prompt, y_prime, y_star]", "analysis.divergence.probe");
  }
  ca.probe = {probe[0], probe[1], probe[2]};
  ca.small_batch = a["small_batch"].get<std::size_t>();
  ca.large_batch = a["large_batch"].get<std::size_t>();
  ca.batch_sweep = a["batch_sweep"].get<std::vector<std::size_t>>();
  ca.ema_alpha = a["ema_alpha"].get<double>();

  c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  c.output_dir = j["output_dir"].get<std::string>();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (env.kind != "grid" && env.kind != "counterexample" && env.kind != "token") {
    throw ConfigError("env.kind must be one of grid, counterexample, token (got '" + env.kind + "')", "env.kind");
  }
  at_least("env.n", env.grid.n, 2);
  at_least("env.pairs_per_prompt", env.grid.pairs_per_prompt, 1);
  if (env.grid.pairs_per_prompt > env.grid.n - 1) {
    bad("env.pairs_per_prompt", "must be at most n - 1", static_cast<double>(env.grid.pairs_per_prompt));
  }
  nonnegative("env.ref_logit_scale", env.grid.ref_logit_scale);
  if (!(env.epsilon > 0.0 && env.epsilon < 1.0)) bad("env.epsilon", "must lie in (0, 1)", env.epsilon);
  at_least("env.vocab", env.vocab, 2);
  at_least("env.max_len", env.max_len, 2);
  at_least("env.num_prompts", env.num_prompts, 1);
  positive("env.success_reward", env.success_reward);

  if (method.policy == ModelKind::Autoregressive && env.kind != "token") {
    throw ConfigError("method.policy autoregressive-tabular needs env.kind token", "method.policy");
  }
  if (method.reward_model == ModelKind::Autoregressive) {
    throw ConfigError("method.reward_model must be tabular or mlp", "method.reward_model");
  }
  for (const auto& [name, m] : {std::pair<std::string, MlpInit>{"method.policy_mlp", method.policy_mlp},
                                std::pair<std::string, MlpInit>{"method.reward_mlp", method.reward_mlp}}) {
    at_least(name + ".hidden", m.hidden, 1);
    positive(name + ".input_scale", m.input_scale);
    positive(name + ".output_scale", m.output_scale);
  }
  for (const auto& [name, s] : {std::pair<std::string, SftConfig>{"method.sft", method.sft},
                                std::pair<std::string, SftConfig>{"method.distill", method.distill}}) {
    positive(name + ".lr", s.lr);
    at_least(name + ".batch_size", s.batch_size, 1);
  }
  at_least("method.demos_per_prompt", method.demos_per_prompt, 1);

  at_least("ppo.batch_size", ppo.batch_size, 1);
  at_least("ppo.minibatches", ppo.minibatches, 1);
  if (ppo.batch_size % ppo.minibatches != 0) {
    bad("ppo.minibatches", "must divide ppo.batch_size", static_cast<double>(ppo.minibatches));
  }
  positive("ppo.actor_lr", ppo.actor_lr);
  positive("ppo.critic_lr", ppo.critic_lr);
  positive("ppo.clip_ratio", ppo.clip_ratio);
  positive("ppo.value_clip", ppo.value_clip);
  nonnegative("ppo.kl_coef", ppo.kl_coef);
  positive("ppo.reward_clip", ppo.reward_clip);
  unit_interval("ppo.gae_lambda", ppo.gae_lambda);
  unit_interval("ppo.discount", ppo.discount);
  at_least("ppo.iterations", ppo.epochs, 1);
  at_least("ppo.update_passes", ppo.update_passes, 1);
  positive("ppo.temperature", ppo.temperature);
  at_least("ppo.top_k", ppo.top_k, 1);
  unit_interval("ppo.ema_alpha", ppo.ema_alpha);

  positive("dpo.beta", dpo.train.beta);
  positive("dpo.lr", dpo.train.lr);
  at_least("dpo.batch_size", dpo.train.batch_size, 1);
  at_least("dpo.eval_interval", dpo.train.eval_interval, 1);
  at_least("dpo.rounds", dpo.rounds, 1);
  at_least("dpo.pairs_per_round", dpo.pairs_per_round, 1);
  if (dpo.winner_floor) nonnegative("dpo.winner_floor", *dpo.winner_floor);

  positive("reward.lr", reward.lr);
  at_least("reward.batch_size", reward.batch_size, 1);

  positive("analysis.delta", analysis.delta);
  if (!(analysis.delta < 0.9)) bad("analysis.delta", "must be below 0.9", analysis.delta);
  positive("analysis.candidate_loss_tolerance", analysis.candidate_loss_tolerance);
  positive("analysis.ppo_y3_bound", analysis.ppo_y3_bound);
  positive("analysis.min_loss_tolerance", analysis.min_loss_tolerance);
  nonnegative("analysis.ppo_leak_threshold", analysis.ppo_leak_threshold);
  positive("analysis.divergence.eps_loss", analysis.divergence.eps_loss);
  positive("analysis.divergence.threshold", analysis.divergence.threshold);
  positive("analysis.divergence.ascent_lr", analysis.divergence.ascent_lr);
  positive("analysis.divergence.descent_lr", analysis.divergence.descent_lr);
  at_least("analysis.small_batch", analysis.small_batch, 1);
  at_least("analysis.large_batch", analysis.large_batch, 1);
  for (std::size_t i = 0; i < analysis.batch_sweep.size(); ++i) {
    at_least("analysis.batch_sweep[" + std::to_string(i) + "]", analysis.batch_sweep[i], 1);
  }
  unit_interval("analysis.ema_alpha", analysis.ema_alpha);

  if (seeds.empty()) throw ConfigError("seeds must list at least one seed", "seeds");
}

CounterexampleConfig ExperimentConfig::counterexample() const {
  CounterexampleConfig c;
  c.ref_smoothing = env.epsilon;
  c.beta = dpo.train.beta;
  c.delta = analysis.delta;
  c.candidate_loss_tolerance = analysis.candidate_loss_tolerance;
  c.ppo_y3_bound = analysis.ppo_y3_bound;
  c.min_loss_tolerance = analysis.min_loss_tolerance;
  c.reward = reward;
  c.dpo = dpo.train;
  c.seed = seeds.front();
  c.reward.seed = c.seed;
  c.dpo.seed = c.seed;
  return c;
}

GridStudyConfig ExperimentConfig::grid_study() const {
  GridStudyConfig g;
  g.grid = env.grid;
  g.seeds = seeds;
  g.policy_kind = method.policy;
  g.reward_kind = method.reward_model;
  g.policy_mlp = method.policy_mlp;
  g.reward_mlp = method.reward_mlp;
  g.distill = method.distill;
  g.reward = reward;
  g.dpo = dpo.train;
  g.ppo = ppo;
  g.dpo_inflation_threshold = analysis.dpo_inflation_threshold;
  g.ppo_leak_threshold = analysis.ppo_leak_threshold;
  g.min_diag_argmax = analysis.min_diag_argmax;
  g.min_seeds_inflation = analysis.min_seeds_inflation;
  g.min_seeds_no_leak = analysis.min_seeds_no_leak;
  g.min_seeds_diag = analysis.min_seeds_diag;
  return g;
}

AblationConfig ExperimentConfig::ablation() const {
  AblationConfig a;
  a.vocab = env.vocab;
  a.max_len = env.max_len;
  a.num_prompts = env.num_prompts;
  a.success_reward = env.success_reward;
  a.seeds = seeds;
  a.base = ppo;
  a.small_batch = analysis.small_batch;
  a.large_batch = analysis.large_batch;
  a.batch_sweep = analysis.batch_sweep;
  a.ema_alpha = analysis.ema_alpha;
  return a;
}

DistShiftConfig ExperimentConfig::dist_shift() const {
  DistShiftConfig d;
  d.grid = env.grid;
  d.seeds = seeds;
  d.demos_per_prompt = method.demos_per_prompt;
  d.sft = method.sft;
  d.reward = reward;
  d.dpo = dpo.train;
  d.ppo = ppo;
  return d;
}

ExperimentConfig parse_config(const std::string& text, const std::string& profile) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("config parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                      ": " + e.what());
  }
  return config_from_json(j, profile);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::string& profile) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), profile);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what(), e.field());
  }
}

}  // namespace rlhf
