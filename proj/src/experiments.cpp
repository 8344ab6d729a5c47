#include "rlhf_lab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

#include "rlhf_lab/oracles.hpp"

namespace rlhf {

bool VerdictReport::passed() const {
  return !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

const Check& VerdictReport::check(const std::string& check_name) const {
  for (const auto& c : checks) {
    if (c.name == check_name) return c;
  }
  throw std::out_of_range("no check named " + check_name);
}

// ---------------------------------------------------------------------------

CounterexampleOutcome verify_counterexample(const CounterexampleConfig& cfg) {
  const auto inst = make_counterexample(cfg.ref_smoothing);
  const auto& env = inst.env;
  const auto& pairs = inst.dataset.pairs();
  const Policy reference = Policy::tabular_from_probs(env.reference);
  const double beta = cfg.beta;

  auto candidate = [&](double delta) {
    Matrix probs(1, 3);
    probs(0, 0) = 0.1;
    probs(0, 1) = delta;
    probs(0, 2) = 0.9 - delta;
    return Policy::tabular_from_probs(probs);
  };

  CounterexampleOutcome out;
  out.verdict.name = "counterexample";
  auto& checks = out.verdict.checks;

  // DPO minimiser membership: L = log(1 + (b/a)^beta) -> 0 as b -> 0.
  out.candidate_loss = dpo_loss(candidate(cfg.delta), reference, pairs, beta);
  out.candidate_closed_form = std::log1p(std::pow(cfg.delta / 0.1, beta));
  checks.push_back({"dpo_candidate_loss", out.candidate_loss < cfg.candidate_loss_tolerance,
                    out.candidate_loss, cfg.candidate_loss_tolerance});
  checks.push_back({"dpo_candidate_closed_form",
                    std::abs(out.candidate_loss - out.candidate_closed_form) < 1e-12,
                    std::abs(out.candidate_loss - out.candidate_closed_form), 1e-12});
  bool decreasing = true;
  double prev = std::numeric_limits<double>::infinity();
  for (double d = 1e-2; d >= 1e-10; d /= 10.0) {
    const double l = dpo_loss(candidate(d), reference, pairs, beta);
    out.delta_sweep.emplace_back(d, l);
    decreasing = decreasing && l < prev;
    prev = l;
  }
  checks.push_back({"dpo_candidate_loss_decreasing_in_delta", decreasing,
                    out.delta_sweep.back().second, 0.0});

  // Reward model and the closed-form PPO policy it induces.
  auto rm = train_reward_model(RewardModel::tabular(1, 3), inst.dataset, cfg.reward);
  out.min_reward_loss = rm.losses.empty() ? reward_nll_loss(rm.model, pairs) : rm.losses.back();
  const Matrix r = rm.model.table();
  const Matrix ppo = optimal_distribution(env.reference, r, beta);
  out.ppo_policy.assign(ppo.row(0).begin(), ppo.row(0).end());
  // Z >= pi_ref(y1) exp(r1 / beta).
  out.ppo_y3_analytic_bound =
      env.reference(0, 2) / env.reference(0, 0) * std::exp((r(0, 2) - r(0, 0)) / beta);
  const double y3 = ppo(0, 2);
  checks.push_back({"ppo_y3_mass", y3 < cfg.ppo_y3_bound, y3, cfg.ppo_y3_bound});
  checks.push_back({"ppo_y3_within_analytic_bound", y3 <= out.ppo_y3_analytic_bound * (1 + 1e-12), y3,
                    out.ppo_y3_analytic_bound});
  checks.push_back({"ppo_argmax_is_y1", ppo(0, 0) > ppo(0, 1) && ppo(0, 0) > ppo(0, 2), ppo(0, 0), 0.0});

  // The DPO candidate puts 0.9 - delta on y3, which no closed-form policy with the
  // learned reward can.
  const double gap = (0.9 - cfg.delta) - y3;
  checks.push_back({"candidate_vs_ppo_y3_gap", gap > 0.5, gap, 0.5});

  // Minimum losses coincide.
  auto dpo = train_dpo(reference, reference, inst.dataset, [&] {
    DpoConfig c = cfg.dpo;
    c.beta = beta;
    return c;
  }());
  out.min_dpo_loss = dpo.metrics.back().loss;
  const double diff = std::abs(out.min_reward_loss - out.min_dpo_loss);
  checks.push_back({"min_reward_loss_equals_min_dpo_loss", diff < cfg.min_loss_tolerance, diff,
                    cfg.min_loss_tolerance});

  // Policy built from the reward minimiser attains the same DPO loss.
  const Policy from_reward = optimal_policy(reference, r, beta);
  const double through = dpo_loss(from_reward, reference, pairs, beta);
  const double lr = reward_nll_loss(r, pairs);
  checks.push_back({"dpo_loss_of_reward_induced_policy", std::abs(through - lr) < 1e-9,
                    std::abs(through - lr), 1e-9});

  out.reward_model = std::move(rm.model);
  return out;
}

// ---------------------------------------------------------------------------

GridStudyConfig::GridStudyConfig() {
  // A narrow policy keeps DPO's shared-feature spill onto uncovered cells
  // visible; longer DPO runs let it decay again.
  policy_mlp.hidden = 24;
  dpo.steps = 150;
  ppo.batch_size = 512;
  ppo.minibatches = 4;
  ppo.actor_lr = 1e-2;
  ppo.critic_lr = 5e-3;
  ppo.epochs = 200;
  ppo.top_k = 200;
}

namespace {

Matrix coverage_mask(const PreferenceDataset& data) {
  Matrix m(data.num_prompts(), data.num_responses());
  for (const auto& [x, y] : data.coverage()) m(x, y) = 1.0;
  return m;
}

std::size_t count_if_true(const std::vector<bool>& v) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), true));
}

}  // namespace

GridStudyResult run_grid_study(const GridStudyConfig& cfg) {
  GridStudyResult result;
  const std::size_t n = cfg.grid.n;
  for (const auto seed : cfg.seeds) {
    const auto inst = make_grid_env(cfg.grid, seed);
    const auto& env = inst.env;
    Rng rng = Rng(seed).split(101);

    Policy reference;
    if (cfg.policy_kind == ModelKind::Mlp) {
      Rng init_rng = rng.split(1);
      SftConfig distill = cfg.distill;
      distill.seed = seed;
      reference = train_sft(Policy::mlp(n, n, cfg.policy_mlp, init_rng), distillation_demos(env.reference), distill).policy;
    } else {
      reference = Policy::tabular_from_probs(env.reference);
    }

    RewardModel rm0;
    if (cfg.reward_kind == ModelKind::Mlp) {
      Rng init_rng = rng.split(2);
      rm0 = RewardModel::mlp(n, n, cfg.reward_mlp, init_rng);
    } else {
      rm0 = RewardModel::tabular(n, n);
    }
    RewardTrainConfig rcfg = cfg.reward;
    rcfg.seed = seed;
    const RewardModel rm = train_reward_model(rm0, inst.dataset, rcfg).model;

    DpoConfig dcfg = cfg.dpo;
    dcfg.seed = seed;
    const Policy dpo = train_dpo(reference, reference, inst.dataset, dcfg).policy;

    PpoConfig pcfg = cfg.ppo;
    pcfg.seed = seed;
    const auto ppo = train_ppo(reference, make_critic(reference), reference, bandit_task(env, rm), pcfg).policy;

    GridSeedResult s;
    s.seed = seed;
    s.coverage = coverage_mask(inst.dataset);
    s.reference = reference.prob_table();
    s.dpo = dpo.prob_table();
    s.ppo = ppo.prob_table();
    s.reward = rm.table();
    s.max_dpo_inflation = ood_mass(dpo, reference, inst.dataset).max_uncovered_delta();
    s.max_ppo_leak = ood_mass(ppo, reference, inst.dataset).max_uncovered_delta();
    for (std::size_t x = 0; x < n; ++x) {
      auto row = s.ppo.row(x);
      if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == x) {
        ++s.ppo_diag_argmax;
      }
    }
    s.inflation = s.max_dpo_inflation >= cfg.dpo_inflation_threshold;
    s.no_leak = s.max_ppo_leak <= cfg.ppo_leak_threshold;
    s.diag_ok = s.ppo_diag_argmax >= cfg.min_diag_argmax;
    result.seeds.push_back(std::move(s));
  }

  std::vector<bool> inflation;
  std::vector<bool> no_leak;
  std::vector<bool> diag;
  for (const auto& s : result.seeds) {
    inflation.push_back(s.inflation);
    no_leak.push_back(s.no_leak);
    diag.push_back(s.diag_ok);
  }
  result.verdict.name = "grid_study";
  const auto a = count_if_true(inflation);
  const auto b = count_if_true(no_leak);
  const auto c = count_if_true(diag);
  result.verdict.checks = {
      {"dpo_uncovered_inflation_seeds", a >= cfg.min_seeds_inflation, static_cast<double>(a),
       static_cast<double>(cfg.min_seeds_inflation)},
      {"ppo_uncovered_no_leak_seeds", b >= cfg.min_seeds_no_leak, static_cast<double>(b),
       static_cast<double>(cfg.min_seeds_no_leak)},
      {"ppo_diagonal_argmax_seeds", c >= cfg.min_seeds_diag, static_cast<double>(c),
       static_cast<double>(cfg.min_seeds_diag)},
  };
  return result;
}

// ---------------------------------------------------------------------------

OracleAgreementConfig::OracleAgreementConfig() {
  ppo.batch_size = 512;
  ppo.minibatches = 4;
  ppo.actor_lr = 1e-2;
  ppo.critic_lr = 5e-3;
  ppo.epochs = 300;
}

OracleAgreementResult run_oracle_agreement(const OracleAgreementConfig& cfg) {
  OracleAgreementResult result;
  double worst = 0.0;
  for (const auto seed : cfg.seeds) {
    const auto inst = make_grid_env(cfg.grid, seed);
    RewardTrainConfig rcfg = cfg.reward;
    rcfg.seed = seed;
    const auto rm = train_reward_model(RewardModel::tabular(cfg.grid.n, cfg.grid.n), inst.dataset, rcfg).model;
    const auto reference = Policy::tabular_from_probs(inst.env.reference);
    PpoConfig pcfg = cfg.ppo;
    pcfg.seed = seed;
    const auto ppo = train_ppo(reference, make_critic(reference), reference, bandit_task(inst.env, rm), pcfg).policy;

    OracleAgreementSeed s;
    s.seed = seed;
    s.ppo = ppo.prob_table();
    s.closed_form = optimal_distribution(inst.env.reference, rm.table(), pcfg.kl_coef);
    for (std::size_t x = 0; x < s.ppo.rows(); ++x) {
      double tv = 0.0;
      for (std::size_t y = 0; y < s.ppo.cols(); ++y) tv += 0.5 * std::abs(s.ppo(x, y) - s.closed_form(x, y));
      s.tv.push_back(tv);
      s.max_tv = std::max(s.max_tv, tv);
    }
    worst = std::max(worst, s.max_tv);
    result.seeds.push_back(std::move(s));
  }
  result.verdict.name = "oracle_agreement";
  result.verdict.checks = {{"max_per_prompt_tv", worst <= cfg.tv_tolerance, worst, cfg.tv_tolerance}};
  return result;
}

// ---------------------------------------------------------------------------

AblationConfig::AblationConfig() {
  base.minibatches = 4;
  base.actor_lr = 1e-2;
  base.critic_lr = 5e-3;
  base.epochs = 100;
  base.adv_norm = true;
  base.value_norm = true;
}

const AblationSummary& AblationResult::summary(const std::string& variant) const {
  for (const auto& s : summaries) {
    if (s.variant == variant) return s;
  }
  throw std::out_of_range("no ablation variant " + variant);
}

AblationResult run_ablation(const AblationConfig& cfg) {
  struct Variant {
    std::string group;
    std::string name;
    std::size_t batch;
    bool adv_norm;
    double ema;
  };
  std::vector<Variant> variants = {
      {"cumulative", "baseline", cfg.small_batch, false, 1.0},
      {"cumulative", "+adv_norm", cfg.small_batch, true, 1.0},
      {"cumulative", "+large_batch", cfg.large_batch, true, 1.0},
      {"cumulative", "+ref_ema", cfg.large_batch, true, cfg.ema_alpha},
  };
  for (const auto b : cfg.batch_sweep) {
    variants.push_back({"batch_sweep", "batch_" + std::to_string(b), b, true, 1.0});
  }

  AblationResult result;
  for (const auto seed : cfg.seeds) {
    const auto env = make_token_env(cfg.vocab, cfg.max_len, cfg.num_prompts, seed, cfg.success_reward);
    const auto task = token_task(env);
    const Policy init = Policy::autoregressive(cfg.num_prompts, cfg.vocab, cfg.max_len);
    // Identical settings share one run.
    std::map<std::tuple<std::size_t, bool, double>, std::pair<double, double>> cache;
    for (const auto& v : variants) {
      const auto key = std::make_tuple(v.batch, v.adv_norm, v.ema);
      auto it = cache.find(key);
      if (it == cache.end()) {
        PpoConfig pc = cfg.base;
        pc.batch_size = v.batch;
        pc.adv_norm = v.adv_norm;
        pc.ema_alpha = v.ema;
        pc.seed = seed;
        const auto run = train_ppo(init, make_critic(init), init, task, pc);
        it = cache.emplace(key, std::make_pair(run.metrics.back().task_reward, run.metrics.back().objective)).first;
      }
      result.rows.push_back({v.group, v.name, seed, v.batch, it->second.first, it->second.second});
    }
  }

  for (const auto& v : variants) {
    AblationSummary s{v.group, v.name, 0.0, 0.0, 0};
    for (const auto& r : result.rows) {
      if (r.variant == v.name) {
        s.mean += r.final_reward;
        ++s.n;
      }
    }
    s.mean /= static_cast<double>(s.n);
    for (const auto& r : result.rows) {
      if (r.variant == v.name) s.std += (r.final_reward - s.mean) * (r.final_reward - s.mean);
    }
    s.std = std::sqrt(s.std / static_cast<double>(s.n));
    result.summaries.push_back(s);
  }
  std::sort(result.summaries.begin(), result.summaries.end(), [](const auto& a, const auto& b) {
    return std::tie(a.group, a.variant) < std::tie(b.group, b.variant);
  });

  result.verdict.name = "ablation";
  const double base = result.summary("baseline").mean;
  const double large = result.summary("+large_batch").mean;
  result.verdict.checks.push_back({"large_batch_at_least_baseline", large >= base, large - base, 0.0});
  std::size_t monotone = 0;
  for (std::size_t i = 1; i < cfg.batch_sweep.size(); ++i) {
    const double lo = result.summary("batch_" + std::to_string(cfg.batch_sweep[i - 1])).mean;
    const double hi = result.summary("batch_" + std::to_string(cfg.batch_sweep[i])).mean;
    if (hi >= lo) ++monotone;
  }
  const std::size_t needed = cfg.batch_sweep.empty() ? 0 : cfg.batch_sweep.size() - 1;
  result.verdict.checks.push_back({"batch_sweep_non_decreasing_steps", monotone >= needed,
                                   static_cast<double>(monotone), static_cast<double>(needed)});
  return result;
}

// ---------------------------------------------------------------------------

DistShiftConfig::DistShiftConfig() {
  // Enough on-policy budget to climb out of a base with little mass on the
  // covered responses.
  ppo.batch_size = 256;
  ppo.minibatches = 4;
  ppo.actor_lr = 3e-2;
  ppo.critic_lr = 5e-3;
  ppo.epochs = 400;
}

double DistShiftResult::objective(const std::string& method, const std::string& base,
                                  std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.method == method && c.base == base && c.seed == seed) return c.objective;
  }
  throw std::out_of_range("no distribution-shift cell " + method + "/" + base);
}

DistShiftResult run_distribution_shift(const DistShiftConfig& cfg) {
  DistShiftResult result;
  std::size_t dpo_matched_wins = 0;
  std::size_t dpo_more_sensitive = 0;
  for (const auto seed : cfg.seeds) {
    const auto inst = make_grid_env(cfg.grid, seed);
    const auto& env = inst.env;
    const Policy anchor = Policy::tabular_from_probs(env.reference);
    const std::size_t n = env.num_prompts;

    std::vector<Demonstration> matched;
    for (const auto& p : inst.dataset.pairs()) matched.push_back({p.prompt, {static_cast<int>(p.winner)}, 1.0});
    std::vector<Demonstration> mismatched;
    Rng demo_rng = Rng(seed).split(202);
    for (std::size_t x = 0; x < n; ++x) {
      const auto outside = inst.dataset.uncovered(x);
      for (std::size_t k = 0; k < cfg.demos_per_prompt; ++k) {
        mismatched.push_back({x, {static_cast<int>(outside[demo_rng.below(outside.size())])}, 1.0});
      }
    }

    SftConfig scfg = cfg.sft;
    scfg.seed = seed;
    const Policy init = Policy::tabular_from_probs(env.reference);
    const Policy matched_base = train_sft(init, matched, scfg).policy;
    const Policy mismatched_base = train_sft(init, mismatched, scfg).policy;

    RewardTrainConfig rcfg = cfg.reward;
    rcfg.seed = seed;
    const RewardModel rm = train_reward_model(RewardModel::tabular(n, n), inst.dataset, rcfg).model;

    auto evaluate = [&](const Policy& p) {
      return rlhf_objective(p, anchor, env.true_reward, cfg.dpo.beta, env.prompt_distribution);
    };
    for (const auto& [label, base] : {std::pair<std::string, const Policy*>{"matched", &matched_base},
                                      std::pair<std::string, const Policy*>{"mismatched", &mismatched_base}}) {
      DpoConfig dcfg = cfg.dpo;
      dcfg.seed = seed;
      const Policy dpo = train_dpo(*base, *base, inst.dataset, dcfg).policy;
      result.cells.push_back({"dpo", label, seed, evaluate(dpo)});
      PpoConfig pcfg = cfg.ppo;
      pcfg.seed = seed;
      const Policy ppo = train_ppo(*base, make_critic(*base), *base, bandit_task(env, rm), pcfg).policy;
      result.cells.push_back({"ppo", label, seed, evaluate(ppo)});
    }
    const double dpo_gap = result.objective("dpo", "matched", seed) - result.objective("dpo", "mismatched", seed);
    const double ppo_gap = result.objective("ppo", "matched", seed) - result.objective("ppo", "mismatched", seed);
    if (dpo_gap >= 0.0) ++dpo_matched_wins;
    if (ppo_gap <= dpo_gap) ++dpo_more_sensitive;
  }
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t need_a = (4 * n_seeds + 4) / 5;  // 4 of 5
  const std::size_t need_b = (3 * n_seeds + 4) / 5;  // 3 of 5
  result.verdict.name = "distribution_shift";
  result.verdict.checks = {
      {"dpo_matched_beats_mismatched_seeds", dpo_matched_wins >= need_a,
       static_cast<double>(dpo_matched_wins), static_cast<double>(need_a)},
      {"dpo_gap_exceeds_ppo_gap_seeds", dpo_more_sensitive >= need_b,
       static_cast<double>(dpo_more_sensitive), static_cast<double>(need_b)},
  };
  return result;
}

}  // namespace rlhf
