#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlhf_lab/dpo.hpp"
#include "rlhf_lab/models.hpp"
#include "rlhf_lab/ppo.hpp"
#include "rlhf_lab/reward.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

struct Check {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
};

struct VerdictReport {
  std::string name;
  std::vector<Check> checks;

  bool passed() const;
  const Check& check(const std::string& check_name) const;
};

// ---------------------------------------------------------------------------
// Three-action counter-example

struct CounterexampleConfig {
  double ref_smoothing = 1e-6;
  /// Loss at the candidate is log(1 + (b/a)^beta); see README for why the
  /// check runs at beta = 1.
  double beta = 1.0;
  double delta = 1e-6;
  double candidate_loss_tolerance = 1e-5;
  double ppo_y3_bound = 1e-3;
  double min_loss_tolerance = 1e-3;
  RewardTrainConfig reward{0.1, 2000, 1, 0};
  DpoConfig dpo{1.0, 0.1, 2000, 1, 100, 0};
  std::uint64_t seed = 0;
};

struct CounterexampleOutcome {
  VerdictReport verdict;
  double candidate_loss = 0.0;
  double candidate_closed_form = 0.0;
  std::vector<std::pair<double, double>> delta_sweep;  // (delta, loss)
  std::vector<double> ppo_policy;                      // closed-form policy from the learned reward
  double ppo_y3_analytic_bound = 0.0;
  double min_reward_loss = 0.0;
  double min_dpo_loss = 0.0;
  RewardModel reward_model;
};

CounterexampleOutcome verify_counterexample(const CounterexampleConfig& cfg);

// ---------------------------------------------------------------------------
// Grid study (coverage / reference / DPO / PPO / learned reward heatmaps)

struct GridStudyConfig {
  GridOptions grid;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  ModelKind policy_kind = ModelKind::Mlp;
  ModelKind reward_kind = ModelKind::Mlp;
  MlpInit policy_mlp;
  MlpInit reward_mlp;
  SftConfig distill{1e-2, 1500, 64, 0};
  RewardTrainConfig reward{1e-3, 2000, 64, 0};
  DpoConfig dpo{0.1, 1e-3, 2000, 64, 100, 0};
  PpoConfig ppo;
  double dpo_inflation_threshold = 0.05;
  double ppo_leak_threshold = 0.01;
  std::size_t min_diag_argmax = 7;
  std::size_t min_seeds_inflation = 3;
  std::size_t min_seeds_no_leak = 4;
  std::size_t min_seeds_diag = 4;

  GridStudyConfig();
};

struct GridSeedResult {
  std::uint64_t seed = 0;
  Matrix coverage;
  Matrix reference;
  Matrix dpo;
  Matrix ppo;
  Matrix reward;
  double max_dpo_inflation = 0.0;
  double max_ppo_leak = 0.0;
  std::size_t ppo_diag_argmax = 0;
  bool inflation = false;
  bool no_leak = false;
  bool diag_ok = false;
};

struct GridStudyResult {
  std::vector<GridSeedResult> seeds;
  VerdictReport verdict;
};

GridStudyResult run_grid_study(const GridStudyConfig& cfg);

// ---------------------------------------------------------------------------
// Tabular PPO against the closed-form optimum of the learned reward

struct OracleAgreementConfig {
  GridOptions grid;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  RewardTrainConfig reward{5e-2, 500, 64, 0};
  /// kl_coef doubles as the beta of the closed form.
  PpoConfig ppo;
  double tv_tolerance = 0.05;

  OracleAgreementConfig();
};

struct OracleAgreementSeed {
  std::uint64_t seed = 0;
  std::vector<double> tv;  // per prompt
  double max_tv = 0.0;
  Matrix ppo;
  Matrix closed_form;
};

struct OracleAgreementResult {
  std::vector<OracleAgreementSeed> seeds;
  VerdictReport verdict;
};

OracleAgreementResult run_oracle_agreement(const OracleAgreementConfig& cfg);

// ---------------------------------------------------------------------------
// PPO technique ablation on the token task

struct AblationConfig {
  std::size_t vocab = 4;
  std::size_t max_len = 4;
  std::size_t num_prompts = 4;
  double success_reward = 10.0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  PpoConfig base;
  std::size_t small_batch = 64;
  std::size_t large_batch = 512;
  std::vector<std::size_t> batch_sweep = {64, 128, 256, 512};
  double ema_alpha = 0.995;

  AblationConfig();
};

struct AblationRow {
  std::string group;    // "cumulative" or "batch_sweep"
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  double final_reward = 0.0;
  double objective = 0.0;
};

struct AblationSummary {
  std::string group;
  std::string variant;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summaries;
  VerdictReport verdict;

  const AblationSummary& summary(const std::string& variant) const;
};

AblationResult run_ablation(const AblationConfig& cfg);

// ---------------------------------------------------------------------------
// Distribution shift between the SFT base and the preference data

struct DistShiftConfig {
  GridOptions grid;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t demos_per_prompt = 32;
  SftConfig sft{5e-2, 300, 64, 0};
  RewardTrainConfig reward{5e-2, 500, 64, 0};
  DpoConfig dpo{0.1, 1e-2, 500, 64, 100, 0};
  PpoConfig ppo;

  DistShiftConfig();
};

struct DistShiftCell {
  std::string method;  // "dpo" or "ppo"
  std::string base;    // "matched" or "mismatched"
  std::uint64_t seed = 0;
  double objective = 0.0;
};

struct DistShiftResult {
  std::vector<DistShiftCell> cells;
  VerdictReport verdict;

  double objective(const std::string& method, const std::string& base, std::uint64_t seed) const;
};

DistShiftResult run_distribution_shift(const DistShiftConfig& cfg);

}  // namespace rlhf
