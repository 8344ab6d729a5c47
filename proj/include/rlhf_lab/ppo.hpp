#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rlhf_lab/models.hpp"
#include "rlhf_lab/oracles.hpp"
#include "rlhf_lab/reward.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

struct PpoConfig {
  std::size_t batch_size = 512;
  std::size_t minibatches = 4;
  double actor_lr = 1e-2;
  double critic_lr = 5e-3;
  double clip_ratio = 0.2;
  double value_clip = 0.2;
  double kl_coef = 0.1;
  double reward_clip = 20.0;
  double gae_lambda = 1.0;
  double discount = 1.0;
  /// Number of rollout/update iterations.
  std::size_t epochs = 200;
  /// Optimisation passes over each rollout batch.
  std::size_t update_passes = 1;
  double temperature = 1.0;
  std::size_t top_k = 200;
  bool adv_norm = true;
  bool value_norm = true;
  /// Reference EMA coefficient per iteration; 1.0 disables the update.
  double ema_alpha = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// What PPO optimises against: prompts plus a scalar score for a complete
/// response (a reward model, a ground-truth table, or a task predicate).
struct RlTask {
  std::size_t num_prompts = 0;
  std::vector<double> prompt_distribution;
  SequenceReward score;
};

RlTask bandit_task(const BanditEnv& env, const RewardModel& rm);
RlTask bandit_task(const BanditEnv& env, const Matrix& reward);
RlTask token_task(const TokenEnv& env);

struct RolloutSample {
  std::size_t prompt = 0;
  Tokens response;
  double score = 0.0;  // raw task/RM score before clipping
  std::vector<double> behavior_logp;
  std::vector<double> ref_logp;
  std::vector<double> rewards;     // KL-shaped, clipped score on the last token
  std::vector<double> values;      // critic estimates in reward units
  std::vector<double> old_raw_values;  // critic outputs at rollout time
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct RolloutBatch {
  std::vector<RolloutSample> samples;
  bool has_advantages = false;

  std::size_t token_count() const;
};

RolloutBatch rollout(const Policy& policy, const Policy& reference, const ValueModel& critic,
                     const RlTask& task, std::size_t n, const PpoConfig& cfg, Rng& rng);

/// GAE with a zero terminal bootstrap; returns = advantages + values.
void compute_gae(RolloutBatch& batch, double lambda, double discount);

/// Whole-batch standardisation (population std, 1e-8 guard).
void normalize_advantages(RolloutBatch& batch);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Clipped surrogate, mean over every token of the given samples.
LossAndGrad ppo_policy_loss(const Policy& policy, std::span<const RolloutSample> samples,
                            double clip_ratio, double* clip_fraction = nullptr,
                            double* approx_kl = nullptr);

/// Clipped value loss mean max((V-R)^2, (clip(V, V_old +- c) - R)^2), in the
/// critic's output space.
LossAndGrad ppo_value_loss(const ValueModel& critic, std::span<const RolloutSample> samples,
                           double value_clip);

struct PpoOptimizers {
  AdamState actor;
  AdamState critic;
};

PpoStats ppo_update(Policy& policy, ValueModel& critic, const RolloutBatch& batch,
                    const PpoConfig& cfg, PpoOptimizers& opt, Rng& rng);

struct PpoMetric {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double kl = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double task_reward = std::numeric_limits<double>::quiet_NaN();
};

struct PpoResult {
  Policy policy;
  ValueModel critic;
  Policy reference;
  std::vector<PpoMetric> metrics;
};

/// Exact-evaluation hooks for the metrics series. objective_reward is used
/// for the exact objective (relative to the initial reference); task_reward,
/// when set, is tracked as the exact expected task score.
struct PpoEvaluation {
  SequenceReward objective_reward;
  SequenceReward task_reward;
  double enumeration_budget = 1 << 16;
};

PpoResult train_ppo(Policy policy, ValueModel critic, Policy reference, const RlTask& task,
                    const PpoConfig& cfg, const PpoEvaluation& eval = {});

/// Critic matching the policy's context structure.
ValueModel make_critic(const Policy& policy);

}  // namespace rlhf
