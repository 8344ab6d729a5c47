#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "rlhf_lab/models.hpp"
#include "rlhf_lab/reward.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

/// DPO loss over bandit comparisons; gradient w.r.t. the policy only.
/// The margin is the difference of implicit rewards, so the loss equals the
/// Bradley-Terry loss of the implicit-reward table bit for bit.
LossAndGrad dpo_loss_and_grad(const Policy& policy, const Policy& reference,
                              std::span<const PreferencePair> batch, double beta);
double dpo_loss(const Policy& policy, const Policy& reference,
                std::span<const PreferencePair> batch, double beta);

/// Implicit reward table beta * log(pi / pi_ref) for a bandit policy.
Matrix implicit_reward_table(const Policy& policy, const Policy& reference, double beta);

struct Demonstration {
  std::size_t prompt = 0;
  Tokens response;
  double weight = 1.0;
};

struct SftConfig {
  double lr = 1e-2;
  std::size_t steps = 1000;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct SftResult {
  Policy policy;
  std::vector<double> losses;  // full-data weighted NLL after each step
};

LossAndGrad sft_loss_and_grad(const Policy& policy, std::span<const Demonstration> demos);
SftResult train_sft(Policy policy, const std::vector<Demonstration>& demos, const SftConfig& cfg);

/// Weighted demonstrations that make SFT minimise cross-entropy to a target
/// probability table (distillation).
std::vector<Demonstration> distillation_demos(const Matrix& target_probs);

struct DpoConfig {
  double beta = 0.1;
  double lr = 1e-2;
  std::size_t steps = 1000;
  std::size_t batch_size = 64;
  std::size_t eval_interval = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DpoMetric {
  std::size_t step = 0;
  double loss = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double ood_mass = 0.0;
};

struct DpoResult {
  Policy policy;
  std::vector<DpoMetric> metrics;
};

/// When env is given, metrics carry the exact objective under its true
/// reward (relative to the training reference).
DpoResult train_dpo(Policy policy, const Policy& reference, const PreferenceDataset& dataset,
                    const DpoConfig& cfg, const BanditEnv* env = nullptr);

struct DpoIterConfig {
  std::size_t rounds = 4;
  std::size_t pairs_per_round = 512;
  DpoConfig inner;
  /// Winners scoring below this are replaced by the env's true best response.
  std::optional<double> winner_floor;
  std::uint64_t seed = 0;
};

struct DpoRoundSummary {
  std::size_t round = 0;
  std::size_t pairs = 0;
  std::size_t injected_winners = 0;
  double final_dpo_loss = 0.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  double ood_mass = 0.0;
  Policy reference;  // reference used this round
  Policy policy;     // policy emitted this round
};

struct DpoIterResult {
  Policy policy;
  std::vector<DpoRoundSummary> rounds;
};

/// Each round samples comparisons from the current policy, labels them,
/// and runs DPO with the current policy as reference. Objectives are
/// measured against env.reference under the true reward.
DpoIterResult train_dpo_iter(Policy policy, const BanditEnv& env, const ResponseScorer& labeler,
                             const DpoIterConfig& cfg);

}  // namespace rlhf
