#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rlhf_lab/models.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Bradley-Terry negative log-likelihood averaged over the pairs.
LossAndGrad reward_nll_loss_and_grad(const RewardModel& rm, std::span<const PreferencePair> pairs);
LossAndGrad reward_nll_loss_and_grad(const RewardModel& rm, const PreferenceDataset& dataset);
double reward_nll_loss(const RewardModel& rm, std::span<const PreferencePair> pairs);

/// Same loss evaluated on an arbitrary reward table [prompt x response].
double reward_nll_loss(const Matrix& reward, std::span<const PreferencePair> pairs);

struct RewardTrainConfig {
  double lr = 1e-2;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct RewardTrainResult {
  RewardModel model;
  /// Full-dataset loss after each optimizer step.
  std::vector<double> losses;
};

RewardTrainResult train_reward_model(RewardModel rm, const PreferenceDataset& dataset,
                                     const RewardTrainConfig& cfg);

struct DivergenceProbe {
  std::size_t prompt = 0;
  std::size_t y_prime = 0;  // response pushed up
  std::size_t y_star = 0;   // response pushed down
};

struct DivergenceConfig {
  double eps_loss = 0.01;
  double threshold = 50.0;
  std::size_t max_steps = 2000;
  double ascent_lr = 0.5;
  double descent_lr = 0.5;
};

struct DivergenceReport {
  bool reached = false;
  std::size_t steps = 0;
  double final_gap = 0.0;
  double final_loss = 0.0;
  std::vector<double> gaps;
  std::vector<double> losses;
};

/// Pushes r(x, y') - r(x, y*) upward while holding the preference loss at or
/// below eps_loss. Requires the probe pair to be non-inferable from an
/// acyclic dataset.
DivergenceReport ood_reward_divergence(RewardModel rm, const PreferenceDataset& dataset,
                                       const DivergenceProbe& probe, const DivergenceConfig& cfg);

}  // namespace rlhf
