#include "rlhf_lab/dpo.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rlhf_lab/oracles.hpp"

namespace rlhf {
namespace {

void check_reference(std::size_t prompt, std::size_t response, double lr) {
  if (!std::isfinite(lr)) {
    throw std::invalid_argument("reference assigns zero probability to response " +
                                std::to_string(response) + " of prompt " + std::to_string(prompt) +
                                "; apply epsilon smoothing to the reference");
  }
}

template <typename T>
std::vector<T> draw_batch(const std::vector<T>& items, std::size_t batch_size, Rng& rng) {
  if (batch_size >= items.size()) return items;
  std::vector<T> batch(batch_size);
  for (auto& b : batch) b = items[rng.below(items.size())];
  return batch;
}

}  // namespace

LossAndGrad dpo_loss_and_grad(const Policy& policy, const Policy& reference,
                              std::span<const PreferencePair> batch, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo: beta must be positive");
  if (batch.empty()) throw std::invalid_argument("dpo: empty batch");
  if (!policy.is_bandit() || !reference.is_bandit()) {
    throw std::invalid_argument("dpo: bandit policies required");
  }
  LossAndGrad out{0.0, policy.params().zeros_like()};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& p : batch) {
    check_reference(p.prompt, p.winner, policy_logprob(reference, p.prompt, p.winner));
    check_reference(p.prompt, p.loser, policy_logprob(reference, p.prompt, p.loser));
    const double margin = implicit_reward(policy, reference, p.prompt, p.winner, beta) -
                          implicit_reward(policy, reference, p.prompt, p.loser, beta);
    total -= log_sigmoid(margin);
    const double dm = -sigmoid(-margin) * inv_n * beta;
    const int w[] = {static_cast<int>(p.winner)};
    const int l[] = {static_cast<int>(p.loser)};
    accumulate_logprob_grad(policy, p.prompt, w, dm, out.grad);
    accumulate_logprob_grad(policy, p.prompt, l, -dm, out.grad);
  }
  out.loss = total / static_cast<double>(batch.size());
  return out;
}

double dpo_loss(const Policy& policy, const Policy& reference,
                std::span<const PreferencePair> batch, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo: beta must be positive");
  if (batch.empty()) throw std::invalid_argument("dpo: empty batch");
  double total = 0.0;
  for (const auto& p : batch) {
    const double margin = implicit_reward(policy, reference, p.prompt, p.winner, beta) -
                          implicit_reward(policy, reference, p.prompt, p.loser, beta);
    total -= log_sigmoid(margin);
  }
  return total / static_cast<double>(batch.size());
}

Matrix implicit_reward_table(const Policy& policy, const Policy& reference, double beta) {
  if (!policy.is_bandit()) throw std::invalid_argument("implicit_reward_table: bandit policy required");
  Matrix m(policy.num_prompts(), policy.num_actions());
  for (std::size_t x = 0; x < m.rows(); ++x) {
    for (std::size_t y = 0; y < m.cols(); ++y) m(x, y) = implicit_reward(policy, reference, x, y, beta);
  }
  return m;
}

LossAndGrad sft_loss_and_grad(const Policy& policy, std::span<const Demonstration> demos) {
  if (demos.empty()) throw std::invalid_argument("sft: no demonstrations");
  double total_w = 0.0;
  for (const auto& d : demos) total_w += d.weight;
  if (!(total_w > 0.0)) throw std::invalid_argument("sft: demonstration weights sum to zero");
  LossAndGrad out{0.0, policy.params().zeros_like()};
  for (const auto& d : demos) {
    if (d.weight == 0.0) continue;
    out.loss -= d.weight * policy_logprob(policy, d.prompt, d.response);
    accumulate_logprob_grad(policy, d.prompt, d.response, -d.weight / total_w, out.grad);
  }
  out.loss /= total_w;
  return out;
}

SftResult train_sft(Policy policy, const std::vector<Demonstration>& demos, const SftConfig& cfg) {
  if (demos.empty()) throw std::invalid_argument("train_sft: no demonstrations");
  if (!(cfg.lr > 0.0) || cfg.batch_size == 0) throw std::invalid_argument("train_sft: bad config");
  Rng rng = Rng(cfg.seed).split(13);
  AdamState state;
  AdamConfig adam;
  adam.lr = cfg.lr;
  SftResult result;
  result.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = draw_batch(demos, cfg.batch_size, rng);
    auto lg = sft_loss_and_grad(policy, batch);
    if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
      throw std::runtime_error("SFT diverged at step " + std::to_string(step));
    }
    adam_step(policy.params(), lg.grad, state, adam);
    result.losses.push_back(sft_loss_and_grad(policy, demos).loss);
  }
  result.policy = std::move(policy);
  return result;
}

std::vector<Demonstration> distillation_demos(const Matrix& target_probs) {
  std::vector<Demonstration> demos;
  for (std::size_t x = 0; x < target_probs.rows(); ++x) {
    for (std::size_t y = 0; y < target_probs.cols(); ++y) {
      if (target_probs(x, y) > 0.0) {
        demos.push_back({x, Tokens{static_cast<int>(y)}, target_probs(x, y)});
      }
    }
  }
  return demos;
}

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo config: beta must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("dpo config: lr must be positive");
  if (batch_size == 0) throw std::invalid_argument("dpo config: batch_size must be positive");
  if (eval_interval == 0) throw std::invalid_argument("dpo config: eval_interval must be positive");
}

DpoResult train_dpo(Policy policy, const Policy& reference, const PreferenceDataset& dataset,
                    const DpoConfig& cfg, const BanditEnv* env) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train_dpo: empty dataset");
  Rng rng = Rng(cfg.seed).split(17);
  AdamState state;
  AdamConfig adam;
  adam.lr = cfg.lr;
  DpoResult result;
  auto record = [&](std::size_t step) {
    DpoMetric m;
    m.step = step;
    m.loss = dpo_loss(policy, reference, dataset.pairs(), cfg.beta);
    if (env != nullptr) {
      m.objective = rlhf_objective(policy, reference, env->true_reward, cfg.beta, env->prompt_distribution);
    }
    m.ood_mass = ood_mass(policy, reference, dataset).mean_uncovered_mass();
    result.metrics.push_back(m);
  };
  record(0);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = draw_batch(dataset.pairs(), cfg.batch_size, rng);
    auto lg = dpo_loss_and_grad(policy, reference, batch, cfg.beta);
    if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
      throw std::runtime_error("DPO diverged at step " + std::to_string(step));
    }
    adam_step(policy.params(), lg.grad, state, adam);
    if (step % cfg.eval_interval == 0 || step == cfg.steps) record(step);
  }
  result.policy = std::move(policy);
  return result;
}

DpoIterResult train_dpo_iter(Policy policy, const BanditEnv& env, const ResponseScorer& labeler,
                             const DpoIterConfig& cfg) {
  if (cfg.rounds < 1) throw std::invalid_argument("train_dpo_iter: rounds must be >= 1");
  cfg.inner.validate();
  const Policy anchor = Policy::tabular_from_probs(env.reference);
  const double beta = cfg.inner.beta;
  Rng root(cfg.seed);
  DpoIterResult result;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    Rng rng = root.split(round);
    auto data = sample_preferences(env, policy, labeler, cfg.pairs_per_round, rng);
    std::size_t injected = 0;
    if (cfg.winner_floor) {
      PreferenceDataset patched(env.num_prompts, env.num_responses);
      for (auto p : data.pairs()) {
        if (labeler(p.prompt, p.winner) < *cfg.winner_floor) {
          const std::size_t best = env.best_response(p.prompt);
          if (best == p.loser) p.loser = p.winner;
          p.winner = best;
          ++injected;
        }
        patched.add(p);
      }
      data = std::move(patched);
    }
    DpoRoundSummary summary;
    summary.round = round;
    summary.pairs = data.size();
    summary.injected_winners = injected;
    summary.reference = policy;
    summary.objective_before = rlhf_objective(policy, anchor, env.true_reward, beta, env.prompt_distribution);
    DpoConfig inner = cfg.inner;
    inner.seed = cfg.inner.seed + round;
    auto trained = train_dpo(policy, summary.reference, data, inner);
    policy = std::move(trained.policy);
    summary.final_dpo_loss = trained.metrics.back().loss;
    summary.objective_after = rlhf_objective(policy, anchor, env.true_reward, beta, env.prompt_distribution);
    summary.ood_mass = trained.metrics.back().ood_mass;
    summary.policy = policy;
    result.rounds.push_back(std::move(summary));
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace rlhf
