#include "rlhf_lab/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rlhf {

void PpoConfig::validate() const {
  if (batch_size == 0 || minibatches == 0) throw std::invalid_argument("ppo config: batch sizes must be positive");
  if (batch_size % minibatches != 0) {
    throw std::invalid_argument("ppo config: batch_size must be divisible by minibatches");
  }
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw std::invalid_argument("ppo config: learning rates must be positive");
  if (!(clip_ratio > 0.0)) throw std::invalid_argument("ppo config: clip_ratio must be positive");
  if (!(value_clip > 0.0)) throw std::invalid_argument("ppo config: value_clip must be positive");
  if (!(kl_coef >= 0.0)) throw std::invalid_argument("ppo config: kl_coef must be nonnegative");
  if (!(reward_clip > 0.0)) throw std::invalid_argument("ppo config: reward_clip must be positive");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("ppo config: gae_lambda outside [0, 1]");
  if (!(discount >= 0.0 && discount <= 1.0)) throw std::invalid_argument("ppo config: discount outside [0, 1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("ppo config: temperature must be positive");
  if (top_k == 0) throw std::invalid_argument("ppo config: top_k must be at least 1");
  if (update_passes == 0) throw std::invalid_argument("ppo config: update_passes must be positive");
  if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw std::invalid_argument("ppo config: ema_alpha outside [0, 1]");
}

RlTask bandit_task(const BanditEnv& env, const RewardModel& rm) {
  return {env.num_prompts, env.prompt_distribution,
          [rm](std::size_t x, std::span<const int> seq) {
            return rm.eval(x, static_cast<std::size_t>(seq[0]));
          }};
}

RlTask bandit_task(const BanditEnv& env, const Matrix& reward) {
  return {env.num_prompts, env.prompt_distribution,
          [reward](std::size_t x, std::span<const int> seq) {
            return reward(x, static_cast<std::size_t>(seq[0]));
          }};
}

RlTask token_task(const TokenEnv& env) {
  return {env.num_prompts, env.prompt_distribution(),
          [env](std::size_t x, std::span<const int> seq) { return env.reward(x, seq); }};
}

std::size_t RolloutBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.response.size();
  return n;
}

RolloutBatch rollout(const Policy& policy, const Policy& reference, const ValueModel& critic,
                     const RlTask& task, std::size_t n, const PpoConfig& cfg, Rng& rng) {
  if (n == 0) throw std::invalid_argument("rollout: n must be >= 1");
  if (task.num_prompts != policy.num_prompts()) throw std::invalid_argument("rollout: task/policy mismatch");
  RolloutBatch batch;
  batch.samples.resize(n);
  const Rng base = rng.split(rng.next_u64());
  for (std::size_t i = 0; i < n; ++i) {
    // Per-sample stream: identical results for any partition of the batch.
    Rng local = base.split(i);
    auto& s = batch.samples[i];
    s.prompt = local.categorical(task.prompt_distribution);
    s.response = policy_sample(policy, s.prompt, cfg.temperature, cfg.top_k, local);
    const std::size_t len = s.response.size();
    s.behavior_logp.resize(len);
    s.ref_logp.resize(len);
    s.rewards.resize(len);
    s.values.resize(len);
    s.old_raw_values.resize(len);
    std::span<const int> seq = s.response;
    for (std::size_t t = 0; t < len; ++t) {
      const auto prefix = seq.first(t);
      const auto tok = static_cast<std::size_t>(seq[t]);
      s.behavior_logp[t] = policy.log_probs(s.prompt, prefix)[tok];
      s.ref_logp[t] = reference.log_probs(s.prompt, prefix)[tok];
      s.rewards[t] = -cfg.kl_coef * (s.behavior_logp[t] - s.ref_logp[t]);
      s.old_raw_values[t] = critic.raw(s.prompt, prefix);
      s.values[t] = critic.value(s.prompt, prefix);
    }
    s.score = task.score(s.prompt, seq);
    s.rewards[len - 1] += std::clamp(s.score, -cfg.reward_clip, cfg.reward_clip);
  }
  return batch;
}

void compute_gae(RolloutBatch& batch, double lambda, double discount) {
  for (auto& s : batch.samples) {
    const std::size_t len = s.rewards.size();
    if (s.values.size() != len) throw std::invalid_argument("compute_gae: values missing");
    s.advantages.assign(len, 0.0);
    s.returns.assign(len, 0.0);
    double next_adv = 0.0;
    for (std::size_t k = len; k-- > 0;) {
      const double next_value = (k + 1 < len) ? s.values[k + 1] : 0.0;
      const double delta = s.rewards[k] + discount * next_value - s.values[k];
      next_adv = delta + discount * lambda * next_adv;
      s.advantages[k] = next_adv;
      s.returns[k] = next_adv + s.values[k];
    }
  }
  batch.has_advantages = true;
}

void normalize_advantages(RolloutBatch& batch) {
  if (!batch.has_advantages) throw std::invalid_argument("normalize_advantages: run compute_gae first");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : batch.samples) {
    for (double a : s.advantages) sum += a;
    n += s.advantages.size();
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& s : batch.samples) {
    for (double a : s.advantages) sq += (a - mean) * (a - mean);
  }
  const double std = std::sqrt(sq / static_cast<double>(n));
  for (auto& s : batch.samples) {
    for (auto& a : s.advantages) a = (a - mean) / (std + 1e-8);
  }
}

LossAndGrad ppo_policy_loss(const Policy& policy, std::span<const RolloutSample> samples,
                            double clip_ratio, double* clip_fraction, double* approx_kl) {
  LossAndGrad out{0.0, policy.params().zeros_like()};
  std::size_t n = 0;
  for (const auto& s : samples) n += s.response.size();
  if (n == 0) throw std::invalid_argument("ppo_policy_loss: empty minibatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  std::size_t clipped = 0;
  double kl = 0.0;
  for (const auto& s : samples) {
    if (s.advantages.size() != s.response.size()) throw std::invalid_argument("ppo_policy_loss: advantages missing");
    std::span<const int> seq = s.response;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto prefix = seq.first(t);
      const auto tok = static_cast<std::size_t>(seq[t]);
      auto probs = policy.log_probs(s.prompt, prefix);
      const double logp = probs[tok];
      for (auto& p : probs) p = std::exp(p);
      const double ratio = std::exp(logp - s.behavior_logp[t]);
      const double adv = s.advantages[t];
      const double clipped_ratio = std::clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio);
      const double surr1 = ratio * adv;
      const double surr2 = clipped_ratio * adv;
      out.loss -= std::min(surr1, surr2) * inv_n;
      if (std::abs(ratio - 1.0) > clip_ratio) ++clipped;
      kl += (s.behavior_logp[t] - logp) * inv_n;
      const bool active = surr1 <= surr2 || ratio == clipped_ratio;
      if (!active || adv == 0.0) continue;
      // d(-ratio * A)/d logits = -A * ratio * (onehot - p)
      const double coef = -adv * ratio * inv_n;
      for (auto& p : probs) p *= -coef;
      probs[tok] += coef;
      policy.backprop_logits(s.prompt, prefix, probs, out.grad);
    }
  }
  if (clip_fraction) *clip_fraction = static_cast<double>(clipped) * inv_n;
  if (approx_kl) *approx_kl = kl;
  return out;
}

LossAndGrad ppo_value_loss(const ValueModel& critic, std::span<const RolloutSample> samples,
                           double value_clip) {
  LossAndGrad out{0.0, critic.params().zeros_like()};
  std::size_t n = 0;
  for (const auto& s : samples) n += s.response.size();
  if (n == 0) throw std::invalid_argument("ppo_value_loss: empty minibatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  for (const auto& s : samples) {
    if (s.returns.size() != s.response.size()) throw std::invalid_argument("ppo_value_loss: returns missing");
    std::span<const int> seq = s.response;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto prefix = seq.first(t);
      const double v = critic.raw(s.prompt, prefix);
      const double target = critic.normalized ? critic.norm.normalize(s.returns[t]) : s.returns[t];
      const double v_old = s.old_raw_values[t];
      const double v_clipped = v_old + std::clamp(v - v_old, -value_clip, value_clip);
      const double e1 = (v - target) * (v - target);
      const double e2 = (v_clipped - target) * (v_clipped - target);
      out.loss += std::max(e1, e2) * inv_n;
      const bool unclipped_branch = e1 >= e2 || v_clipped == v;
      if (unclipped_branch) critic.backprop(s.prompt, prefix, 2.0 * (v - target) * inv_n, out.grad);
    }
  }
  return out;
}

PpoStats ppo_update(Policy& policy, ValueModel& critic, const RolloutBatch& batch,
                    const PpoConfig& cfg, PpoOptimizers& opt, Rng& rng) {
  if (!batch.has_advantages) throw std::invalid_argument("ppo_update: batch lacks advantages");
  const std::size_t n = batch.samples.size();
  const std::size_t parts = std::min(cfg.minibatches, n);
  const std::size_t mb_size = (n + parts - 1) / parts;
  AdamConfig actor_adam;
  actor_adam.lr = cfg.actor_lr;
  AdamConfig critic_adam;
  critic_adam.lr = cfg.critic_lr;
  PpoStats stats;
  std::size_t updates = 0;
  std::vector<std::size_t> order(n);
  std::vector<RolloutSample> mb;
  for (std::size_t pass = 0; pass < cfg.update_passes; ++pass) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0, mb_index = 0; start < n; start += mb_size, ++mb_index) {
      mb.clear();
      for (std::size_t i = start; i < std::min(n, start + mb_size); ++i) mb.push_back(batch.samples[order[i]]);
      double clip_frac = 0.0;
      double kl = 0.0;
      auto pl = ppo_policy_loss(policy, mb, cfg.clip_ratio, &clip_frac, &kl);
      auto vl = ppo_value_loss(critic, mb, cfg.value_clip);
      if (!std::isfinite(pl.loss) || !std::isfinite(vl.loss) || !pl.grad.all_finite() ||
          !vl.grad.all_finite()) {
        throw std::runtime_error("ppo_update: non-finite loss in minibatch " + std::to_string(mb_index));
      }
      adam_step(policy.params(), pl.grad, opt.actor, actor_adam);
      adam_step(critic.params(), vl.grad, opt.critic, critic_adam);
      stats.policy_loss += pl.loss;
      stats.value_loss += vl.loss;
      stats.clip_fraction += clip_frac;
      stats.approx_kl += kl;
      ++updates;
    }
  }
  const double inv = 1.0 / static_cast<double>(updates);
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.clip_fraction *= inv;
  stats.approx_kl *= inv;
  return stats;
}

ValueModel make_critic(const Policy& policy) {
  return ValueModel::tabular(policy.num_prompts(), policy.num_actions(), policy.max_len());
}

PpoResult train_ppo(Policy policy, ValueModel critic, Policy reference, const RlTask& task,
                    const PpoConfig& cfg, const PpoEvaluation& eval) {
  cfg.validate();
  if (!policy.same_binding(reference)) throw std::invalid_argument("train_ppo: reference binding differs from policy");
  const Policy initial_reference = reference;
  critic.normalized = cfg.value_norm;
  const bool enumerable = policy.support_size() <= eval.enumeration_budget;
  const SequenceReward& objective_reward = eval.objective_reward ? eval.objective_reward : task.score;
  const SequenceReward& task_reward = eval.task_reward ? eval.task_reward : task.score;
  Rng root(cfg.seed);
  PpoOptimizers opt;
  PpoResult result;
  result.metrics.reserve(cfg.epochs);
  for (std::size_t it = 0; it < cfg.epochs; ++it) {
    Rng it_rng = root.split(it);
    Rng sample_rng = it_rng.split(0);
    Rng update_rng = it_rng.split(1);
    auto batch = rollout(policy, reference, critic, task, cfg.batch_size, cfg, sample_rng);
    compute_gae(batch, cfg.gae_lambda, cfg.discount);
    if (cfg.value_norm) {
      std::vector<double> returns;
      returns.reserve(batch.token_count());
      for (const auto& s : batch.samples) returns.insert(returns.end(), s.returns.begin(), s.returns.end());
      critic.norm.update(returns);
    }
    if (cfg.adv_norm) normalize_advantages(batch);
    const auto stats = ppo_update(policy, critic, batch, cfg, opt, update_rng);
    if (cfg.ema_alpha < 1.0) reference = ema_blend(reference, policy, cfg.ema_alpha);

    PpoMetric m;
    m.iteration = it + 1;
    double score_sum = 0.0;
    for (const auto& s : batch.samples) score_sum += s.score;
    m.mean_reward = score_sum / static_cast<double>(batch.samples.size());
    m.clip_fraction = stats.clip_fraction;
    if (enumerable) {
      m.objective = rlhf_objective(policy, initial_reference, objective_reward, cfg.kl_coef,
                                   task.prompt_distribution, eval.enumeration_budget);
      m.task_reward = expected_reward(policy, task_reward, task.prompt_distribution);
      m.kl = mean_kl(policy, reference, task.prompt_distribution);
      double h = 0.0;
      for (std::size_t x = 0; x < policy.num_prompts(); ++x) {
        if (task.prompt_distribution[x] > 0.0) h += task.prompt_distribution[x] * policy_entropy(policy, x);
      }
      m.entropy = h;
    } else {
      m.kl = stats.approx_kl;
    }
    result.metrics.push_back(m);
  }
  result.policy = std::move(policy);
  result.critic = std::move(critic);
  result.reference = std::move(reference);
  return result;
}

}  // namespace rlhf
