#include "rlhf_lab/reward.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rlhf {
namespace {

std::vector<PreferencePair> draw_batch(const std::vector<PreferencePair>& pairs,
                                       std::size_t batch_size, Rng& rng) {
  if (batch_size >= pairs.size()) return pairs;
  std::vector<PreferencePair> batch(batch_size);
  for (auto& p : batch) p = pairs[rng.below(pairs.size())];
  return batch;
}

double l2_norm(const ParamVector& v) {
  double s = 0.0;
  for (double x : v.values()) s += x * x;
  return std::sqrt(s);
}

}  // namespace

LossAndGrad reward_nll_loss_and_grad(const RewardModel& rm, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("reward loss on an empty dataset");
  LossAndGrad out{0.0, rm.params().zeros_like()};
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    const double margin = rm.eval(p.prompt, p.winner) - rm.eval(p.prompt, p.loser);
    out.loss -= log_sigmoid(margin) * inv_n;
    // d/dm [-log σ(m)] = -σ(-m)
    const double dm = -sigmoid(-margin) * inv_n;
    rm.backprop(p.prompt, p.winner, dm, out.grad);
    rm.backprop(p.prompt, p.loser, -dm, out.grad);
  }
  return out;
}

LossAndGrad reward_nll_loss_and_grad(const RewardModel& rm, const PreferenceDataset& dataset) {
  return reward_nll_loss_and_grad(rm, dataset.pairs());
}

double reward_nll_loss(const RewardModel& rm, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("reward loss on an empty dataset");
  double loss = 0.0;
  for (const auto& p : pairs) loss -= log_sigmoid(rm.eval(p.prompt, p.winner) - rm.eval(p.prompt, p.loser));
  return loss / static_cast<double>(pairs.size());
}

double reward_nll_loss(const Matrix& reward, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("reward loss on an empty dataset");
  double loss = 0.0;
  for (const auto& p : pairs) loss -= log_sigmoid(reward(p.prompt, p.winner) - reward(p.prompt, p.loser));
  return loss / static_cast<double>(pairs.size());
}

RewardTrainResult train_reward_model(RewardModel rm, const PreferenceDataset& dataset,
                                     const RewardTrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train_reward_model: empty dataset");
  if (!(cfg.lr > 0.0) || cfg.batch_size == 0) throw std::invalid_argument("train_reward_model: bad config");
  Rng rng = Rng(cfg.seed).split(11);
  AdamState state;
  AdamConfig adam;
  adam.lr = cfg.lr;
  RewardTrainResult result;
  result.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = draw_batch(dataset.pairs(), cfg.batch_size, rng);
    auto lg = reward_nll_loss_and_grad(rm, batch);
    if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
      throw std::runtime_error("reward model training diverged at step " + std::to_string(step));
    }
    adam_step(rm.params(), lg.grad, state, adam);
    const double full = reward_nll_loss(rm, dataset.pairs());
    if (!std::isfinite(full)) {
      throw std::runtime_error("reward model training diverged at step " + std::to_string(step));
    }
    result.losses.push_back(full);
  }
  result.model = std::move(rm);
  return result;
}

DivergenceReport ood_reward_divergence(RewardModel rm, const PreferenceDataset& dataset,
                                       const DivergenceProbe& probe, const DivergenceConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("ood_reward_divergence: empty dataset");
  const auto graph = analyze_pref_graph(dataset);
  if (graph.any_cycle()) {
    throw std::invalid_argument(
        "ood_reward_divergence: dataset contains a cyclic ranking (the no-cycle assumption fails)");
  }
  if (probe.y_prime == probe.y_star) throw std::invalid_argument("ood_reward_divergence: probe responses coincide");
  if (is_inferable(graph, probe.prompt, probe.y_prime, probe.y_star)) {
    throw std::invalid_argument(
        "ood_reward_divergence: probe pair is inferable from the dataset (the non-inferable "
        "assumption fails)");
  }
  if (!(cfg.eps_loss > 0.0) || !(cfg.ascent_lr > 0.0) || !(cfg.descent_lr > 0.0)) {
    throw std::invalid_argument("ood_reward_divergence: bad config");
  }

  DivergenceReport report;
  auto gap_of = [&](const RewardModel& m) {
    return m.eval(probe.prompt, probe.y_prime) - m.eval(probe.prompt, probe.y_star);
  };
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const auto lg = reward_nll_loss_and_grad(rm, dataset.pairs());
    if (lg.loss > cfg.eps_loss) {
      // Projection: normalised descent on the preference loss.
      const double norm = l2_norm(lg.grad);
      if (norm > 0.0) rm.params().axpy(-cfg.descent_lr / norm, lg.grad);
    } else {
      ParamVector g = rm.params().zeros_like();
      rm.backprop(probe.prompt, probe.y_prime, 1.0, g);
      rm.backprop(probe.prompt, probe.y_star, -1.0, g);
      const double norm = l2_norm(g);
      if (norm > 0.0) rm.params().axpy(cfg.ascent_lr / norm, g);
    }
    const double loss = reward_nll_loss(rm, dataset.pairs());
    const double gap = gap_of(rm);
    if (!std::isfinite(loss) || !std::isfinite(gap)) {
      throw std::runtime_error("ood_reward_divergence: non-finite value at step " + std::to_string(step));
    }
    report.gaps.push_back(gap);
    report.losses.push_back(loss);
    report.steps = step + 1;
    report.final_gap = gap;
    report.final_loss = loss;
    if (loss <= cfg.eps_loss && gap > cfg.threshold) {
      report.reached = true;
      break;
    }
  }
  return report;
}

}  // namespace rlhf
