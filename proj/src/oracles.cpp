#include "rlhf_lab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rlhf {
namespace {

void check_prompts(const Policy& policy, std::span<const double> prompt_distribution) {
  if (prompt_distribution.size() != policy.num_prompts()) {
    throw std::invalid_argument("prompt distribution does not match the policy");
  }
}

}  // namespace

Matrix optimal_distribution(const Matrix& reference, const Matrix& reward, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("optimal_distribution: beta must be positive");
  if (reference.rows() != reward.rows() || reference.cols() != reward.cols()) {
    throw std::invalid_argument("optimal_distribution: shape mismatch");
  }
  Matrix out(reference.rows(), reference.cols());
  for (std::size_t x = 0; x < reference.rows(); ++x) {
    // Work in log space relative to the largest supported term.
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t y = 0; y < reference.cols(); ++y) {
      if (reference(x, y) > 0.0) mx = std::max(mx, std::log(reference(x, y)) + reward(x, y) / beta);
    }
    if (!std::isfinite(mx)) throw std::invalid_argument("optimal_distribution: reference row has no support");
    double z = 0.0;
    for (std::size_t y = 0; y < reference.cols(); ++y) {
      const double w = reference(x, y) > 0.0
                           ? std::exp(std::log(reference(x, y)) + reward(x, y) / beta - mx)
                           : 0.0;
      out(x, y) = w;
      z += w;
    }
    for (std::size_t y = 0; y < reference.cols(); ++y) out(x, y) /= z;
  }
  return out;
}

Policy optimal_policy(const Policy& reference, const Matrix& reward, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("optimal_policy: beta must be positive");
  if (!reference.is_bandit()) {
    throw std::invalid_argument("optimal_policy: closed form is only tabulated for enumerable bandit spaces");
  }
  if (reward.rows() != reference.num_prompts() || reward.cols() != reference.num_actions()) {
    throw std::invalid_argument("optimal_policy: reward table shape mismatch");
  }
  Policy out = Policy::tabular(reference.num_prompts(), reference.num_actions());
  auto logits = out.params().block("logits");
  for (std::size_t x = 0; x < reference.num_prompts(); ++x) {
    const auto lr = reference.log_probs(x, {});
    for (std::size_t y = 0; y < lr.size(); ++y) {
      logits[x * lr.size() + y] = lr[y] + reward(x, y) / beta;
    }
  }
  return out;
}

double rlhf_objective(const Policy& policy, const Policy& reference, const Matrix& reward,
                      double beta, std::span<const double> prompt_distribution) {
  if (!policy.is_bandit()) throw std::invalid_argument("rlhf_objective: reward table needs a bandit policy");
  return rlhf_objective(
      policy, reference,
      [&reward](std::size_t x, std::span<const int> seq) {
        return reward(x, static_cast<std::size_t>(seq[0]));
      },
      beta, prompt_distribution);
}

double rlhf_objective(const Policy& policy, const Policy& reference, const SequenceReward& reward,
                      double beta, std::span<const double> prompt_distribution,
                      double enumeration_budget) {
  check_prompts(policy, prompt_distribution);
  if (policy.support_size() > enumeration_budget) {
    throw std::runtime_error("rlhf_objective: response space too large to enumerate");
  }
  double j = 0.0;
  for (std::size_t x = 0; x < policy.num_prompts(); ++x) {
    if (prompt_distribution[x] == 0.0) continue;
    double jx = 0.0;
    for_each_response(
        policy, x,
        [&](std::span<const int> seq, double lp) {
          const double lr = policy_logprob(reference, x, seq);
          jx += std::exp(lp) * (reward(x, seq) - beta * (lp - lr));
        },
        enumeration_budget);
    j += prompt_distribution[x] * jx;
  }
  return j;
}

double expected_reward(const Policy& policy, const SequenceReward& reward,
                       std::span<const double> prompt_distribution) {
  check_prompts(policy, prompt_distribution);
  double total = 0.0;
  for (std::size_t x = 0; x < policy.num_prompts(); ++x) {
    if (prompt_distribution[x] == 0.0) continue;
    double ex = 0.0;
    for_each_response(policy, x,
                      [&](std::span<const int> seq, double lp) { ex += std::exp(lp) * reward(x, seq); });
    total += prompt_distribution[x] * ex;
  }
  return total;
}

double expected_reward(const Policy& policy, const Matrix& reward,
                       std::span<const double> prompt_distribution) {
  return expected_reward(
      policy,
      [&reward](std::size_t x, std::span<const int> seq) {
        return reward(x, static_cast<std::size_t>(seq[0]));
      },
      prompt_distribution);
}

double mean_kl(const Policy& policy, const Policy& reference,
               std::span<const double> prompt_distribution) {
  check_prompts(policy, prompt_distribution);
  double total = 0.0;
  for (std::size_t x = 0; x < policy.num_prompts(); ++x) {
    if (prompt_distribution[x] == 0.0) continue;
    total += prompt_distribution[x] * policy_kl(policy, reference, x).value;
  }
  return total;
}

double OodMassReport::mean_uncovered_mass() const {
  if (uncovered_mass.empty()) return 0.0;
  double s = 0.0;
  for (double m : uncovered_mass) s += m;
  return s / static_cast<double>(uncovered_mass.size());
}

double OodMassReport::max_uncovered_delta() const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& d : deltas) best = std::max(best, d.delta);
  return best;
}

OodMassReport ood_mass(const Policy& policy, const Policy& reference,
                       const PreferenceDataset& dataset) {
  if (!policy.is_bandit() || !reference.is_bandit()) {
    throw std::invalid_argument("ood_mass: bandit policies required");
  }
  if (policy.num_prompts() != dataset.num_prompts() || policy.num_actions() != dataset.num_responses() ||
      reference.num_prompts() != dataset.num_prompts() ||
      reference.num_actions() != dataset.num_responses()) {
    throw std::invalid_argument("ood_mass: dataset space does not match the policies");
  }
  const Matrix p = policy.prob_table();
  const Matrix q = reference.prob_table();
  OodMassReport report;
  report.delta = Matrix(p.rows(), p.cols());
  report.uncovered_mass.assign(p.rows(), 0.0);
  report.ref_uncovered_mass.assign(p.rows(), 0.0);
  for (std::size_t x = 0; x < p.rows(); ++x) {
    for (std::size_t y = 0; y < p.cols(); ++y) {
      report.delta(x, y) = p(x, y) - q(x, y);
      if (!dataset.covers(x, y)) {
        report.uncovered_mass[x] += p(x, y);
        report.ref_uncovered_mass[x] += q(x, y);
        report.deltas.push_back({x, y, report.delta(x, y)});
      }
    }
  }
  return report;
}

}  // namespace rlhf
