#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rlhf_lab/models.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

using SequenceReward = std::function<double(std::size_t prompt, std::span<const int> seq)>;

/// pi*(y|x) proportional to pi_ref(y|x) exp(r(x,y)/beta), on probability
/// tables. Zero reference entries stay exactly zero.
Matrix optimal_distribution(const Matrix& reference, const Matrix& reward, double beta);

/// Same closed form as a tabular policy (logits = log pi_ref + r / beta).
/// Bandit reference policies only.
Policy optimal_policy(const Policy& reference, const Matrix& reward, double beta);

/// Exact KL-regularised objective sum_x p(x) sum_y pi(y|x)[r - beta log(pi/pi_ref)].
double rlhf_objective(const Policy& policy, const Policy& reference, const Matrix& reward,
                      double beta, std::span<const double> prompt_distribution);
/// Sequence-space version; enumerates every response.
double rlhf_objective(const Policy& policy, const Policy& reference, const SequenceReward& reward,
                      double beta, std::span<const double> prompt_distribution,
                      double enumeration_budget = 1 << 20);

/// E_{x, y ~ pi}[r(x, y)] by enumeration.
double expected_reward(const Policy& policy, const SequenceReward& reward,
                       std::span<const double> prompt_distribution);
double expected_reward(const Policy& policy, const Matrix& reward,
                       std::span<const double> prompt_distribution);
/// E_x[KL(pi(.|x) || ref(.|x))], exact.
double mean_kl(const Policy& policy, const Policy& reference,
               std::span<const double> prompt_distribution);

struct OodDelta {
  std::size_t prompt = 0;
  std::size_t response = 0;
  double delta = 0.0;
};

struct OodMassReport {
  std::vector<double> uncovered_mass;      // per prompt, under the policy
  std::vector<double> ref_uncovered_mass;  // per prompt, under the reference
  std::vector<OodDelta> deltas;            // pi - pi_ref on uncovered cells
  Matrix delta;                            // pi - pi_ref on every cell

  double mean_uncovered_mass() const;
  double max_uncovered_delta() const;
};

OodMassReport ood_mass(const Policy& policy, const Policy& reference,
                       const PreferenceDataset& dataset);

}  // namespace rlhf
