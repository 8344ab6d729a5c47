#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rlhf_lab/numerics.hpp"
#include "rlhf_lab/rng.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

enum class ModelKind { Tabular, Mlp, Autoregressive };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct MlpInit {
  std::size_t hidden = 64;
  double input_scale = 1.0;
  double output_scale = 0.1;
};

/// Categorical policy over a response space. Bandit policies (tabular, mlp)
/// emit one action per prompt; autoregressive policies keep a logits row per
/// (prompt, prefix) context and emit max_len tokens.
class Policy {
public:
  Policy() = default;

  static Policy tabular(std::size_t num_prompts, std::size_t num_responses);
  /// Logits are log-probabilities; zero entries are rejected (smooth first).
  static Policy tabular_from_probs(const Matrix& probs);
  static Policy mlp(std::size_t num_prompts, std::size_t num_responses, const MlpInit& init,
                    Rng& rng);
  static Policy autoregressive(std::size_t num_prompts, std::size_t vocab, std::size_t max_len);

  ModelKind kind() const { return kind_; }
  std::size_t num_prompts() const { return num_prompts_; }
  /// Actions per step: responses for bandit kinds, vocabulary otherwise.
  std::size_t num_actions() const { return num_actions_; }
  std::size_t max_len() const { return max_len_; }
  std::size_t hidden() const { return hidden_; }
  bool is_bandit() const { return max_len_ == 1; }
  /// Number of complete responses per prompt (num_actions^max_len).
  double support_size() const;
  std::size_t contexts_per_prompt() const;

  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  std::vector<double> logits(std::size_t prompt, std::span<const int> prefix) const;
  std::vector<double> probs(std::size_t prompt, std::span<const int> prefix) const;
  std::vector<double> log_probs(std::size_t prompt, std::span<const int> prefix) const;

  /// grad += d(loss)/d(params) given d(loss)/d(logits) at one context.
  void backprop_logits(std::size_t prompt, std::span<const int> prefix,
                       std::span<const double> dlogits, ParamVector& grad) const;

  /// Full probability table [prompt x response]; bandit kinds only.
  Matrix prob_table() const;

  bool same_binding(const Policy& other) const;

  /// Rebuild from serialised fields. Throws on inconsistent sizes.
  static Policy from_parts(ModelKind kind, std::size_t num_prompts, std::size_t num_actions,
                           std::size_t max_len, std::size_t hidden, std::vector<double> values);

private:
  std::size_t context_row(std::size_t prompt, std::span<const int> prefix) const;
  void check_context(std::size_t prompt, std::span<const int> prefix) const;

  ModelKind kind_ = ModelKind::Tabular;
  std::size_t num_prompts_ = 0;
  std::size_t num_actions_ = 0;
  std::size_t max_len_ = 1;
  std::size_t hidden_ = 0;
  ParamVector params_;
};

double policy_logprob(const Policy& policy, std::size_t prompt, std::span<const int> response);
double policy_logprob(const Policy& policy, std::size_t prompt, std::size_t response);

/// grad += scale * d log pi(response | prompt) / d params
void accumulate_logprob_grad(const Policy& policy, std::size_t prompt,
                             std::span<const int> response, double scale, ParamVector& grad);

/// Temperature-scaled, top-k truncated sampling. top_k is clamped to the
/// number of actions per step.
Tokens policy_sample(const Policy& policy, std::size_t prompt, double temperature,
                     std::size_t top_k, Rng& rng);

/// Visits every complete response of a prompt with its log-probability.
/// Throws if the support exceeds max_count.
void for_each_response(const Policy& policy, std::size_t prompt,
                       const std::function<void(std::span<const int>, double)>& visit,
                       double max_count = 1 << 20);

struct KlOptions {
  double enumeration_budget = 1 << 20;
  bool allow_monte_carlo = false;
  std::size_t mc_samples = 4096;
  std::uint64_t mc_seed = 0;
};

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  bool exact = true;
};

KlEstimate policy_kl(const Policy& p, const Policy& q, std::size_t prompt,
                     const KlOptions& opts = {});

/// beta * (log pi(y|x) - log pi_ref(y|x)), with the per-prompt gauge fixed to 0.
double implicit_reward(const Policy& policy, const Policy& reference, std::size_t prompt,
                       std::span<const int> response, double beta);
double implicit_reward(const Policy& policy, const Policy& reference, std::size_t prompt,
                       std::size_t response, double beta);

/// Parameter-wise ref <- alpha * ref + (1 - alpha) * online.
Policy ema_blend(const Policy& reference, const Policy& online, double alpha);

double policy_entropy(const Policy& policy, std::size_t prompt);

/// Scalar reward over bandit (prompt, response) pairs.
class RewardModel {
public:
  RewardModel() = default;

  static RewardModel tabular(std::size_t num_prompts, std::size_t num_responses);
  static RewardModel mlp(std::size_t num_prompts, std::size_t num_responses, const MlpInit& init,
                         Rng& rng);
  static RewardModel from_parts(ModelKind kind, std::size_t num_prompts, std::size_t num_responses,
                                std::size_t hidden, std::vector<double> values);

  ModelKind kind() const { return kind_; }
  std::size_t num_prompts() const { return num_prompts_; }
  std::size_t num_responses() const { return num_responses_; }
  std::size_t hidden() const { return hidden_; }

  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  double eval(std::size_t prompt, std::size_t response) const;
  /// grad += dout * d r(prompt, response) / d params
  void backprop(std::size_t prompt, std::size_t response, double dout, ParamVector& grad) const;

  Matrix table() const;

private:
  void check(std::size_t prompt, std::size_t response) const;

  ModelKind kind_ = ModelKind::Tabular;
  std::size_t num_prompts_ = 0;
  std::size_t num_responses_ = 0;
  std::size_t hidden_ = 0;
  ParamVector params_;
};

double reward_eval(const RewardModel& rm, std::size_t prompt, std::size_t response);
/// Bradley-Terry probability that y_w beats y_l.
double bt_prob(const RewardModel& rm, std::size_t prompt, std::size_t winner, std::size_t loser);

/// Running mean/variance over scalar batches (parallel Welford merge).
struct RunningNorm {
  double mean = 0.0;
  double var = 1.0;
  double count = 0.0;

  void update(std::span<const double> batch);
  double std() const;
  double normalize(double x) const { return (x - mean) / std(); }
  double denormalize(double x) const { return x * std() + mean; }
};

/// Critic over policy contexts: one output per (prompt, prefix).
class ValueModel {
public:
  ValueModel() = default;

  static ValueModel tabular(std::size_t num_prompts, std::size_t vocab, std::size_t max_len);
  static ValueModel mlp(std::size_t num_prompts, std::size_t max_len, const MlpInit& init, Rng& rng);

  ModelKind kind() const { return kind_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  bool normalized = false;
  RunningNorm norm;

  /// Raw network output (normalised space when value normalisation is on).
  double raw(std::size_t prompt, std::span<const int> prefix) const;
  /// Value in reward units.
  double value(std::size_t prompt, std::span<const int> prefix) const;
  void backprop(std::size_t prompt, std::span<const int> prefix, double dout,
                ParamVector& grad) const;

private:
  std::size_t row(std::size_t prompt, std::span<const int> prefix) const;

  ModelKind kind_ = ModelKind::Tabular;
  std::size_t num_prompts_ = 0;
  std::size_t vocab_ = 0;
  std::size_t max_len_ = 1;
  std::size_t hidden_ = 0;
  ParamVector params_;
};

}  // namespace rlhf
