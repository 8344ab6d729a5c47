#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlhf_lab/numerics.hpp"
#include "rlhf_lab/rng.hpp"

namespace rlhf {

class Policy;

using Tokens = std::vector<int>;

/// Contextual bandit over enumerable prompts and responses.
struct BanditEnv {
  std::size_t num_prompts = 0;
  std::size_t num_responses = 0;
  std::vector<double> prompt_distribution;
  Matrix true_reward;  // [prompt x response]
  Matrix reference;    // [prompt x response], row-stochastic

  /// Throws std::invalid_argument if any invariant is broken.
  void validate() const;
  std::size_t best_response(std::size_t prompt) const;
};

struct PreferencePair {
  std::size_t prompt = 0;
  std::size_t winner = 0;
  std::size_t loser = 0;

  bool operator==(const PreferencePair&) const = default;
};

/// Comparisons (x, y_w, y_l) over a fixed prompt/response space. Coverage is
/// maintained as the exact union of winner and loser occurrences.
class PreferenceDataset {
public:
  PreferenceDataset() = default;
  PreferenceDataset(std::size_t num_prompts, std::size_t num_responses,
                    std::vector<PreferencePair> pairs = {});

  void add(const PreferencePair& pair);

  std::size_t num_prompts() const { return num_prompts_; }
  std::size_t num_responses() const { return num_responses_; }
  const std::vector<PreferencePair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  const std::set<std::pair<std::size_t, std::size_t>>& coverage() const { return coverage_; }
  bool covers(std::size_t prompt, std::size_t response) const;
  std::vector<std::size_t> uncovered(std::size_t prompt) const;

  bool operator==(const PreferenceDataset&) const = default;

private:
  std::size_t num_prompts_ = 0;
  std::size_t num_responses_ = 0;
  std::vector<PreferencePair> pairs_;
  std::set<std::pair<std::size_t, std::size_t>> coverage_;
};

struct BanditInstance {
  BanditEnv env;
  PreferenceDataset dataset;
};

/// Three responses, one prompt, reference (0.5, 0.5, eps) renormalised, a
/// single comparison y1 > y2 and true reward (1, 0, 0).
BanditInstance make_counterexample(double ref_smoothing = 1e-6);

struct GridOptions {
  std::size_t n = 8;
  std::size_t pairs_per_prompt = 3;
  /// Half-width of the uniform reference logits.
  double ref_logit_scale = 0.5;
  /// How many of each prompt's pairs are (diagonal > random other); clamped
  /// to pairs_per_prompt. The rest are drawn from all consistent pairs.
  std::size_t diagonal_pairs = 3;
};

/// n x n grid: diagonal reward 1, off-diagonal uniform in [0, 0.5].
BanditInstance make_grid_env(const GridOptions& opts, std::uint64_t seed);
BanditInstance make_grid_env(std::size_t n, std::size_t pairs_per_prompt, std::uint64_t seed);

using SequencePredicate = std::function<bool(std::size_t prompt, std::span<const int> seq)>;

/// Autoregressive toy task with a sparse terminal reward.
struct TokenEnv {
  std::size_t vocab_size = 0;
  std::size_t max_len = 0;
  std::size_t num_prompts = 0;
  std::vector<Tokens> targets;
  double success_reward = 10.0;
  SequencePredicate predicate;

  double reward(std::size_t prompt, std::span<const int> seq) const;
  std::vector<double> prompt_distribution() const;
};

/// Default predicate: the sequence equals a hidden per-prompt target of
/// length max_len.
TokenEnv make_token_env(std::size_t vocab, std::size_t max_len, std::size_t num_prompts,
                        std::uint64_t seed, double success_reward = 10.0);

using ResponseScorer = std::function<double(std::size_t prompt, std::size_t response)>;

/// Draws comparisons from a sampler policy and labels them with a scorer.
/// The second response is drawn from the sampler restricted to responses
/// other than the first (uniform if that mass underflows). Ties go to the
/// lower response index.
PreferenceDataset sample_preferences(const BanditEnv& env, const Policy& sampler,
                                     const ResponseScorer& labeler, std::size_t n_pairs,
                                     Rng& rng);

struct PrefGraphReport {
  std::size_t num_responses = 0;
  std::vector<bool> has_cycle;
  /// reach[prompt][a * num_responses + b]: b reachable from a via win->lose edges.
  std::vector<std::vector<bool>> reach;

  bool any_cycle() const;
  bool reaches(std::size_t prompt, std::size_t a, std::size_t b) const;
};

PrefGraphReport analyze_pref_graph(const PreferenceDataset& dataset);

/// True iff the ranking of a and b follows from the comparisons by
/// reachability in either direction.
bool is_inferable(const PrefGraphReport& report, std::size_t prompt, std::size_t a,
                  std::size_t b);

}  // namespace rlhf
