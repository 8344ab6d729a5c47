#include "rlhf_lab/spaces.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rlhf_lab/models.hpp"

namespace rlhf {

void BanditEnv::validate() const {
  if (num_prompts == 0 || num_responses == 0) throw std::invalid_argument("empty bandit space");
  if (prompt_distribution.size() != num_prompts) {
    throw std::invalid_argument("prompt distribution has wrong length");
  }
  double total = 0.0;
  for (double p : prompt_distribution) {
    if (!(p >= 0.0)) throw std::invalid_argument("negative prompt probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("prompt distribution not normalised");
  if (true_reward.rows() != num_prompts || true_reward.cols() != num_responses ||
      reference.rows() != num_prompts || reference.cols() != num_responses) {
    throw std::invalid_argument("bandit tables have wrong shape");
  }
  for (std::size_t x = 0; x < num_prompts; ++x) {
    double row = 0.0;
    for (std::size_t y = 0; y < num_responses; ++y) {
      if (!std::isfinite(true_reward(x, y))) throw std::invalid_argument("non-finite true reward");
      if (!(reference(x, y) >= 0.0)) throw std::invalid_argument("negative reference probability");
      row += reference(x, y);
    }
    if (std::abs(row - 1.0) > 1e-9) throw std::invalid_argument("reference row not normalised");
  }
}

std::size_t BanditEnv::best_response(std::size_t prompt) const {
  auto row = true_reward.row(prompt);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

PreferenceDataset::PreferenceDataset(std::size_t num_prompts, std::size_t num_responses,
                                     std::vector<PreferencePair> pairs)
    : num_prompts_(num_prompts), num_responses_(num_responses) {
  for (const auto& p : pairs) add(p);
}

void PreferenceDataset::add(const PreferencePair& pair) {
  if (pair.prompt >= num_prompts_ || pair.winner >= num_responses_ ||
      pair.loser >= num_responses_) {
    throw std::out_of_range("preference pair index out of range");
  }
  if (pair.winner == pair.loser) throw std::invalid_argument("preference pair with winner == loser");
  pairs_.push_back(pair);
  coverage_.emplace(pair.prompt, pair.winner);
  coverage_.emplace(pair.prompt, pair.loser);
}

bool PreferenceDataset::covers(std::size_t prompt, std::size_t response) const {
  return coverage_.count({prompt, response}) > 0;
}

std::vector<std::size_t> PreferenceDataset::uncovered(std::size_t prompt) const {
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < num_responses_; ++y) {
    if (!covers(prompt, y)) out.push_back(y);
  }
  return out;
}

BanditInstance make_counterexample(double ref_smoothing) {
  if (!(ref_smoothing > 0.0)) {
    throw std::invalid_argument("reference smoothing must be positive; zero-probability "
                                "responses make the log-ratios undefined");
  }
  BanditInstance inst;
  auto& env = inst.env;
  env.num_prompts = 1;
  env.num_responses = 3;
  env.prompt_distribution = {1.0};
  env.true_reward = Matrix(1, 3);
  env.true_reward(0, 0) = 1.0;
  env.reference = Matrix(1, 3);
  const double z = 1.0 + ref_smoothing;
  env.reference(0, 0) = 0.5 / z;
  env.reference(0, 1) = 0.5 / z;
  env.reference(0, 2) = ref_smoothing / z;
  inst.dataset = PreferenceDataset(1, 3, {{0, 0, 1}});
  return inst;
}

BanditInstance make_grid_env(std::size_t n, std::size_t pairs_per_prompt, std::uint64_t seed) {
  GridOptions opts;
  opts.n = n;
  opts.pairs_per_prompt = pairs_per_prompt;
  return make_grid_env(opts, seed);
}

BanditInstance make_grid_env(const GridOptions& opts, std::uint64_t seed) {
  const std::size_t n = opts.n;
  if (n < 2) throw std::invalid_argument("grid size must be at least 2");
  if (opts.pairs_per_prompt < 1 || opts.pairs_per_prompt > n - 1) {
    throw std::invalid_argument("pairs_per_prompt must lie in [1, n-1]");
  }
  Rng root(seed);
  Rng reward_rng = root.split(1);
  Rng ref_rng = root.split(2);
  Rng pair_rng = root.split(3);

  BanditInstance inst;
  auto& env = inst.env;
  env.num_prompts = n;
  env.num_responses = n;
  env.prompt_distribution.assign(n, 1.0 / static_cast<double>(n));
  env.true_reward = Matrix(n, n);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      env.true_reward(x, y) = (x == y) ? 1.0 : reward_rng.uniform(0.0, 0.5);
    }
  }
  env.reference = Matrix(n, n);
  for (std::size_t x = 0; x < n; ++x) {
    std::vector<double> logits(n);
    for (auto& z : logits) z = ref_rng.uniform(-opts.ref_logit_scale, opts.ref_logit_scale);
    auto probs = softmax(logits);
    std::copy(probs.begin(), probs.end(), env.reference.row(x).begin());
  }

  inst.dataset = PreferenceDataset(n, n);
  for (std::size_t x = 0; x < n; ++x) {
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const bool a_wins = env.true_reward(x, a) > env.true_reward(x, b);
        candidates.emplace_back(a_wins ? a : b, a_wins ? b : a);
      }
    }
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    std::set<std::size_t> touched;
    auto take = [&](std::size_t idx) {
      chosen.push_back(candidates[idx]);
      touched.insert(candidates[idx].first);
      touched.insert(candidates[idx].second);
      candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(idx));
    };
    const std::size_t anchored = std::min(opts.diagonal_pairs, opts.pairs_per_prompt);
    while (chosen.size() < anchored) {
      std::vector<std::size_t> diag_idx;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].first == x) diag_idx.push_back(i);
      }
      take(diag_idx[pair_rng.below(diag_idx.size())]);
    }
    while (chosen.size() < opts.pairs_per_prompt) {
      // Keep at least one response uncovered whenever that is possible.
      std::vector<std::size_t> ok;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::set<std::size_t> t = touched;
        t.insert(candidates[i].first);
        t.insert(candidates[i].second);
        if (t.size() < n || n == 2) ok.push_back(i);
      }
      if (ok.empty()) throw std::invalid_argument("cannot place pairs while leaving a response uncovered");
      take(ok[pair_rng.below(ok.size())]);
    }
    for (const auto& [w, l] : chosen) inst.dataset.add({x, w, l});
  }
  return inst;
}

double TokenEnv::reward(std::size_t prompt, std::span<const int> seq) const {
  if (prompt >= num_prompts) throw std::out_of_range("token env prompt out of range");
  return predicate(prompt, seq) ? success_reward : 0.0;
}

std::vector<double> TokenEnv::prompt_distribution() const {
  return std::vector<double>(num_prompts, 1.0 / static_cast<double>(num_prompts));
}

TokenEnv make_token_env(std::size_t vocab, std::size_t max_len, std::size_t num_prompts,
                        std::uint64_t seed, double success_reward) {
  if (vocab < 2) throw std::invalid_argument("token env needs vocab >= 2");
  if (max_len < 2) throw std::invalid_argument("token env needs max_len >= 2");
  if (num_prompts < 1) throw std::invalid_argument("token env needs at least one prompt");
  TokenEnv env;
  env.vocab_size = vocab;
  env.max_len = max_len;
  env.num_prompts = num_prompts;
  env.success_reward = success_reward;
  Rng rng = Rng(seed).split(7);
  env.targets.resize(num_prompts);
  for (auto& t : env.targets) {
    t.resize(max_len);
    for (auto& tok : t) tok = static_cast<int>(rng.below(vocab));
  }
  env.predicate = [targets = env.targets](std::size_t prompt, std::span<const int> seq) {
    const auto& t = targets.at(prompt);
    return seq.size() == t.size() && std::equal(seq.begin(), seq.end(), t.begin());
  };
  return env;
}

PreferenceDataset sample_preferences(const BanditEnv& env, const Policy& sampler,
                                     const ResponseScorer& labeler, std::size_t n_pairs,
                                     Rng& rng) {
  if (n_pairs < 1) throw std::invalid_argument("sample_preferences needs n_pairs >= 1");
  if (sampler.num_prompts() != env.num_prompts || sampler.num_actions() != env.num_responses ||
      sampler.max_len() != 1) {
    throw std::invalid_argument("sampler policy does not match the bandit space");
  }
  if (env.num_responses < 2) throw std::invalid_argument("sample_preferences needs at least two responses");
  PreferenceDataset out(env.num_prompts, env.num_responses);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t x = rng.categorical(env.prompt_distribution);
    auto probs = sampler.probs(x, {});
    const std::size_t a = rng.categorical(probs);
    // Second draw from the policy conditioned on differing from the first.
    probs[a] = 0.0;
    if (!(std::accumulate(probs.begin(), probs.end(), 0.0) > 0.0)) {
      std::fill(probs.begin(), probs.end(), 1.0);
      probs[a] = 0.0;
    }
    const std::size_t b = rng.categorical(probs);
    const double sa = labeler(x, a);
    const double sb = labeler(x, b);
    const bool a_wins = sa > sb || (sa == sb && a < b);
    out.add({x, a_wins ? a : b, a_wins ? b : a});
  }
  return out;
}

bool PrefGraphReport::any_cycle() const {
  return std::any_of(has_cycle.begin(), has_cycle.end(), [](bool c) { return c; });
}

bool PrefGraphReport::reaches(std::size_t prompt, std::size_t a, std::size_t b) const {
  return reach[prompt][a * num_responses + b];
}

PrefGraphReport analyze_pref_graph(const PreferenceDataset& dataset) {
  const std::size_t n = dataset.num_responses();
  PrefGraphReport report;
  report.num_responses = n;
  report.has_cycle.assign(dataset.num_prompts(), false);
  report.reach.assign(dataset.num_prompts(), std::vector<bool>(n * n, false));
  for (const auto& p : dataset.pairs()) report.reach[p.prompt][p.winner * n + p.loser] = true;
  for (std::size_t x = 0; x < dataset.num_prompts(); ++x) {
    auto& r = report.reach[x];
    // Warshall closure; n is tiny.
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!r[i * n + k]) continue;
        for (std::size_t j = 0; j < n; ++j) {
          if (r[k * n + j]) r[i * n + j] = true;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (r[i * n + i]) report.has_cycle[x] = true;
    }
  }
  return report;
}

bool is_inferable(const PrefGraphReport& report, std::size_t prompt, std::size_t a,
                  std::size_t b) {
  if (prompt >= report.reach.size() || a >= report.num_responses || b >= report.num_responses) {
    throw std::out_of_range("is_inferable: index out of range");
  }
  return report.reaches(prompt, a, b) || report.reaches(prompt, b, a);
}

}  // namespace rlhf
