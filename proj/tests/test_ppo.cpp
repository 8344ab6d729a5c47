#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rlhf_lab/ppo.hpp"

using namespace rlhf;

namespace {

RolloutSample sample(std::size_t prompt, Tokens y, std::vector<double> adv) {
  RolloutSample s;
  s.prompt = prompt;
  s.response = std::move(y);
  s.advantages = std::move(adv);
  return s;
}

}  // namespace

TEST_CASE("gae frozen values") {
  RolloutBatch b;
  RolloutSample s;
  s.response = {0, 0};
  s.rewards = {1.0, 1.0};
  s.values = {0.5, 0.5};
  b.samples.push_back(s);
  compute_gae(b, 0.95, 0.99);
  REQUIRE(b.has_advantages);
  const auto& a = b.samples[0].advantages;
  CHECK(a[0] == doctest::Approx(1.4652500000000002).epsilon(1e-14));
  CHECK(a[1] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(b.samples[0].returns[0] == doctest::Approx(1.96525).epsilon(1e-14));
}

TEST_CASE("advantage normalization") {
  RolloutBatch b;
  b.samples.push_back(sample(0, {0}, {1.0}));
  b.samples.push_back(sample(0, {1}, {3.0}));
  b.has_advantages = true;
  normalize_advantages(b);
  CHECK(b.samples[0].advantages[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(b.samples[1].advantages[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("clipped surrogate gradient") {
  auto ar = Policy::autoregressive(1, 3, 2);
  Rng rng(1);
  for (auto& v : ar.params().values()) v = 0.5 * rng.normal();
  std::vector<RolloutSample> batch = {sample(0, {1, 2}, {0.7, -0.4}), sample(0, {0, 0}, {-1.2, 0.3})};
  for (auto& s : batch) {
    for (std::size_t t = 0; t < s.response.size(); ++t) {
      std::span<const int> seq = s.response;
      // Behaviour slightly off the current policy, inside the clip range.
      s.behavior_logp.push_back(ar.log_probs(0, seq.first(t))[static_cast<std::size_t>(seq[t])] + 0.05);
    }
  }
  auto lg = ppo_policy_loss(ar, batch, 0.2);
  auto loss = [&](const ParamVector& p) {
    Policy q = ar;
    q.params() = p;
    return ppo_policy_loss(q, batch, 0.2).loss;
  };
  CHECK(finite_diff_check(loss, ar.params(), lg.grad).max_rel_error < 1e-6);
}

TEST_CASE("clipping stops the gradient past the trust region") {
  auto p = Policy::tabular(1, 2);
  std::vector<RolloutSample> batch = {sample(0, {0}, {1.0})};
  // ratio = exp(0.5) > 1.2 with positive advantage: clipped branch.
  batch[0].behavior_logp = {std::log(0.5) - 0.5};
  double frac = 0.0;
  auto lg = ppo_policy_loss(p, batch, 0.2, &frac);
  CHECK(frac == 1.0);
  CHECK(lg.loss == doctest::Approx(-1.2));
  for (double g : lg.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("clipped value loss") {
  auto critic = ValueModel::tabular(1, 2, 1);
  std::vector<RolloutSample> batch = {sample(0, {0}, {0.0})};
  batch[0].returns = {1.0};
  batch[0].old_raw_values = {0.0};
  auto lg = ppo_value_loss(critic, batch, 0.2);
  CHECK(lg.loss == doctest::Approx(1.0));
  critic.params().values()[0] = 0.5;
  // max((0.5-1)^2, (0.2-1)^2) = 0.64 and the clipped branch has no gradient.
  lg = ppo_value_loss(critic, batch, 0.2);
  CHECK(lg.loss == doctest::Approx(0.64));
  for (double g : lg.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("tabular ppo approaches the closed-form optimum") {
  Matrix ref_probs(1, 3, 1.0 / 3.0);
  Matrix reward(1, 3);
  reward(0, 0) = 1.0;
  reward(0, 1) = 0.5;
  BanditEnv env;
  env.num_prompts = 1;
  env.num_responses = 3;
  env.prompt_distribution = {1.0};
  env.true_reward = reward;
  env.reference = ref_probs;
  auto ref = Policy::tabular_from_probs(ref_probs);
  PpoConfig cfg;
  cfg.batch_size = 256;
  cfg.kl_coef = 0.5;
  cfg.actor_lr = 2e-2;
  cfg.epochs = 150;
  auto res = train_ppo(ref, make_critic(ref), ref, bandit_task(env, reward), cfg);
  auto target = optimal_distribution(ref_probs, reward, 0.5);
  auto got = res.policy.prob_table();
  double tv = 0.0;
  for (std::size_t y = 0; y < 3; ++y) tv += 0.5 * std::abs(got(0, y) - target(0, y));
  CHECK(tv < 0.05);
  CHECK(res.metrics.size() == 150);
}

TEST_CASE("ppo config validation") {
  PpoConfig cfg;
  cfg.kl_coef = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = PpoConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("exact objective rises over ppo iterations on the grid") {
  std::size_t monotone = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inst = make_grid_env(GridOptions{}, seed);
    auto rm = train_reward_model(RewardModel::tabular(8, 8), inst.dataset, RewardTrainConfig{1e-2, 2000, 64, seed}).model;
    auto ref = Policy::tabular_from_probs(inst.env.reference);
    PpoConfig cfg;
    cfg.seed = seed;
    auto res = train_ppo(ref, make_critic(ref), ref, bandit_task(inst.env, rm), cfg);
    bool ok = true;
    for (std::size_t i = 1; i < res.metrics.size(); ++i) ok = ok && res.metrics[i].objective >= res.metrics[i - 1].objective;
    monotone += ok ? 1 : 0;
  }
  CHECK(monotone >= 4);
}

TEST_CASE("iterated ema approaches the online policy geometrically") {
  auto ref = Policy::tabular(1, 3);
  auto online = Policy::tabular(1, 3);
  online.params().values()[1] = 2.0;
  const double alpha = 0.9;
  for (int n = 1; n <= 20; ++n) {
    ref = ema_blend(ref, online, alpha);
    double gap = 0.0;
    for (std::size_t i = 0; i < 3; ++i) gap = std::max(gap, std::abs(ref.params()[i] - online.params()[i]));
    CHECK(gap <= std::pow(alpha, n) * 2.0 + 1e-12);
  }
}
