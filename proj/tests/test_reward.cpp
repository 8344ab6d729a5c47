#include <doctest.h>

#include <cmath>

#include "rlhf_lab/reward.hpp"

using namespace rlhf;

TEST_CASE("reward nll on a frozen pair") {
  auto rm = RewardModel::tabular(1, 2);
  const std::vector<PreferencePair> pairs = {{0, 0, 1}};
  CHECK(reward_nll_loss(rm, pairs) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  rm.params().values()[0] = 1.0;
  // -log sigmoid(1) = log(1 + e^-1)
  CHECK(reward_nll_loss(rm, pairs) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  CHECK(reward_nll_loss(rm.table(), pairs) == reward_nll_loss(rm, pairs));
}

TEST_CASE("reward gradients match finite differences") {
  auto inst = make_grid_env(GridOptions{}, 1);
  Rng rng(3);
  for (auto rm : {RewardModel::tabular(8, 8), RewardModel::mlp(8, 8, MlpInit{12, 1.0, 0.5}, rng)}) {
    for (auto& v : rm.params().values()) v += 0.1 * rng.normal();
    auto lg = reward_nll_loss_and_grad(rm, inst.dataset);
    auto loss = [&](const ParamVector& p) {
      RewardModel q = rm;
      q.params() = p;
      return reward_nll_loss(q, inst.dataset.pairs());
    };
    CHECK(finite_diff_check(loss, rm.params(), lg.grad).max_rel_error < 1e-6);
  }
}

TEST_CASE("reward training fits the comparisons") {
  auto inst = make_grid_env(GridOptions{}, 2);
  auto res = train_reward_model(RewardModel::tabular(8, 8), inst.dataset, RewardTrainConfig{0.1, 500, 64, 0});
  REQUIRE(res.losses.size() == 500);
  CHECK(res.losses.back() < 0.05);
  CHECK(res.losses.back() < res.losses.front());
  for (const auto& p : inst.dataset.pairs()) {
    CHECK(res.model.eval(p.prompt, p.winner) > res.model.eval(p.prompt, p.loser));
  }
}

TEST_CASE("ood divergence grows an uncovered gap at low loss") {
  auto inst = make_counterexample();
  auto rm = train_reward_model(RewardModel::tabular(1, 3), inst.dataset, RewardTrainConfig{0.1, 2000, 1, 0}).model;
  DivergenceConfig cfg;
  cfg.threshold = 20.0;
  auto rep = ood_reward_divergence(rm, inst.dataset, DivergenceProbe{0, 2, 0}, cfg);
  CHECK(rep.reached);
  CHECK(rep.final_gap > 20.0);
  CHECK(rep.final_loss <= cfg.eps_loss);
  CHECK(rep.gaps.size() == rep.losses.size());
}

TEST_CASE("ood divergence rejects an inferable probe") {
  PreferenceDataset d(1, 3);
  d.add({0, 0, 1});
  d.add({0, 1, 2});
  auto rm = RewardModel::tabular(1, 3);
  CHECK_THROWS(ood_reward_divergence(rm, d, DivergenceProbe{0, 2, 0}, DivergenceConfig{}));
}
