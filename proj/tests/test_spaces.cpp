#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rlhf_lab/models.hpp"
#include "rlhf_lab/spaces.hpp"

using namespace rlhf;

TEST_CASE("counterexample instance") {
  auto inst = make_counterexample(1e-6);
  const auto& env = inst.env;
  REQUIRE(env.num_prompts == 1);
  REQUIRE(env.num_responses == 3);
  const double z = 1.0 + 1e-6;
  CHECK(env.reference(0, 0) == doctest::Approx(0.5 / z).epsilon(1e-15));
  CHECK(env.reference(0, 2) == doctest::Approx(1e-6 / z).epsilon(1e-12));
  CHECK(env.true_reward(0, 0) == 1.0);
  CHECK(env.true_reward(0, 2) == 0.0);
  REQUIRE(inst.dataset.size() == 1);
  CHECK(inst.dataset.pairs()[0] == PreferencePair{0, 0, 1});
  CHECK(inst.dataset.uncovered(0) == std::vector<std::size_t>{2});
  CHECK_NOTHROW(env.validate());
}

TEST_CASE("bandit env validation") {
  auto env = make_counterexample().env;
  env.reference(0, 0) += 0.1;
  CHECK_THROWS_AS(env.validate(), std::invalid_argument);
}

TEST_CASE("dataset coverage is the union of endpoints") {
  PreferenceDataset d(2, 4);
  d.add({0, 1, 2});
  d.add({1, 3, 0});
  CHECK(d.covers(0, 1));
  CHECK(d.covers(0, 2));
  CHECK_FALSE(d.covers(0, 3));
  CHECK(d.uncovered(0) == std::vector<std::size_t>{0, 3});
  CHECK(d.uncovered(1) == std::vector<std::size_t>{1, 2});
  CHECK_THROWS(d.add({2, 0, 1}));
  CHECK_THROWS(d.add({0, 1, 1}));
}

TEST_CASE("grid env is seeded and shaped") {
  GridOptions opts;
  auto a = make_grid_env(opts, 3);
  auto b = make_grid_env(opts, 3);
  CHECK(a.dataset == b.dataset);
  CHECK(a.env.true_reward == b.env.true_reward);
  CHECK_NOTHROW(a.env.validate());
  for (std::size_t x = 0; x < opts.n; ++x) {
    CHECK(a.env.true_reward(x, x) == 1.0);
    CHECK(a.env.best_response(x) == x);
    for (std::size_t y = 0; y < opts.n; ++y) {
      if (y != x) {
        CHECK(a.env.true_reward(x, y) >= 0.0);
        CHECK(a.env.true_reward(x, y) <= 0.5);
      }
    }
    CHECK_FALSE(a.dataset.uncovered(x).empty());
  }
  CHECK(a.dataset.size() == opts.n * opts.pairs_per_prompt);
  for (const auto& p : a.dataset.pairs()) {
    CHECK(a.env.true_reward(p.prompt, p.winner) > a.env.true_reward(p.prompt, p.loser));
  }
}

TEST_CASE("preference graph reachability") {
  PreferenceDataset d(1, 4);
  d.add({0, 0, 1});
  d.add({0, 1, 2});
  auto g = analyze_pref_graph(d);
  CHECK_FALSE(g.any_cycle());
  CHECK(g.reaches(0, 0, 2));
  CHECK_FALSE(g.reaches(0, 2, 0));
  CHECK(is_inferable(g, 0, 2, 0));
  CHECK_FALSE(is_inferable(g, 0, 0, 3));

  d.add({0, 2, 0});
  CHECK(analyze_pref_graph(d).any_cycle());
}

TEST_CASE("sample_preferences labels with the scorer") {
  auto inst = make_grid_env(GridOptions{}, 0);
  auto sampler = Policy::tabular_from_probs(inst.env.reference);
  Rng rng(5);
  ResponseScorer truth = [&](std::size_t x, std::size_t y) { return inst.env.true_reward(x, y); };
  auto d = sample_preferences(inst.env, sampler, truth, 200, rng);
  CHECK(d.size() == 200);
  for (const auto& p : d.pairs()) {
    CHECK(truth(p.prompt, p.winner) >= truth(p.prompt, p.loser));
  }
}

TEST_CASE("token env reward") {
  auto env = make_token_env(4, 3, 2, 7, 10.0);
  REQUIRE(env.targets.size() == 2);
  CHECK(env.reward(0, env.targets[0]) == 10.0);
  Tokens wrong = env.targets[0];
  wrong[0] = (wrong[0] + 1) % 4;
  CHECK(env.reward(0, wrong) == 0.0);
  auto pd = env.prompt_distribution();
  CHECK(std::accumulate(pd.begin(), pd.end(), 0.0) == doctest::Approx(1.0));
}
