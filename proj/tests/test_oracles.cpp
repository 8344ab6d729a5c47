#include <doctest.h>

#include <cmath>

#include "rlhf_lab/oracles.hpp"

using namespace rlhf;

TEST_CASE("optimal distribution frozen value") {
  Matrix ref(1, 2, 0.5);
  Matrix r(1, 2);
  r(0, 0) = 1.0;
  auto p = optimal_distribution(ref, r, 1.0);
  CHECK(p(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-14));
  CHECK(p(0, 0) + p(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("zero reference entries stay zero") {
  Matrix ref(1, 3);
  ref(0, 0) = 0.5;
  ref(0, 1) = 0.5;
  Matrix r(1, 3);
  r(0, 2) = 100.0;
  auto p = optimal_distribution(ref, r, 0.1);
  CHECK(p(0, 2) == 0.0);
}

TEST_CASE("optimal policy maximises the objective") {
  auto inst = make_grid_env(GridOptions{}, 0);
  auto ref = Policy::tabular_from_probs(inst.env.reference);
  const double beta = 0.2;
  auto star = optimal_policy(ref, inst.env.true_reward, beta);
  const double best = rlhf_objective(star, ref, inst.env.true_reward, beta, inst.env.prompt_distribution);
  // J(pi*) = beta * E_x log Z(x)
  double logz = 0.0;
  for (std::size_t x = 0; x < 8; ++x) {
    double z = 0.0;
    for (std::size_t y = 0; y < 8; ++y) z += inst.env.reference(x, y) * std::exp(inst.env.true_reward(x, y) / beta);
    logz += inst.env.prompt_distribution[x] * std::log(z);
  }
  CHECK(best == doctest::Approx(beta * logz).epsilon(1e-12));
  auto other = star;
  Rng rng(1);
  for (auto& v : other.params().values()) v += 0.1 * rng.normal();
  CHECK(rlhf_objective(other, ref, inst.env.true_reward, beta, inst.env.prompt_distribution) < best);
  CHECK(rlhf_objective(ref, ref, inst.env.true_reward, beta, inst.env.prompt_distribution) ==
        doctest::Approx(expected_reward(ref, inst.env.true_reward, inst.env.prompt_distribution)));
}

TEST_CASE("sequence objective agrees with the table version") {
  auto inst = make_grid_env(GridOptions{}, 1);
  auto ref = Policy::tabular_from_probs(inst.env.reference);
  auto pi = optimal_policy(ref, inst.env.true_reward, 0.5);
  SequenceReward seq = [&](std::size_t x, std::span<const int> y) {
    return inst.env.true_reward(x, static_cast<std::size_t>(y[0]));
  };
  CHECK(rlhf_objective(pi, ref, seq, 0.5, inst.env.prompt_distribution) ==
        doctest::Approx(rlhf_objective(pi, ref, inst.env.true_reward, 0.5, inst.env.prompt_distribution)).epsilon(1e-12));
  CHECK(mean_kl(pi, ref, inst.env.prompt_distribution) > 0.0);
}

TEST_CASE("ood mass report") {
  auto inst = make_counterexample();
  auto ref = Policy::tabular_from_probs(inst.env.reference);
  auto pi = ref;
  pi.params().values()[2] += std::log(1000.0);
  auto rep = ood_mass(pi, ref, inst.dataset);
  REQUIRE(rep.deltas.size() == 1);
  CHECK(rep.deltas[0].response == 2);
  CHECK(rep.max_uncovered_delta() > 0.0);
  CHECK(rep.uncovered_mass[0] > rep.ref_uncovered_mass[0]);
}
