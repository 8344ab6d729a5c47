import math

import pytest

import rlhf_lab as rl


def test_counterexample_verdict_passes():
    verdict = rl.verify_counterexample()
    assert verdict["passed"], verdict


def test_dpo_equals_reward_loss_of_implicit_reward():
    env, data = rl.make_grid_env(seed=1)
    ref = rl.Policy.tabular_from_probs(env.reference)
    pi, losses = rl.train_dpo(ref, ref, data, beta=0.1, lr=0.05, steps=100)
    table = rl.implicit_reward_table(pi, ref, 0.1)
    assert rl.dpo_loss(pi, ref, data, 0.1) == pytest.approx(rl.reward_nll_loss(table, data), abs=1e-12)
    assert losses[-1] < math.log(2)


def test_closed_form_rows_sum_to_one():
    env, _ = rl.make_grid_env(seed=0)
    probs = rl.optimal_distribution(env.reference, env.true_reward, 0.1)
    for row in probs:
        assert sum(row) == pytest.approx(1.0)


def test_ood_divergence_reaches_threshold():
    _, data = rl.make_counterexample()
    rm, _ = rl.train_reward_model(rl.RewardModel.tabular(1, 3), data, lr=0.1, steps=500, batch_size=1)
    rep = rl.ood_reward_divergence(rm, data, prompt=0, y_prime=2, y_star=0, threshold=50.0)
    assert rep["reached"] and rep["final_gap"] > 50.0 and rep["final_loss"] <= 0.01


def test_policy_json_round_trip():
    env, _ = rl.make_grid_env(seed=2)
    pi = rl.Policy.tabular_from_probs(env.reference)
    back = rl.Policy.from_json(pi.to_json())
    assert back.prob_table() == pi.prob_table()


def test_run_command_writes_manifest(tmp_path):
    out = rl.run_command("train-rm", tmp_path / "rm", {"reward": {"steps": 20}})
    assert out["ok"]
    assert (tmp_path / "rm" / "manifest.json").exists()
    assert any(a["path"] == "reward_loss.csv" for a in out["artifacts"])


def test_bad_config_raises():
    with pytest.raises(rl.ConfigError, match="ppo.klcoef"):
        rl.run_command("train-rm", "/tmp", {"ppo": {"klcoef": 1}})


def test_command_names():
    assert "grid-study" in rl.command_names()
    assert rl.default_config("grid-study")["dpo"]["beta"] == 0.1
