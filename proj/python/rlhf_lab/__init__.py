"""Python front end for the rlhf_lab C++ core."""

import json
import os

from . import _core
from ._core import (
    BanditEnv,
    ConfigError,
    Policy,
    PreferenceDataset,
    PreferencePair,
    RewardModel,
    command_names,
    dpo_loss,
    implicit_reward_table,
    is_inferable,
    make_counterexample,
    make_grid_env,
    ood_reward_divergence,
    optimal_distribution,
    reward_nll_loss,
    rlhf_objective,
    train_dpo,
    train_ppo_bandit,
    train_reward_model,
)

__version__ = _core.__version__


def default_config(profile=""):
    """Resolved default configuration for a subcommand profile, as a dict."""
    return json.loads(_core.default_config_json(profile))


def verify_counterexample():
    """Verdict dict for the three-response counter-example."""
    return json.loads(_core.verify_counterexample_json())


def run_command(name, out_dir, config=None):
    """Run a CLI subcommand in-process and return its outcome as a dict.

    config is a dict overlaid on the profile defaults, as with --config.
    """
    text = json.dumps(config if config is not None else {})
    return json.loads(_core.run_command_json(name, text, os.fspath(out_dir)))


__all__ = [
    "BanditEnv",
    "ConfigError",
    "Policy",
    "PreferenceDataset",
    "PreferencePair",
    "RewardModel",
    "command_names",
    "default_config",
    "dpo_loss",
    "implicit_reward_table",
    "is_inferable",
    "make_counterexample",
    "make_grid_env",
    "ood_reward_divergence",
    "optimal_distribution",
    "reward_nll_loss",
    "rlhf_objective",
    "run_command",
    "train_dpo",
    "train_ppo_bandit",
    "train_reward_model",
    "verify_counterexample",
]
