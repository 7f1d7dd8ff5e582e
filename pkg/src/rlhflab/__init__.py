"""Desk-scale RLHF laboratory: offline, periodic, online and information-directed training
of a small token policy against a simulated pairwise rater."""

from .config import RunConfig, from_flat, load_config
from .evaluation import ScalingLaw, fit_scaling, project_gain, win_rate
from .oracle import Prompt, PromptCorpus, build_corpus, make_oracle
from .policy import PolicyArch, TokenPolicy, Vocabulary, generate, init_policy
from .reward import EnnRewardModel, RewardModel, choice_prob, infomax_pair, init_enn, init_reward_model
from .schedulers import (InfoDirectedRLHF, OfflineRLHF, OnlineRLHF, PeriodicRLHF, RunRecord,
                         make_environment, run, run_ids, run_offline, run_online, run_periodic)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "from_flat", "load_config",
    "ScalingLaw", "fit_scaling", "project_gain", "win_rate",
    "Prompt", "PromptCorpus", "build_corpus", "make_oracle",
    "PolicyArch", "TokenPolicy", "Vocabulary", "generate", "init_policy",
    "EnnRewardModel", "RewardModel", "choice_prob", "infomax_pair", "init_enn", "init_reward_model",
    "InfoDirectedRLHF", "OfflineRLHF", "OnlineRLHF", "PeriodicRLHF", "RunRecord",
    "make_environment", "run", "run_ids", "run_offline", "run_online", "run_periodic",
]
