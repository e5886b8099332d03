"""Soft actor-critic with demonstration-guided exploration, in plain numpy."""

from .envs import ENVIRONMENTS, make_env
from .harness import RunRecord, TrainConfig, compare, train
from .replay import DemoSet, ReplayBuffer, collect_demos
from .sac import GaussianPolicy, SacAgent

__all__ = ["ENVIRONMENTS", "make_env", "RunRecord", "TrainConfig", "compare", "train",
           "DemoSet", "ReplayBuffer", "collect_demos", "GaussianPolicy", "SacAgent"]
__version__ = "0.1.0"
