"""Decentralized DRL computation offloading for multi-user mobile edge computing."""

__version__ = "0.1.0"

from .agents import DDPGAgent, DQNAgent, GreedyLocalPolicy, GreedyOffloadPolicy, make_agent
from .config import parse_config
from .env import EnvConfig, MECEnv, UserConfig
from .harness import RunConfig, evaluate, sweep_tradeoff, train

__all__ = [
    "DDPGAgent",
    "DQNAgent",
    "EnvConfig",
    "GreedyLocalPolicy",
    "GreedyOffloadPolicy",
    "MECEnv",
    "RunConfig",
    "UserConfig",
    "evaluate",
    "make_agent",
    "parse_config",
    "sweep_tradeoff",
    "train",
    "__version__",
]
