"""Per-user agents sharing one act/remember/learn surface."""

from .base import BaseAgent, check_observations
from .ddpg import DDPGAgent
from .dqn import DQNAgent
from .greedy import GreedyLocalPolicy, GreedyOffloadPolicy, greedy_local_act, greedy_offload_act
from .random_policy import UniformRandomPolicy
from .replay import Batch, ReplayBuffer

AGENT_KINDS = ("ddpg", "dqn", "gd_local", "gd_offload", "random")

__all__ = [
    "AGENT_KINDS",
    "BaseAgent",
    "Batch",
    "DDPGAgent",
    "DQNAgent",
    "GreedyLocalPolicy",
    "GreedyOffloadPolicy",
    "ReplayBuffer",
    "UniformRandomPolicy",
    "check_observations",
    "greedy_local_act",
    "greedy_offload_act",
    "make_agent",
]


def make_agent(kind, cfg, m, random_state=None, **params):
    """Build (and set up) the agent of ``kind`` for user ``m`` of ``cfg``.

    ``params`` are hyperparameters for learning agents; unknown names raise.
    """
    u = cfg.users[m]
    if kind == "ddpg":
        agent = DDPGAgent(obs_dim=cfg.obs_dim, p_local_max=u.p_local_max, p_offload_max=u.p_offload_max,
                          random_state=random_state)
    elif kind == "dqn":
        agent = DQNAgent(obs_dim=cfg.obs_dim, p_local_max=u.p_local_max, p_offload_max=u.p_offload_max,
                         random_state=random_state)
    elif kind == "gd_local":
        agent = GreedyLocalPolicy.from_env(cfg, m)
    elif kind == "gd_offload":
        agent = GreedyOffloadPolicy.from_env(cfg, m)
    elif kind == "random":
        agent = UniformRandomPolicy(obs_dim=cfg.obs_dim, p_local_max=u.p_local_max,
                                    p_offload_max=u.p_offload_max, random_state=random_state)
    else:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
    if params:
        valid = agent.get_params()
        extra = {k: v for k, v in params.items() if k in valid}
        unknown = sorted(set(params) - set(valid))
        if unknown and agent.learns:
            raise ValueError(f"unknown {kind} parameters: {', '.join(unknown)}")
        agent.set_params(**extra)
    return agent.setup()
