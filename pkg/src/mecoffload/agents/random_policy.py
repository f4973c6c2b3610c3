import numpy as np

from ..numerics import make_rng
from .base import BaseAgent

__all__ = ["UniformRandomPolicy"]


class UniformRandomPolicy(BaseAgent):
    """Reference policy drawing both powers uniformly from their boxes every slot."""

    def __init__(self, obs_dim=10, p_local_max=2.0, p_offload_max=2.0, random_state=None):
        self.obs_dim = obs_dim
        self.p_local_max = p_local_max
        self.p_offload_max = p_offload_max
        self.random_state = random_state

    def setup(self):
        self.rng_ = make_rng(self.random_state)
        return self

    def act(self, obs, explore=False):
        return self.rng_.uniform(0.0, 1.0, size=2) * np.array([self.p_local_max, self.p_offload_max])
