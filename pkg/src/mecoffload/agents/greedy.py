"""Greedy baselines that saturate one execution mode before spilling to the other.

Both policies decode their own observation back into physical units, assume
the last observed projected power ratio still holds, and invert the local
DVFS and Shannon-rate models to find the powers that drain the buffer.
"""

import math

import numpy as np

from .base import BaseAgent

__all__ = [
    "GreedyLocalPolicy",
    "GreedyOffloadPolicy",
    "greedy_local_act",
    "greedy_offload_act",
    "offload_power_for_bits",
    "local_power_for_bits",
]

# 2**1000 overflows nothing yet; anything beyond certainly exceeds any power cap
_MAX_EXP2 = 1000.0


class _Physics:
    def __init__(self, policy):
        self.tau0 = policy.slot_len
        self.W = policy.bandwidth
        self.noise = policy.noise_var
        self.kappa = policy.kappa
        self.L = policy.cycles_per_bit
        self.P_l = policy.p_local_max
        self.P_o = policy.p_offload_max

    @property
    def local_capacity(self):
        return self.tau0 * np.cbrt(self.P_l / self.kappa) / self.L


def local_power_for_bits(bits, phys):
    """Inverse of the local model: ``kappa * (bits * L / tau0)^3``, capped."""
    return min(phys.P_l, phys.kappa * (bits * phys.L / phys.tau0) ** 3)


def offload_power_for_bits(bits, gain, phys):
    """Power whose Shannon rate carries ``bits`` in one slot, capped at ``P_o``.

    ``gain`` is the effective post-detection channel power ``phi * |h|^2``.
    """
    if bits <= 0:
        return 0.0
    if gain <= 0:
        return phys.P_o
    e = bits / (phys.tau0 * phys.W)
    if e > _MAX_EXP2:
        return phys.P_o
    return min(phys.P_o, math.expm1(e * math.log(2.0)) * phys.noise / gain)


def _offloaded(p_o, gain, phys):
    return phys.tau0 * phys.W * math.log2(1.0 + p_o * gain / phys.noise)


def greedy_local_act(B, phi, h_norm2, phys):
    """Local execution first, remainder offloaded. Returns ``(p_local, p_offload)``."""
    d_l = min(B, phys.local_capacity)
    p_l = local_power_for_bits(d_l, phys)
    p_o = offload_power_for_bits(B - d_l, phi * h_norm2, phys)
    return p_l, p_o


def greedy_offload_act(B, phi, h_norm2, phys):
    """Offloading first, remainder executed locally. Returns ``(p_local, p_offload)``."""
    gain = phi * h_norm2
    p_o = offload_power_for_bits(B, gain, phys)
    d_o = _offloaded(p_o, gain, phys) if p_o > 0 else 0.0
    rest = max(B - d_o, 0.0)
    d_l = min(rest, phys.local_capacity)
    return local_power_for_bits(d_l, phys), p_o


class _GreedyPolicy(BaseAgent):
    def __init__(
        self,
        obs_dim=10,
        p_local_max=2.0,
        p_offload_max=2.0,
        slot_len=1e-3,
        bandwidth=1e6,
        noise_var=1e-9,
        kappa=1e-27,
        cycles_per_bit=500.0,
        buffer_norm=1e4,
        mean_gain=1e-9,
    ):
        self.obs_dim = obs_dim
        self.p_local_max = p_local_max
        self.p_offload_max = p_offload_max
        self.slot_len = slot_len
        self.bandwidth = bandwidth
        self.noise_var = noise_var
        self.kappa = kappa
        self.cycles_per_bit = cycles_per_bit
        self.buffer_norm = buffer_norm
        self.mean_gain = mean_gain

    @classmethod
    def from_env(cls, cfg, m):
        """Policy for user ``m`` of an :class:`~mecoffload.env.EnvConfig`."""
        u = cfg.users[m]
        return cls(
            obs_dim=cfg.obs_dim,
            p_local_max=u.p_local_max,
            p_offload_max=u.p_offload_max,
            slot_len=cfg.slot_len,
            bandwidth=cfg.bandwidth,
            noise_var=cfg.noise_var,
            kappa=u.kappa,
            cycles_per_bit=u.cycles_per_bit,
            buffer_norm=cfg.buffer_norm,
            mean_gain=cfg.mean_gain(m),
        )

    def setup(self):
        self.phys_ = _Physics(self)
        return self

    def decode(self, obs):
        """``(B bits, phi(t-1), |h(t)|^2)`` from a normalized observation."""
        obs = np.asarray(obs, dtype=float)
        return obs[0] * self.buffer_norm, obs[1], float(np.dot(obs[2:], obs[2:])) * self.mean_gain

    def act(self, obs, explore=False):
        if not hasattr(self, "phys_"):
            self.setup()
        return np.array(self._rule(*self.decode(obs), self.phys_))


class GreedyLocalPolicy(_GreedyPolicy):
    """GD-Local baseline."""

    _rule = staticmethod(greedy_local_act)


class GreedyOffloadPolicy(_GreedyPolicy):
    """GD-Offload baseline."""

    _rule = staticmethod(greedy_offload_act)
