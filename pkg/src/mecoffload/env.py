"""Multi-user MEC environment: AR(1) MIMO uplinks, ZF detection and task buffers.

Each slot every user picks a local-execution power and an offloading power.
The base station resolves all users jointly with a zero-forcing detector,
bits are drained from each user's buffer by local DVFS execution and by the
uplink, new tasks arrive, and each user receives its own scalar reward and
local observation ``[B(t), phi(t-1), Re h(t), Im h(t)]``.
"""

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .numerics import SingularMatrixError, make_rng, sample_gaussian_cvector, sample_poisson, zf_diag

__all__ = [
    "UserConfig",
    "EnvConfig",
    "StepResult",
    "MECEnv",
    "channel_step",
    "resolve_uplink",
    "local_bits",
    "max_local_bits",
    "offload_bits",
    "buffer_step",
    "reward",
    "observe",
]

ARRIVAL_DISTS = ("poisson", "deterministic", "uniform")
REWARD_TIMINGS = ("pre", "post")


@dataclass(frozen=True)
class UserConfig:
    """Per-user physical parameters (SI units, rates in bit/s)."""

    distance: float = 100.0
    rho: float = 0.95
    arrival_rate: float = 2.0e6
    p_local_max: float = 2.0
    p_offload_max: float = 2.0
    kappa: float = 1e-27
    cycles_per_bit: float = 500.0
    w: float = 0.5

    def validate(self, where="user"):
        for f in ("distance", "p_local_max", "p_offload_max", "kappa", "cycles_per_bit"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{where}.{f} must be positive, got {getattr(self, f)}")
        if not self.arrival_rate >= 0:
            raise ValueError(f"{where}.arrival_rate must be nonnegative")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"{where}.rho must lie in [0, 1], got {self.rho}")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"{where}.w must lie in [0, 1], got {self.w}")


@dataclass(frozen=True)
class EnvConfig:
    """System-wide parameters plus one :class:`UserConfig` per user."""

    users: tuple = (UserConfig(),)
    n_antennas: int = 4
    slot_len: float = 1e-3
    bandwidth: float = 1e6
    noise_var: float = 1e-9
    h0_db: float = -30.0
    d0: float = 1.0
    pathloss_exponent: float = 3.0
    arrival_dist: str = "poisson"
    buffer_unit: float = 1000.0
    buffer_norm: float = 1.0e4
    b_init_max: float = 1.0e4
    reward_timing: str = "pre"
    cond_cap: float = 1e12

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))

    @property
    def M(self):
        return len(self.users)

    @property
    def N(self):
        return self.n_antennas

    @property
    def obs_dim(self):
        return 2 + 2 * self.n_antennas

    def mean_gain(self, m):
        """Average per-antenna channel power ``h0 (d0/d)^alpha`` of user ``m``."""
        u = self.users[m]
        return 10.0 ** (self.h0_db / 10.0) * (self.d0 / u.distance) ** self.pathloss_exponent

    @property
    def mean_gains(self):
        return np.array([self.mean_gain(m) for m in range(self.M)])

    def with_users(self, **changes):
        """Copy with the same field changes applied to every user."""
        return replace(self, users=tuple(replace(u, **changes) for u in self.users))

    def validate(self):
        if self.M < 1:
            raise ValueError("at least one user is required")
        if not self.n_antennas > self.M:
            raise ValueError(
                f"env.n_antennas ({self.n_antennas}) must exceed the number of users ({self.M}): "
                "zero-forcing needs N > M"
            )
        for f in ("slot_len", "bandwidth", "noise_var", "d0", "pathloss_exponent", "buffer_unit", "buffer_norm"):
            if not getattr(self, f) > 0:
                raise ValueError(f"env.{f} must be positive, got {getattr(self, f)}")
        if self.b_init_max < 0:
            raise ValueError("env.b_init_max must be nonnegative")
        if self.arrival_dist not in ARRIVAL_DISTS:
            raise ValueError(f"env.arrival_dist must be one of {ARRIVAL_DISTS}")
        if self.reward_timing not in REWARD_TIMINGS:
            raise ValueError(f"env.reward_timing must be one of {REWARD_TIMINGS}")
        for m, u in enumerate(self.users):
            u.validate(where=f"users.{m + 1}")
        return self


def channel_step(H, cfg, rng):
    """Advance every user's channel column by the Gauss-Markov AR(1) recursion."""
    H = np.array(H, dtype=complex)
    for m, u in enumerate(cfg.users):
        if u.rho == 1.0:
            continue
        e = sample_gaussian_cvector(rng, cfg.n_antennas, cfg.mean_gain(m))
        H[:, m] = u.rho * H[:, m] + math.sqrt(1.0 - u.rho**2) * e
    return H


def initial_channels(cfg, rng):
    H = np.empty((cfg.n_antennas, cfg.M), dtype=complex)
    for m in range(cfg.M):
        H[:, m] = sample_gaussian_cvector(rng, cfg.n_antennas, cfg.mean_gain(m))
    return H


def resolve_uplink(H, p_offload, cfg, prev_phi=None):
    """Post-ZF SINR and projected power ratio of every user.

    ``gamma_m = p_m / (noise * [(H^H H)^-1]_mm)`` and
    ``phi_m = 1 / (|h_m|^2 [(H^H H)^-1]_mm)``, clamped into (0, 1].

    If ``H`` is numerically rank deficient and ``prev_phi`` is given, the slot
    is an outage: all SINRs are zero and ``prev_phi`` is returned unchanged.
    Without ``prev_phi`` the :class:`SingularMatrixError` propagates.
    """
    p = np.asarray(p_offload, dtype=float)
    try:
        d = zf_diag(H, cond_cap=cfg.cond_cap)
    except SingularMatrixError:
        if prev_phi is None:
            raise
        return np.zeros_like(p), np.array(prev_phi, dtype=float)
    norms = np.sum(np.abs(H) ** 2, axis=0)
    gamma = p / (cfg.noise_var * d)
    if H.shape[1] == 1:
        phi = np.ones(1)
    else:
        phi = np.minimum(1.0 / (norms * d), 1.0)
    return gamma, phi


def max_local_bits(cfg, m):
    u = cfg.users[m]
    return cfg.slot_len * np.cbrt(u.p_local_max / u.kappa) / u.cycles_per_bit


def local_bits(p_local, cfg, m):
    """Bits executed locally in one slot at power ``p_local`` (CPU at ``cbrt(p/kappa)`` Hz)."""
    u = cfg.users[m]
    return cfg.slot_len * np.cbrt(p_local / u.kappa) / u.cycles_per_bit


def offload_bits(gamma, cfg):
    return cfg.slot_len * cfg.bandwidth * np.log2(1.0 + gamma)


def buffer_step(B, d_local, d_offload, arrivals):
    return np.maximum(B - d_local - d_offload, 0.0) + arrivals


def reward(p_local, p_offload, B, cfg, m):
    """``-10 w (p_l + p_o) - (1 - w) B / buffer_unit`` for user ``m``."""
    w = cfg.users[m].w
    return -10.0 * w * (p_local + p_offload) - (1.0 - w) * (B / cfg.buffer_unit)


def observe(B, last_phi, h, cfg, m):
    """Normalized local observation of user ``m``: length ``2 + 2N``."""
    scale = 1.0 / math.sqrt(cfg.mean_gain(m))
    obs = np.empty(cfg.obs_dim)
    obs[0] = B / cfg.buffer_norm
    obs[1] = last_phi
    n = cfg.n_antennas
    obs[2 : 2 + n] = h.real * scale
    obs[2 + n :] = h.imag * scale
    return obs


@dataclass
class StepResult:
    rewards: np.ndarray
    observations: np.ndarray
    info: dict = field(default_factory=dict)


class MECEnv:
    """Shared environment stepping all users jointly, one slot per :meth:`step`.

    Parameters
    ----------
    cfg : EnvConfig
    rng : int, None or numpy Generator
        Source of channel fading and task arrivals.
    """

    def __init__(self, cfg, rng=None):
        self.cfg = cfg.validate()
        self.rng = make_rng(rng)
        self._p_max = np.array([[u.p_local_max, u.p_offload_max] for u in cfg.users])
        self._lam = np.array([u.arrival_rate * cfg.slot_len for u in cfg.users])
        self.H = None
        self.B = None
        self.last_phi = None
        self.t = 0

    @property
    def action_bounds(self):
        return self._p_max.copy()

    def reset(self, mode="train"):
        """Redraw channels and buffers; returns the ``(M, 2 + 2N)`` observation array."""
        if mode not in ("train", "test"):
            raise ValueError("mode must be 'train' or 'test'")
        cfg = self.cfg
        self.H = initial_channels(cfg, self.rng)
        if mode == "train" and cfg.b_init_max > 0:
            self.B = self.rng.uniform(0.0, cfg.b_init_max, size=cfg.M)
        else:
            self.B = np.zeros(cfg.M)
        _, self.last_phi = resolve_uplink(self.H, np.zeros(cfg.M), cfg, prev_phi=np.ones(cfg.M))
        self.t = 0
        return self.observations()

    def observations(self):
        return np.stack([self.observe(m) for m in range(self.cfg.M)])

    def observe(self, m):
        return observe(self.B[m], self.last_phi[m], self.H[:, m], self.cfg, m)

    def _arrivals(self):
        dist = self.cfg.arrival_dist
        if dist == "deterministic":
            return self._lam.copy()
        if dist == "uniform":
            return self.rng.uniform(0.0, 2.0 * self._lam)
        return np.array([float(sample_poisson(self.rng, lam)) for lam in self._lam])

    def step(self, actions):
        """Apply one ``(p_local, p_offload)`` pair per user and advance one slot."""
        if self.H is None:
            raise RuntimeError("call reset() before step()")
        cfg = self.cfg
        a = np.asarray(actions, dtype=float).reshape(cfg.M, 2)
        clipped = np.clip(a, 0.0, self._p_max)
        was_clipped = np.any(clipped != a, axis=1)
        p_l, p_o = clipped[:, 0], clipped[:, 1]

        gamma, phi = resolve_uplink(self.H, p_o, cfg, prev_phi=self.last_phi)
        d_l = np.array([local_bits(p_l[m], cfg, m) for m in range(cfg.M)])
        d_o = offload_bits(gamma, cfg)
        arrivals = self._arrivals()
        B = self.B
        B_next = buffer_step(B, d_l, d_o, arrivals)
        B_cost = B if cfg.reward_timing == "pre" else B_next
        rewards = np.array([reward(p_l[m], p_o[m], B_cost[m], cfg, m) for m in range(cfg.M)])

        info = {
            "sinr": gamma,
            "phi": phi,
            "d_local": d_l,
            "d_offload": d_o,
            "departures": np.minimum(B, d_l + d_o),
            "arrivals": arrivals,
            "buffer": B.copy(),
            "reward_buffer": np.array(B_cost, dtype=float),
            "power_local": p_l,
            "power_offload": p_o,
            "power_total": p_l + p_o,
            "clipped": was_clipped,
        }
        self.B = B_next
        self.last_phi = phi
        self.H = channel_step(self.H, cfg, self.rng)
        self.t += 1
        return StepResult(rewards, self.observations(), info)


def config_field_names(cls):
    return [f.name for f in fields(cls)]
