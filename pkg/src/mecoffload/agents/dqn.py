from pathlib import Path

import numpy as np

from ..nn import TargetPair, adam_step, backward, forward, init_net, load_checkpoint, mlp_spec, save_checkpoint, soft_update
from ..numerics import make_rng
from .base import BaseAgent
from .replay import ReplayBuffer

__all__ = ["DQNAgent"]


class DQNAgent(BaseAgent):
    """Discrete-power agent over an ``L x L`` grid of (local, offload) levels.

    Action index ``k`` maps to level pair ``(k // L, k % L)``, i.e. powers
    ``(i * p_local_max / (L - 1), j * p_offload_max / (L - 1))``.
    Exploration is epsilon-greedy with a linear schedule from ``eps_start``
    to ``eps_end`` over ``eps_decay_steps`` exploring actions.  Rewards are
    multiplied by ``reward_scale`` inside the regression targets only.
    """

    learns = True

    def __init__(
        self,
        obs_dim=10,
        p_local_max=2.0,
        p_offload_max=2.0,
        levels=8,
        hidden=(400, 300),
        lr=1e-3,
        tau=1e-3,
        gamma=0.99,
        batch_size=64,
        warmup=1000,
        buffer_size=250_000,
        reward_scale=0.01,
        eps_start=1.0,
        eps_end=0.01,
        eps_decay_steps=100_000,
        random_state=None,
    ):
        self.obs_dim = obs_dim
        self.p_local_max = p_local_max
        self.p_offload_max = p_offload_max
        self.levels = levels
        self.hidden = hidden
        self.lr = lr
        self.tau = tau
        self.gamma = gamma
        self.batch_size = batch_size
        self.warmup = warmup
        self.buffer_size = buffer_size
        self.reward_scale = reward_scale
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_steps = eps_decay_steps
        self.random_state = random_state

    @property
    def n_actions(self):
        return self.levels * self.levels

    def setup(self):
        if self.levels < 2:
            raise ValueError("need at least two power levels")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        self.rng_ = make_rng(self.random_state)
        net = init_net(mlp_spec(self.obs_dim, tuple(self.hidden), self.n_actions, "linear"), self.rng_)
        self.qnet_ = TargetPair(net)
        self.buffer_ = ReplayBuffer(self.buffer_size)
        self.explore_steps_ = 0
        return self

    def __sklearn_is_fitted__(self):
        return hasattr(self, "qnet_")

    @property
    def epsilon(self):
        if self.eps_decay_steps <= 0:
            return self.eps_end
        frac = min(self.explore_steps_ / self.eps_decay_steps, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def index_to_action(self, k):
        i, j = divmod(int(k), self.levels)
        step = 1.0 / (self.levels - 1)
        return np.array([i * step * self.p_local_max, j * step * self.p_offload_max])

    def action_to_index(self, a):
        a = np.asarray(a, dtype=float)
        i = int(round(a[0] / self.p_local_max * (self.levels - 1)))
        j = int(round(a[1] / self.p_offload_max * (self.levels - 1)))
        return i * self.levels + j

    def select(self, obs, explore=False):
        """Return ``(powers, index)``."""
        if explore:
            eps = self.epsilon
            self.explore_steps_ += 1
            if self.rng_.random() < eps:
                k = int(self.rng_.integers(self.n_actions))
                return self.index_to_action(k), k
        k = int(np.argmax(self.qnet_.learned(obs)))
        return self.index_to_action(k), k

    def act(self, obs, explore=False):
        return self.select(obs, explore)[0]

    def remember(self, s, a, r, s_next):
        self.buffer_.push(s, [self.action_to_index(a)], r, s_next)

    @property
    def ready(self):
        return len(self.buffer_) >= max(self.batch_size, self.warmup)

    def learn(self):
        if not self.ready:
            return None
        return self.learn_batch(self.buffer_.sample(self.batch_size, self.rng_))

    def learn_batch(self, batch):
        """Regress ``Q(s, a)`` onto ``r + gamma * max_a' Q'(s', a')``; no terminal flags."""
        net = self.qnet_.learned
        n = batch.s.shape[0]
        idx = batch.a[:, 0].astype(int)
        y = self.reward_scale * batch.r + self.gamma * self.qnet_.target(batch.s_next).max(axis=1)
        q, cache = forward(net, batch.s)
        rows = np.arange(n)
        err = q[rows, idx] - y
        grad_out = np.zeros_like(q)
        grad_out[rows, idx] = (2.0 / n) * err
        grads, _, _ = backward(net, cache, grad_out)
        adam_step(net, grads, self.lr)
        soft_update(self.qnet_, self.tau)
        return {"loss": float(np.mean(err**2))}

    def save(self, directory, prefix="dqn"):
        path = Path(directory) / f"{prefix}_qnet.json"
        save_checkpoint(self.qnet_.learned, path)
        return {"qnet": path}

    def load(self, directory, prefix="dqn"):
        if not hasattr(self, "qnet_"):
            self.setup()
        net = load_checkpoint(Path(directory) / f"{prefix}_qnet.json")
        if net.input_dim != self.obs_dim or net.output_dim != self.n_actions:
            raise ValueError(
                f"Q-network checkpoint maps {net.input_dim}->{net.output_dim}, "
                f"expected {self.obs_dim}->{self.n_actions}"
            )
        self.qnet_ = TargetPair(net)
        return self
