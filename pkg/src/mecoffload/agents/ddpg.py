from pathlib import Path

import numpy as np

from ..nn import TargetPair, adam_step, backward, forward, init_net, load_checkpoint, mlp_spec, save_checkpoint, soft_update
from ..numerics import OUProcess, make_rng
from .base import BaseAgent
from .replay import ReplayBuffer

__all__ = ["DDPGAgent"]


class DDPGAgent(BaseAgent):
    """Continuous-power agent: deterministic sigmoid actor plus a Q critic.

    The actor outputs a point in the unit square which is scaled by
    ``(p_local_max, p_offload_max)``.  Replay storage, the critic's action
    input and the OU exploration noise all work in that normalized space.
    The critic receives the action at its second hidden layer.

    Parameters
    ----------
    obs_dim : int
        Observation length, ``2 + 2N``.
    p_local_max, p_offload_max : float
        Power caps in watts.
    hidden : tuple of int
        Hidden layer widths shared by actor and critic.
    lr_actor, lr_critic : float
        Adam learning rates.
    tau : float
        Soft target-update rate.
    gamma : float
        Discount factor.
    batch_size, warmup : int
        Minibatch size; no learning happens before ``max(batch_size, warmup)``
        transitions are stored.
    buffer_size : int
        Replay capacity.
    reward_scale : float
        Rewards are multiplied by this inside the critic targets only, so Q
        is learned in units of about one slot's reward when it equals
        ``1 - gamma``.  The environment reward and all metrics are unaffected.
    ou_theta, ou_sigma : float
        Exploration noise parameters.
    random_state : int, Generator or None
    """

    learns = True

    def __init__(
        self,
        obs_dim=10,
        p_local_max=2.0,
        p_offload_max=2.0,
        hidden=(400, 300),
        lr_actor=1e-4,
        lr_critic=1e-3,
        tau=1e-3,
        gamma=0.99,
        batch_size=64,
        warmup=1000,
        buffer_size=250_000,
        reward_scale=0.01,
        ou_theta=0.15,
        ou_sigma=0.12,
        random_state=None,
    ):
        self.obs_dim = obs_dim
        self.p_local_max = p_local_max
        self.p_offload_max = p_offload_max
        self.hidden = hidden
        self.lr_actor = lr_actor
        self.lr_critic = lr_critic
        self.tau = tau
        self.gamma = gamma
        self.batch_size = batch_size
        self.warmup = warmup
        self.buffer_size = buffer_size
        self.reward_scale = reward_scale
        self.ou_theta = ou_theta
        self.ou_sigma = ou_sigma
        self.random_state = random_state

    def setup(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        self.rng_ = make_rng(self.random_state)
        hidden = tuple(self.hidden)
        actor = init_net(mlp_spec(self.obs_dim, hidden, 2, "sigmoid"), self.rng_)
        critic = init_net(
            mlp_spec(self.obs_dim, hidden, 1, "linear", aux_dim=2, aux_inject=1),
            self.rng_,
            aux_inject=1,
        )
        self.actor_ = TargetPair(actor)
        self.critic_ = TargetPair(critic)
        self.ou_ = OUProcess(self.ou_theta, self.ou_sigma, 0.0, size=2)
        self.buffer_ = ReplayBuffer(self.buffer_size)
        self.bounds_ = np.array([self.p_local_max, self.p_offload_max], dtype=float)
        return self

    def __sklearn_is_fitted__(self):
        return hasattr(self, "actor_")

    def begin_episode(self):
        self.ou_.reset()

    def act(self, obs, explore=False):
        """Powers in watts; with ``explore`` OU noise is added before clipping."""
        u = self.actor_.learned(obs)
        if explore:
            u = np.clip(u + self.ou_.step(self.rng_), 0.0, 1.0)
        return u * self.bounds_

    def remember(self, s, a, r, s_next):
        self.buffer_.push(s, np.asarray(a) / self.bounds_, r, s_next)

    @property
    def ready(self):
        return len(self.buffer_) >= max(self.batch_size, self.warmup)

    def learn(self):
        """One critic and one actor update on a sampled minibatch.

        Returns ``None`` (no-op) until enough transitions are stored.
        """
        if not self.ready:
            return None
        return self.learn_batch(self.buffer_.sample(self.batch_size, self.rng_))

    def critic_targets(self, batch):
        a_next = self.actor_.target(batch.s_next)
        q_next = self.critic_.target(batch.s_next, a_next)[:, 0]
        return self.reward_scale * batch.r + self.gamma * q_next

    def actor_gradient(self, s):
        """Gradient of ``mean_i Q(s_i, mu(s_i))`` w.r.t. the actor parameters."""
        actor, critic = self.actor_.learned, self.critic_.learned
        a, a_cache = forward(actor, s)
        _, q_cache = forward(critic, s, a)
        n = s.shape[0]
        _, _, dq_da = backward(critic, q_cache, np.full((n, 1), 1.0 / n))
        grads, _, _ = backward(actor, a_cache, dq_da)
        return grads

    def learn_batch(self, batch):
        critic = self.critic_.learned
        n = batch.s.shape[0]
        y = self.critic_targets(batch)
        q, cache = forward(critic, batch.s, batch.a)
        err = q[:, 0] - y
        critic_loss = float(np.mean(err**2))
        grads, _, _ = backward(critic, cache, (2.0 / n) * err[:, None])
        adam_step(critic, grads, self.lr_critic)

        actor_grads = self.actor_gradient(batch.s)
        adam_step(self.actor_.learned, -actor_grads, self.lr_actor)
        actor_objective = float(np.mean(critic(batch.s, self.actor_.learned(batch.s))))

        soft_update(self.actor_, self.tau)
        soft_update(self.critic_, self.tau)
        return {"critic_loss": critic_loss, "actor_objective": actor_objective}

    def save(self, directory, prefix="ddpg"):
        d = Path(directory)
        paths = {
            "actor": d / f"{prefix}_actor.json",
            "critic": d / f"{prefix}_critic.json",
        }
        save_checkpoint(self.actor_.learned, paths["actor"])
        save_checkpoint(self.critic_.learned, paths["critic"])
        return paths

    def load(self, directory, prefix="ddpg"):
        """Restore the actor (and critic, if present) saved by :meth:`save`."""
        d = Path(directory)
        if not hasattr(self, "actor_"):
            self.setup()
        actor = load_checkpoint(d / f"{prefix}_actor.json")
        if actor.input_dim != self.obs_dim or actor.output_dim != 2:
            raise ValueError(
                f"actor checkpoint maps {actor.input_dim}->{actor.output_dim}, expected {self.obs_dim}->2"
            )
        self.actor_ = TargetPair(actor)
        critic_path = d / f"{prefix}_critic.json"
        if critic_path.is_file():
            self.critic_ = TargetPair(load_checkpoint(critic_path))
        return self
