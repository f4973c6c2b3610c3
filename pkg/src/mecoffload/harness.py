"""Training, evaluation, power-delay sweeps and metric aggregation."""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import AGENT_KINDS, make_agent
from .env import MECEnv

__all__ = [
    "LOG_COLUMNS",
    "RunConfig",
    "MetricsRow",
    "TrainResult",
    "train",
    "evaluate",
    "evaluate_checkpoints",
    "load_agents",
    "run_seeds",
    "sweep_tradeoff",
    "aggregate",
    "write_log_csv",
    "read_log_csv",
    "write_summary",
    "pool_map",
]

log = logging.getLogger(__name__)

LOG_COLUMNS = (
    "run_id",
    "seed",
    "episode",
    "user",
    "avg_reward",
    "avg_power_w",
    "avg_buffer_kbit",
    "avg_delay_slots",
)
METRICS = ("avg_reward", "avg_power_w", "avg_buffer_kbit", "avg_delay_slots")
EVAL_EPISODE = -1


@dataclass(frozen=True)
class RunConfig:
    """Training/evaluation schedule and one agent kind (plus overrides) per user.

    ``agent_params`` holds one dict of hyperparameter overrides per user.
    """

    episodes: int = 2000
    steps_per_episode: int = 200
    eval_runs: int = 100
    eval_steps: int = 10000
    seeds: tuple = (0,)
    agents: tuple = ("ddpg",)
    agent_params: tuple = ()
    checkpoint_every: int = 100
    run_id: str = "run"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "agent_params", tuple(dict(p) for p in self.agent_params))

    def params_for(self, m):
        return self.agent_params[m] if m < len(self.agent_params) else {}

    def validate(self, env_cfg=None):
        for f in ("episodes", "steps_per_episode", "eval_runs", "eval_steps"):
            if getattr(self, f) <= 0:
                raise ValueError(f"run.{f} must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("run.checkpoint_every must be nonnegative")
        if not self.seeds:
            raise ValueError("run.seeds must list at least one seed")
        for k in self.agents:
            if k not in AGENT_KINDS:
                raise ValueError(f"unknown agent kind {k!r}; expected one of {AGENT_KINDS}")
        if env_cfg is not None and len(self.agents) != env_cfg.M:
            raise ValueError(f"{len(self.agents)} agent kinds given for {env_cfg.M} users; need one per user")
        return self


@dataclass
class MetricsRow:
    run_id: str
    seed: int
    episode: int
    user: int
    avg_reward: float
    avg_power_w: float
    avg_buffer_kbit: float
    avg_delay_slots: float

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    rows: list
    agents: list
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


class _Accumulator:
    """Running per-user sums of reward, power and reward-relevant backlog."""

    def __init__(self, M):
        self.n = 0
        self.reward = np.zeros(M)
        self.power = np.zeros(M)
        self.buffer = np.zeros(M)

    def add(self, res):
        self.n += 1
        self.reward += res.rewards
        self.power += res.info["power_total"]
        self.buffer += res.info["reward_buffer"]

    def rows(self, env_cfg, run_id, seed, episode):
        out = []
        for m, u in enumerate(env_cfg.users):
            buf_bits = self.buffer[m] / self.n
            per_slot = u.arrival_rate * env_cfg.slot_len
            delay = buf_bits / per_slot if per_slot > 0 else 0.0
            out.append(
                MetricsRow(
                    run_id=run_id,
                    seed=seed,
                    episode=episode,
                    user=m + 1,
                    avg_reward=float(self.reward[m] / self.n),
                    avg_power_w=float(self.power[m] / self.n),
                    avg_buffer_kbit=float(buf_bits / 1000.0),
                    avg_delay_slots=float(delay),
                )
            )
        return out


def _seed_streams(seed, M):
    ss = np.random.SeedSequence(seed).spawn(M + 1)
    return np.random.default_rng(ss[0]), ss[1:]


def build_agents(run_cfg, env_cfg, seed):
    """Fresh agents for every user, each with its own random stream."""
    env_rng, agent_seeds = _seed_streams(seed, env_cfg.M)
    total_steps = run_cfg.episodes * run_cfg.steps_per_episode
    agents = []
    for m, kind in enumerate(run_cfg.agents):
        params = dict(run_cfg.params_for(m))
        if kind == "dqn" and "eps_decay_steps" not in params:
            params["eps_decay_steps"] = int(0.6 * total_steps)
        agents.append(make_agent(kind, env_cfg, m, random_state=np.random.default_rng(agent_seeds[m]), **params))
    return env_rng, agents


def _save_agents(agents, directory):
    paths = []
    for m, agent in enumerate(agents):
        if agent.learns:
            paths.append(agent.save(Path(directory) / f"user{m + 1}"))
    return paths


def train(run_cfg, env_cfg, seed=None, out_dir=None):
    """Train every user's agent in one shared environment.

    Each slot: every agent acts (with exploration) on its own observation,
    the environment resolves all users jointly, and each agent stores its
    transition and takes one learning step.  One metrics row per user and
    episode is produced.  With ``out_dir`` set, checkpoints are written every
    ``checkpoint_every`` episodes and at the end.
    """
    run_cfg.validate(env_cfg)
    seed = run_cfg.seeds[0] if seed is None else int(seed)
    env_rng, agents = build_agents(run_cfg, env_cfg, seed)
    env = MECEnv(env_cfg, env_rng)
    result = TrainResult(rows=[], agents=agents)
    ckpt_root = Path(out_dir) / "checkpoints" if out_dir is not None else None

    for k in range(1, run_cfg.episodes + 1):
        obs = env.reset("train")
        for agent in agents:
            agent.begin_episode()
        acc = _Accumulator(env_cfg.M)
        losses = []
        for _ in range(run_cfg.steps_per_episode):
            actions = np.stack([agent.act(obs[m], explore=True) for m, agent in enumerate(agents)])
            res = env.step(actions)
            acc.add(res)
            applied = np.column_stack([res.info["power_local"], res.info["power_offload"]])
            for m, agent in enumerate(agents):
                agent.remember(obs[m], applied[m], res.rewards[m], res.observations[m])
                stats = agent.learn()
                if stats is not None:
                    losses.append((m + 1, stats))
            obs = res.observations
        result.rows.extend(acc.rows(env_cfg, run_cfg.run_id, seed, k))
        result.losses.append(losses)
        if ckpt_root is not None and run_cfg.checkpoint_every and k % run_cfg.checkpoint_every == 0:
            result.checkpoints.append(_save_agents(agents, ckpt_root / f"ep{k:05d}"))
        if k % 50 == 0:
            r = [row.avg_reward for row in result.rows[-env_cfg.M :]]
            log.info("seed %d episode %d rewards %s", seed, k, np.round(r, 3).tolist())

    if ckpt_root is not None:
        result.checkpoints.append(_save_agents(agents, ckpt_root / "final"))
    return result


def evaluate(run_cfg, env_cfg, agents, seed=None, run_id=None):
    """Test-stage averages per user over ``eval_runs`` x ``eval_steps`` slots.

    Exploration is off, buffers start empty, and agents are never updated.
    """
    seed = run_cfg.seeds[0] if seed is None else int(seed)
    run_id = f"{run_cfg.run_id}-eval" if run_id is None else run_id
    acc = _Accumulator(env_cfg.M)
    for run in range(run_cfg.eval_runs):
        env = MECEnv(env_cfg, np.random.default_rng([seed, 1, run]))
        obs = env.reset("test")
        for _ in range(run_cfg.eval_steps):
            actions = np.stack([agent.act(obs[m], explore=False) for m, agent in enumerate(agents)])
            res = env.step(actions)
            acc.add(res)
            obs = res.observations
    return acc.rows(env_cfg, run_id, seed, EVAL_EPISODE)


def load_agents(run_cfg, env_cfg, checkpoint_dir, seed=None):
    """Agents for evaluation: learners restored from ``checkpoint_dir/user<m>``."""
    seed = run_cfg.seeds[0] if seed is None else int(seed)
    _, agents = build_agents(run_cfg, env_cfg, seed)
    for m, agent in enumerate(agents):
        if agent.learns:
            d = Path(checkpoint_dir) / f"user{m + 1}"
            try:
                agent.load(d)
            except FileNotFoundError as exc:
                raise FileNotFoundError(
                    f"user {m + 1} ({run_cfg.agents[m]}) needs a checkpoint in {d}: {exc}"
                ) from exc
    return agents


def evaluate_checkpoints(run_cfg, env_cfg, checkpoint_dir, seed=None):
    return evaluate(run_cfg, env_cfg, load_agents(run_cfg, env_cfg, checkpoint_dir, seed), seed)


def _train_and_evaluate(args):
    run_cfg, env_cfg, seed, out_dir = args
    needs_training = any(kind in ("ddpg", "dqn") for kind in run_cfg.agents)
    if needs_training:
        tr = train(run_cfg, env_cfg, seed, out_dir)
        agents, rows = tr.agents, tr.rows
    else:
        _, agents = build_agents(run_cfg, env_cfg, seed)
        rows = []
    return rows, evaluate(run_cfg, env_cfg, agents, seed)


def pool_map(fn, tasks, workers):
    """``[fn(t) for t in tasks]``, in a process pool when ``workers > 1`` (order preserved)."""
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def run_seeds(run_cfg, env_cfg, workers=1, out_dir=None):
    """Train (when needed) and evaluate once per seed.

    Returns ``(training_logs, eval_logs)``, each a list with one row list per seed.
    """
    run_cfg.validate(env_cfg)
    tasks = []
    for s in run_cfg.seeds:
        sub = None if out_dir is None else Path(out_dir) / f"seed{s}"
        tasks.append((run_cfg, env_cfg, s, sub))
    results = pool_map(_train_and_evaluate, tasks, workers)
    return [r[0] for r in results], [r[1] for r in results]


def sweep_tradeoff(run_cfg, env_cfg, w_list, workers=1, user=1):
    """Power-delay tradeoff: train and test one policy per (w, seed).

    Every user's ``w`` is set to the sweep value.  Returns ``(table, detail)``:
    ``table`` has one dict per ``w`` (sorted) with seed-averaged
    ``avg_power_w``, ``avg_buffer_kbit``, ``avg_delay_slots`` and
    ``avg_reward`` of user ``user``; ``detail`` has one dict per (w, seed).
    """
    run_cfg.validate(env_cfg)
    ws = sorted(float(w) for w in w_list)
    tasks = []
    for w in ws:
        cfg_w = env_cfg.with_users(w=w)
        for s in run_cfg.seeds:
            tasks.append((replace(run_cfg, run_id=f"{run_cfg.run_id}-w{w:g}"), cfg_w, s, None))
    results = pool_map(_train_and_evaluate, tasks, workers)

    detail = []
    for (rc, cfg_w, s, _), (_, eval_rows) in zip(tasks, results):
        row = eval_rows[user - 1]
        detail.append({"w": cfg_w.users[user - 1].w, "seed": s, **{k: getattr(row, k) for k in METRICS}})
    table = []
    for w in ws:
        pts = [d for d in detail if d["w"] == w]
        table.append({"w": w, **{k: float(np.mean([p[k] for p in pts])) for k in METRICS}})
    return table, detail


def _as_row(r):
    if isinstance(r, MetricsRow):
        return r
    if not isinstance(r, dict):
        raise ValueError(f"malformed log row: {r!r}")
    missing = [c for c in LOG_COLUMNS if c not in r]
    if missing:
        raise ValueError(f"log row missing columns {missing}")
    try:
        row = MetricsRow(
            run_id=str(r["run_id"]),
            seed=int(r["seed"]),
            episode=int(r["episode"]),
            user=int(r["user"]),
            **{k: float(r[k]) for k in METRICS},
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"malformed log row {r!r}: {exc}") from exc
    if not all(math.isfinite(getattr(row, k)) for k in METRICS):
        raise ValueError(f"non-finite metric in log row {r!r}")
    return row


def aggregate(logs):
    """Combine per-seed logs into means and standard errors.

    ``logs`` is an iterable of row lists (one per seed/run).  Rows are grouped
    by ``(run_id, episode, user)``; per-seed rows are kept alongside.
    """
    rows = [_as_row(r) for lg in logs for r in lg]
    if not rows:
        raise ValueError("no log rows to aggregate")
    groups = {}
    for r in rows:
        groups.setdefault((r.run_id, r.episode, r.user), []).append(r)
    summary = []
    for (run_id, episode, user), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        entry = {"run_id": run_id, "episode": episode, "user": user, "n": len(rs)}
        for k in METRICS:
            vals = np.array([getattr(r, k) for r in rs])
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            entry[k] = {"mean": float(math.fsum(vals) / len(vals)), "stderr": se}
        summary.append(entry)
    return {"per_seed": [r.as_dict() for r in rows], "summary": summary}


def write_log_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            d = _as_row(r).as_dict()
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()})
    return path


def read_log_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"{path}: header {reader.fieldnames} != {list(LOG_COLUMNS)}")
        return [_as_row(r) for r in reader]


def write_summary(summary, csv_path, json_path):
    """Write an :func:`aggregate` result as CSV (means/stderrs) and JSON."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(summary, indent=1) + "\n")
    cols = ["run_id", "episode", "user", "n"] + [f"{k}_{s}" for k in METRICS for s in ("mean", "stderr")]
    with Path(csv_path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for e in summary["summary"]:
            writer.writerow(
                [e["run_id"], e["episode"], e["user"], e["n"]]
                + [repr(e[k][s]) for k in METRICS for s in ("mean", "stderr")]
            )
