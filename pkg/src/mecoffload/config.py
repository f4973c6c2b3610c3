"""TOML run configuration: parsing, ``--set`` overrides, validation and dumping.

Layout::

    [env]          # EnvConfig scalars (n_antennas, slot_len, ...)
    [run]          # RunConfig scalars (episodes, seeds, ...)
    [agent]        # defaults for every user's agent: kind plus hyperparameters
    [[users]]      # one table per user (UserConfig fields)
    [[agents]]     # optional per-user agent table overriding [agent]

An empty file gives one user with the default physical constants.
Overrides use dotted paths with 1-based list indices, e.g.
``users.2.arrival_rate=3e6`` or ``agents.1.kind="dqn"``.
"""

import copy
import sys
from dataclasses import fields
from pathlib import Path
from typing import NamedTuple

import tomli_w

from .agents import AGENT_KINDS, DDPGAgent, DQNAgent, make_agent
from .env import EnvConfig, UserConfig
from .harness import RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "AgentSpec", "parse_config", "load_config_text", "apply_override", "dump_config"]

SECTIONS = ("env", "run", "agent", "users", "agents")
# set from the environment, never from config
_DERIVED_AGENT_KEYS = {"obs_dim", "p_local_max", "p_offload_max", "random_state"}
_LEARNER_CLASSES = {"ddpg": DDPGAgent, "dqn": DQNAgent}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _field_defaults(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


_ENV_KEYS = _field_defaults(EnvConfig, skip=("users",))
_USER_KEYS = _field_defaults(UserConfig)
_RUN_KEYS = _field_defaults(RunConfig, skip=("agents", "agent_params"))


def _agent_keys(kind):
    cls = _LEARNER_CLASSES.get(kind)
    if cls is None:
        return {}
    return {k: v for k, v in cls().get_params().items() if k not in _DERIVED_AGENT_KEYS}


_ALL_AGENT_KEYS = set(_agent_keys("ddpg")) | set(_agent_keys("dqn"))


class AgentSpec(NamedTuple):
    kind: str
    params: dict


def _coerce(path, value, default):
    """Match the type of a default (int/float/str/tuple)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list, got {value!r}")
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path} must be a list of integers")
        return tuple(value)
    return value


def _check_table(path, table, known):
    if not isinstance(table, dict):
        raise ConfigError(f"{path} must be a table")
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]}; valid keys: {', '.join(sorted(known))}")
    return {k: _coerce(f"{path}.{k}", v, known[k]) for k, v in table.items()}


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(doc, assignment):
    """Apply one ``dotted.path=value`` to a raw config dict (in place)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts) or parts[0] not in SECTIONS:
        raise ConfigError(f"override {key!r}: path must start with one of {', '.join(SECTIONS)}")
    value = _parse_value(text.strip())
    node = doc
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            if not part.isdigit() or int(part) < 1:
                raise ConfigError(f"override {key!r}: list index {part!r} must be a positive integer")
            idx = int(part) - 1
            while len(node) <= idx:
                node.append({})
            node = node[idx]
        else:
            node = node.setdefault(part, [] if i == 0 and part in ("users", "agents") else {})
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"override {key!r}: {part} is not a table")
    if isinstance(node, list):
        raise ConfigError(f"override {key!r}: missing field name after list index")
    node[parts[-1]] = value
    return doc


def load_config_text(path):
    """Read a TOML config file into a raw dict (``None`` means empty)."""
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise
    except (PermissionError, IsADirectoryError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def _build_agents(doc, M):
    shared = doc.get("agent", {})
    if not isinstance(shared, dict):
        raise ConfigError("agent must be a table")
    per_user = doc.get("agents", [])
    if not isinstance(per_user, list):
        raise ConfigError("agents must be an array of tables")
    if len(per_user) > M:
        raise ConfigError(f"{len(per_user)} [[agents]] tables given for {M} users")

    unknown = sorted(set(shared) - _ALL_AGENT_KEYS - {"kind"})
    if unknown:
        raise ConfigError(f"unknown key agent.{unknown[0]}")
    specs = []
    for m in range(M):
        entry = per_user[m] if m < len(per_user) else {}
        where = f"agents.{m + 1}"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where} must be a table")
        kind = entry.get("kind", shared.get("kind", "ddpg"))
        if kind not in AGENT_KINDS:
            raise ConfigError(f"{where}.kind must be one of {AGENT_KINDS}, got {kind!r}")
        known = _agent_keys(kind)
        params = {k: v for k, v in shared.items() if k in known}
        own = {k: v for k, v in entry.items() if k != "kind"}
        if own and not known:
            raise ConfigError(f"{where}: {kind} agents take no hyperparameters (got {sorted(own)[0]})")
        params.update(own)
        params = _check_table(where, params, known)
        specs.append(AgentSpec(kind, params))
    return specs


def parse_config(path=None, overrides=(), seed=None):
    """Resolve a config file plus overrides into ``(EnvConfig, RunConfig, agent_specs)``.

    Raises :class:`ConfigError` for unknown keys, bad types and violated
    constraints, with the offending path in the message.
    """
    doc = load_config_text(path)
    doc = copy.deepcopy(doc)
    for ov in overrides:
        apply_override(doc, ov)
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section {unknown[0]!r}; expected {', '.join(SECTIONS)}")

    env_kw = _check_table("env", doc.get("env", {}), _ENV_KEYS)
    raw_users = doc.get("users", [{}])
    if not isinstance(raw_users, list):
        raise ConfigError("users must be an array of tables")
    users = tuple(UserConfig(**_check_table(f"users.{m + 1}", u, _USER_KEYS)) for m, u in enumerate(raw_users))
    env_cfg = EnvConfig(users=users, **env_kw)

    run_kw = _check_table("run", doc.get("run", {}), _RUN_KEYS)
    if seed is not None:
        run_kw["seeds"] = (int(seed),)
    specs = _build_agents(doc, env_cfg.M)
    run_cfg = RunConfig(agents=tuple(s.kind for s in specs), agent_params=tuple(s.params for s in specs), **run_kw)
    try:
        env_cfg.validate()
        run_cfg.validate(env_cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for m, s in enumerate(specs):
        if s.params:
            try:
                make_agent(s.kind, env_cfg, m, **s.params)
            except ValueError as exc:
                raise ConfigError(f"agents.{m + 1}: {exc}") from exc
    return env_cfg, run_cfg, specs


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def dump_config(env_cfg, run_cfg, path=None):
    """Serialize resolved configs to TOML text (written to ``path`` if given).

    Reading the result back with :func:`parse_config` gives equal configs.
    """
    doc = {
        "env": {k: _plain(getattr(env_cfg, k)) for k in _ENV_KEYS},
        "run": {k: _plain(getattr(run_cfg, k)) for k in _RUN_KEYS},
        "users": [{k: getattr(u, k) for k in _USER_KEYS} for u in env_cfg.users],
        "agents": [
            {"kind": kind, **{k: _plain(v) for k, v in sorted(run_cfg.params_for(m).items())}}
            for m, kind in enumerate(run_cfg.agents)
        ],
    }
    text = tomli_w.dumps(doc)
    if path is not None:
        Path(path).write_text(text)
    return text
