"""``mecoffload`` command line: train, eval, sweep and inspect.

Exit status: 0 success, 1 usage error, 2 invalid config or checkpoint,
3 runtime failure.  Every output except ``meta.json`` is a deterministic
function of the command line and seed.
"""

import argparse
import csv
import json
import logging
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .agents import make_agent
from .config import ConfigError, dump_config, parse_config
from .harness import (
    aggregate,
    evaluate_checkpoints,
    pool_map,
    sweep_tradeoff,
    train,
    write_log_csv,
    write_summary,
)
from .nn import CheckpointError, load_checkpoint

__all__ = ["main", "build_parser", "inspect_net", "EXIT_OK", "EXIT_USAGE", "EXIT_VALIDATION", "EXIT_RUNTIME"]

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
TRADEOFF_COLUMNS = ("w", "avg_power_w", "avg_buffer_kbit", "avg_delay_slots", "avg_reward")

log = logging.getLogger("mecoffload")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _w_list(text):
    try:
        ws = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--w expects comma-separated numbers, got {text!r}") from None
    if not ws:
        raise argparse.ArgumentTypeError("--w needs at least one value")
    return ws


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file (default: built-in defaults)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. users.2.arrival_rate=3e6 (repeatable)")
    common.add_argument("--seed", type=_u64, help="run a single seed instead of run.seeds")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory (default: out)")
    common.add_argument("--workers", type=_positive_int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="mecoffload", description="Multi-user MEC power control with DDPG and baselines.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="{train,eval,sweep,inspect}", parser_class=_Parser)
    sub.required = True

    sub.add_parser("train", parents=[common], help="train agents and write logs and checkpoints")
    p = sub.add_parser("eval", parents=[common], help="evaluate trained (or greedy) agents")
    p.add_argument("--checkpoints", metavar="DIR",
                   help="checkpoint root from a train run (default: the --out directory)")
    p = sub.add_parser("sweep", parents=[common], help="power-delay tradeoff over the weight w")
    p.add_argument("--w", type=_w_list, default=[0.3, 0.4, 0.5, 0.6, 0.7, 0.8], metavar="W1,W2,...",
                   help="weights to sweep (default 0.3,...,0.8)")
    p.add_argument("--user", type=_positive_int, default=1, help="user whose metrics go in the table")
    p = sub.add_parser("inspect", parents=[common], help="describe checkpoint files or fresh networks")
    p.add_argument("paths", nargs="*", metavar="PATH", help="checkpoint file or directory")
    p.add_argument("--fresh", choices=("ddpg", "dqn"), help="describe a freshly built agent for user 1")
    return parser


def _load(args):
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    return parse_config(args.config, args.overrides, seed=args.seed)


def _write_meta(out, args, started):
    meta = {
        "verb": args.verb,
        "argv": sys.argv[1:],
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")


def _write_logs(out, stem, logs):
    write_log_csv([r for lg in logs for r in lg], out / f"{stem}_log.csv")
    write_summary(aggregate(logs), out / f"{stem}_summary.csv", out / f"{stem}_summary.json")


def _train_seed(task):
    run_cfg, env_cfg, seed, out_dir = task
    return train(run_cfg, env_cfg, seed, out_dir).rows


def cmd_train(args, env_cfg, run_cfg, out):
    tasks = [(run_cfg, env_cfg, s, out / f"seed{s}") for s in run_cfg.seeds]
    logs = pool_map(_train_seed, tasks, args.workers)
    _write_logs(out, "train", logs)
    print(f"trained {len(logs)} seed(s); logs in {out}")


def _checkpoint_dir(root, seed):
    for cand in (root / f"seed{seed}" / "checkpoints" / "final", root / "checkpoints" / "final", root):
        if cand.is_dir():
            return cand
    return root


def _eval_seed(task):
    run_cfg, env_cfg, seed, ckpt = task
    return evaluate_checkpoints(run_cfg, env_cfg, ckpt, seed)


def cmd_eval(args, env_cfg, run_cfg, out):
    root = Path(args.checkpoints) if args.checkpoints else out
    tasks = [(run_cfg, env_cfg, s, _checkpoint_dir(root, s)) for s in run_cfg.seeds]
    logs = pool_map(_eval_seed, tasks, args.workers)
    _write_logs(out, "eval", logs)
    for row in (r for lg in logs for r in lg):
        print(f"seed {row.seed} user {row.user}: reward {row.avg_reward:.4f} power {row.avg_power_w:.4f} W "
              f"buffer {row.avg_buffer_kbit:.4f} kbit")


def _write_rows(path, columns, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def cmd_sweep(args, env_cfg, run_cfg, out):
    if args.user > env_cfg.M:
        raise ConfigError(f"--user {args.user} but the config has {env_cfg.M} user(s)")
    for w in args.w:
        if not 0.0 <= w <= 1.0:
            raise ConfigError(f"sweep weight {w} outside [0, 1]")
    table, detail = sweep_tradeoff(run_cfg, env_cfg, args.w, workers=args.workers, user=args.user)
    _write_rows(out / "tradeoff.csv", TRADEOFF_COLUMNS, table)
    _write_rows(out / "tradeoff_detail.csv", ("w", "seed") + TRADEOFF_COLUMNS[1:], detail)
    for r in table:
        print(f"w={r['w']:g}: power {r['avg_power_w']:.4f} W buffer {r['avg_buffer_kbit']:.4f} kbit")


def inspect_net(net, name):
    """Text report of a network's layers, parameter count and Adam step."""
    lines = [f"{name}: input {net.input_dim}, output {net.output_dim}, "
             f"{net.n_params} parameters, adam_t {net.adam_t}"]
    for i, l in enumerate(net.layers):
        extra = f" (incl. {net.aux_dim} action inputs)" if i == net.aux_inject else ""
        lines.append(f"  layer {i + 1}: {l.in_dim}{extra} -> {l.out_dim} {l.activation}")
    lines.append("  hidden sizes: " + "/".join(str(l.out_dim) for l in net.layers[:-1]))
    return "\n".join(lines)


def cmd_inspect(args, env_cfg, run_cfg, out):
    if not args.paths and not args.fresh:
        raise UsageError("inspect needs a checkpoint PATH or --fresh KIND")
    reports = []
    if args.fresh:
        params = dict(run_cfg.params_for(0)) if run_cfg.agents[0] == args.fresh else {}
        agent = make_agent(args.fresh, env_cfg, 0, random_state=run_cfg.seeds[0], **params)
        if args.fresh == "ddpg":
            reports.append(inspect_net(agent.actor_.learned, "actor (fresh)"))
            reports.append(inspect_net(agent.critic_.learned, "critic (fresh)"))
        else:
            reports.append(inspect_net(agent.qnet_.learned, "q-network (fresh)"))
    for p in map(Path, args.paths):
        files = sorted(p.rglob("*.json")) if p.is_dir() else [p]
        if not files:
            raise CheckpointError(f"no checkpoint files under {p}")
        for f in files:
            reports.append(inspect_net(load_checkpoint(f), str(f)))
    print("\n".join(reports))


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "inspect": cmd_inspect}


def main(argv=None):
    started = datetime.now(timezone.utc).isoformat()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        env_cfg, run_cfg, _ = _load(args)
        out = Path(args.out)
        writes = args.verb != "inspect"
        if writes:
            out.mkdir(parents=True, exist_ok=True)
            dump_config(env_cfg, run_cfg, out / "config.toml")
        COMMANDS[args.verb](args, env_cfg, run_cfg, out)
        if writes:
            _write_meta(out, args, started)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report anything else as a runtime failure
        log.debug("traceback", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
