import math

import numpy as np
import pytest

from mecoffload.env import EnvConfig, UserConfig
from mecoffload.harness import (
    LOG_COLUMNS,
    MetricsRow,
    RunConfig,
    aggregate,
    evaluate,
    evaluate_checkpoints,
    load_agents,
    read_log_csv,
    run_seeds,
    sweep_tradeoff,
    train,
    write_log_csv,
    write_summary,
)

SMALL = {"hidden": (8, 8), "batch_size": 4, "warmup": 4}


def small_run(**kw):
    base = dict(episodes=2, steps_per_episode=10, eval_runs=2, eval_steps=50, agent_params=(SMALL,))
    base.update(kw)
    return RunConfig(**base)


def reward_identity_gap(row, w):
    return abs(row.avg_reward - (-10 * w * row.avg_power_w - (1 - w) * row.avg_buffer_kbit))


class TestTrain:
    def test_smoke_rows_and_checkpoints(self, tmp_path):
        res = train(small_run(), EnvConfig(), seed=0, out_dir=tmp_path)
        assert [(r.episode, r.user) for r in res.rows] == [(1, 1), (2, 1)]
        assert (tmp_path / "checkpoints" / "final" / "user1" / "ddpg_actor.json").is_file()
        assert any(stats for ep in res.losses for stats in ep)

    def test_periodic_checkpoints(self, tmp_path):
        train(small_run(episodes=4, checkpoint_every=2), EnvConfig(), seed=0, out_dir=tmp_path)
        names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
        assert names == ["ep00002", "ep00004", "final"]

    def test_greedy_agents_never_update(self):
        cfg = EnvConfig(users=(UserConfig(), UserConfig(distance=150.0)))
        res = train(small_run(agents=("gd_local", "gd_offload"), agent_params=()), cfg, seed=0)
        assert all(not ep for ep in res.losses)
        assert len(res.rows) == 4
        assert all(math.isfinite(r.avg_reward) for r in res.rows)

    def test_deterministic(self):
        a = train(small_run(), EnvConfig(), seed=5).rows
        b = train(small_run(), EnvConfig(), seed=5).rows
        assert a == b
        c = train(small_run(), EnvConfig(), seed=6).rows
        assert a != c

    def test_reward_identity_on_training_rows(self):
        cfg = EnvConfig(users=(UserConfig(w=0.3), UserConfig(w=0.8, distance=120.0)))
        res = train(small_run(agents=("ddpg", "dqn"), agent_params=(SMALL, SMALL)), cfg, seed=1)
        for r in res.rows:
            assert reward_identity_gap(r, cfg.users[r.user - 1].w) < 1e-9

    def test_agent_count_must_match_users(self):
        with pytest.raises(ValueError, match="one per user"):
            train(small_run(agents=("ddpg", "ddpg")), EnvConfig(), seed=0)


class TestEvaluate:
    def test_greedy_rows_deterministic(self):
        run = small_run(agents=("gd_local",), agent_params=())
        agents = load_agents(run, EnvConfig(), checkpoint_dir="unused")
        a = evaluate(run, EnvConfig(), agents, seed=3)
        b = evaluate(run, EnvConfig(), agents, seed=3)
        assert a == b and a[0].episode == -1

    def test_does_not_mutate_networks(self, tmp_path):
        res = train(small_run(), EnvConfig(), seed=0)
        agent = res.agents[0]
        before = agent.actor_.learned.params.copy(), agent.critic_.learned.params.copy()
        evaluate(small_run(), EnvConfig(), res.agents, seed=0)
        np.testing.assert_array_equal(agent.actor_.learned.params, before[0])
        np.testing.assert_array_equal(agent.critic_.learned.params, before[1])

    def test_checkpoint_reload_matches_in_memory(self, tmp_path):
        res = train(small_run(), EnvConfig(), seed=0, out_dir=tmp_path)
        direct = evaluate(small_run(), EnvConfig(), res.agents, seed=0)
        reloaded = evaluate_checkpoints(small_run(), EnvConfig(), tmp_path / "checkpoints" / "final", seed=0)
        assert direct == reloaded

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="user 1"):
            evaluate_checkpoints(small_run(), EnvConfig(), tmp_path, seed=0)

    def test_reward_identity(self):
        for w in (0.2, 0.5, 0.9):
            cfg = EnvConfig().with_users(w=w)
            run = small_run(agents=("random",), agent_params=())
            rows = evaluate(run, cfg, load_agents(run, cfg, "unused"), seed=0)
            assert reward_identity_gap(rows[0], w) < 1e-9

    def test_delay_column(self):
        run = small_run(agents=("gd_local",), agent_params=())
        row = evaluate(run, EnvConfig(), load_agents(run, EnvConfig(), "unused"), seed=0)[0]
        # 2 Mbit/s over 1 ms slots is 2 kbit per slot
        assert row.avg_delay_slots == pytest.approx(row.avg_buffer_kbit / 2.0)


class TestSeedsAndSweep:
    def test_run_seeds_shapes(self):
        run = small_run(seeds=(0, 1))
        train_logs, eval_logs = run_seeds(run, EnvConfig())
        assert [len(lg) for lg in train_logs] == [2, 2]
        assert [lg[0].seed for lg in eval_logs] == [0, 1]

    def test_worker_pool_matches_serial(self):
        run = small_run(seeds=(0, 1))
        assert run_seeds(run, EnvConfig(), workers=2) == run_seeds(run, EnvConfig(), workers=1)

    def test_sweep_rows_sorted(self):
        run = small_run(agents=("gd_offload",), agent_params=(), seeds=(0, 1))
        table, detail = sweep_tradeoff(run, EnvConfig(), [0.8, 0.3, 0.5])
        assert [r["w"] for r in table] == [0.3, 0.5, 0.8]
        assert len(detail) == 6
        # greedy policies ignore w
        assert len({(r["avg_power_w"], r["avg_buffer_kbit"]) for r in table}) == 1


def make_row(seed, reward, episode=-1, user=1):
    return MetricsRow("r", seed, episode, user, reward, 1.0, 2.0, 1.0)


class TestAggregate:
    def test_mean_of_single_row_logs(self):
        vals = np.random.default_rng(0).standard_normal(10)
        out = aggregate([[make_row(s, float(v))] for s, v in enumerate(vals)])
        (entry,) = out["summary"]
        assert entry["n"] == 10
        assert abs(entry["avg_reward"]["mean"] - math.fsum(vals) / 10) < 1e-12
        assert entry["avg_reward"]["stderr"] == pytest.approx(vals.std(ddof=1) / math.sqrt(10))

    def test_empty_is_an_error(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            aggregate([[], []])

    def test_per_seed_rows_kept(self):
        out = aggregate([[make_row(0, 1.0), make_row(0, 2.0, user=2)], [make_row(1, 3.0)]])
        assert len(out["per_seed"]) == 3
        assert {(e["user"], e["n"]) for e in out["summary"]} == {(1, 2), (2, 1)}

    def test_malformed_rows(self):
        with pytest.raises(ValueError):
            aggregate([[{"run_id": "r"}]])
        with pytest.raises(ValueError):
            aggregate([[dict(make_row(0, 1.0).as_dict(), avg_reward="nan")]])
        with pytest.raises(ValueError):
            aggregate([["not a row"]])


def test_log_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rows = [MetricsRow("x", s, e, 1, *rng.standard_normal(4).tolist()) for s in range(2) for e in range(3)]
    path = write_log_csv(rows, tmp_path / "log.csv")
    assert path.read_text().splitlines()[0] == ",".join(LOG_COLUMNS)
    assert read_log_csv(path) == rows


def test_read_log_rejects_wrong_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("seed,run_id\n0,x\n")
    with pytest.raises(ValueError, match="header"):
        read_log_csv(p)


def test_summary_files(tmp_path):
    out = aggregate([[make_row(0, 1.0)], [make_row(1, 3.0)]])
    write_summary(out, tmp_path / "s.csv", tmp_path / "s.json")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("run_id,episode,user,n,avg_reward_mean")
    assert lines[1].split(",")[4] == "2.0"
