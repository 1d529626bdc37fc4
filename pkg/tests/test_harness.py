import json
import subprocess
import sys

import pytest
from sklearn.base import clone

from edgesched.core import Task
from edgesched.env import EdgeClusterEnv, EnvConfig
from edgesched.estimators import EATScheduler, GreedyScheduler, RandomScheduler
from edgesched.harness import cli
from edgesched.harness.config import ConfigError, ExperimentConfig, load_config, parse_text
from edgesched.harness.metrics import (
    EpisodeTally,
    pool,
    read_metrics_csv,
    read_trace,
    tallies_from_trace,
)
from edgesched.harness.replay import ReplayError, bundled_fixtures, parse_fixture, run_replay, run_scenario
from edgesched.harness.runner import (
    evaluate,
    measure_decision_latency,
    run_eval,
    run_replay_to,
    run_train,
)

QUICK = ["eval_episodes=3", "tasks_per_episode=6"]


# -- config ---------------------------------------------------------------------------


def test_defaults_follow_the_cluster_grid():
    assert ExperimentConfig().arrival_rate == 0.05
    assert ExperimentConfig(n_servers=8).arrival_rate == 0.1
    assert ExperimentConfig(n_servers=12).arrival_rate == 0.15
    assert ExperimentConfig(n_servers=12, rate=0.3).arrival_rate == 0.3
    with pytest.raises(ConfigError):
        ExperimentConfig(n_servers=6)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\nagent = greedy\nn_servers = 8\nrate = 0.2\n\ndeterministic = false\n")
    cfg = load_config(path, ["rate=0.25", "eval_episodes=4"])
    assert (cfg.agent, cfg.n_servers, cfg.rate, cfg.eval_episodes, cfg.deterministic) == \
        ("greedy", 8, 0.25, 4, False)
    assert cfg.eval_seeds == [10_000, 10_001, 10_002, 10_003]


@pytest.mark.parametrize("bad", [["nope=1"], ["n_servers=four"], ["agent=ppo"], ["rate"], ["s_min=60"]])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        load_config(None, bad).env_config()


def test_snapshot_round_trips():
    cfg = ExperimentConfig(agent="random", rate=0.07, seed=3, checkpoint="x/y")
    assert ExperimentConfig(**parse_text(cfg.to_text())) == cfg
    assert ExperimentConfig(**parse_text(ExperimentConfig().to_text())) == ExperimentConfig()


# -- metrics -----------------------------------------------------------------------------


def test_pool_weights_tasks_not_episodes():
    a = EpisodeTally(0, [2.0, 2.0, 2.0], [10.0, 10.0, 10.0], 3, 1.0)
    b = EpisodeTally(1, [3.0], [50.0, 70.0], 0, 2.0)
    r = pool([a, b])
    assert r.mean_quality == pytest.approx(2.25)
    assert r.mean_latency == pytest.approx(30.0)
    assert r.reload_rate == pytest.approx(0.75)
    assert r.efficiency == pytest.approx(2.25 / 30.0)
    assert (r.arrived, r.scheduled, r.mean_reward) == (5, 4, 1.5)


def test_pool_of_nothing_is_undefined():
    r = pool([])
    assert r.mean_latency is None and r.reload_rate is None and r.efficiency is None


@pytest.mark.parametrize("agent", [GreedyScheduler(), RandomScheduler(random_state=2)])
def test_report_matches_trace_recomputation(agent):
    cfg = EnvConfig()
    tallies, events = evaluate(agent.fit(cfg), cfg, [10_000, 10_001, 10_002])
    direct, rebuilt = pool(tallies), pool(tallies_from_trace(events))
    for key in ("mean_quality", "mean_latency", "reload_rate", "arrived", "scheduled"):
        assert getattr(rebuilt, key) == pytest.approx(getattr(direct, key), rel=1e-12)
    assert rebuilt.mean_reward == pytest.approx(direct.mean_reward, rel=1e-9)
    assert 0 <= direct.reload_rate <= 1


def test_repeated_model_stream_reuses_servers():
    tasks = [Task(i, 0, 2, 100.0 * i) for i in range(6)]
    env = EdgeClusterEnv(EnvConfig())
    env.reset(tasks=tasks)
    agent = GreedyScheduler().fit(EnvConfig())
    while not env.done:
        env.step(agent.decide(env))
    later = [r for r in env.records.values() if r.task_id > 0]
    assert later and sum(not r.reuse for r in later) / len(later) < 1


def test_greedy_cold_start_quality_is_saturated():
    env = EdgeClusterEnv(EnvConfig())
    env.reset(tasks=[Task(0, 0, 4, 0.0)])
    agent = GreedyScheduler().fit(EnvConfig())
    while not env.done:
        env.step(agent.decide(env))
    assert env.records[0].quality == pytest.approx(2.70)


# -- replay ------------------------------------------------------------------------------


def test_bundled_fixtures():
    assert bundled_fixtures() == ["eat", "traditional"]
    res = run_replay("traditional")
    assert [round(x, 1) for x in res.latencies] == [33.8, 29.6, 60.4, 84.2]
    assert res.mean_latency == pytest.approx(52.0, abs=0.2)


def test_empty_fixture_has_no_mean():
    res = run_scenario(parse_fixture("servers 4\n"))
    assert res.rows == [] and res.mean_latency is None


def test_busy_server_error_names_the_line():
    text = "servers 2\narrival 0 1\narrival 0 1\ndecide 0 1 20 0\ndecide 0 2 20 0\n"
    with pytest.raises(ReplayError) as info:
        run_replay_text(text)
    assert info.value.lineno == 5 and "line 5" in str(info.value)


def run_replay_text(text):
    return run_scenario(parse_fixture(text))


@pytest.mark.parametrize("text,line", [
    ("servers 2\nbogus 1\n", 2),
    ("servers 2\narrival 0\n", 2),
    ("servers 2\narrival 0 1\ndecide 0 1 20 0 fast=1\n", 3),
    ("servers 2\narrival 0 1\ndecide 5 1 20 0\ndecide 1 1 20 0\n", 4),
    ("servers 2\narrival 0 1\ndecide 0 7 20 0\n", 3),
])
def test_malformed_fixtures(text, line):
    with pytest.raises(ReplayError) as info:
        run_replay_text(text)
    assert info.value.lineno == line


def test_missing_fixture():
    with pytest.raises(FileNotFoundError):
        run_replay("no-such-fixture")


def test_replay_output_files(tmp_path):
    res = run_replay_to("eat", tmp_path)
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("task,arrival")
    assert rows[-1].startswith("mean,")
    assert len(rows) == 2 + len(res.rows)
    assert read_trace(tmp_path / "trace.jsonl")


# -- runs -----------------------------------------------------------------------------------


def test_eval_is_reproducible(tmp_path):
    cfg = load_config(None, ["agent=random"] + QUICK)
    r1 = run_eval(cfg, tmp_path / "a")
    r2 = run_eval(cfg, tmp_path / "b")
    assert r1 == r2
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()
    rows = read_metrics_csv(tmp_path / "a" / "metrics.csv")
    assert [r["scope"] for r in rows] == ["episode"] * 3 + ["all"]
    # the snapshot alone reproduces the run
    again = run_eval(load_config(tmp_path / "a" / "config"), tmp_path / "c")
    assert again == r1


def test_zero_episode_train_then_eval(tmp_path):
    cfg = load_config(None, ["agent=eat-da", "episodes=0", "hidden=16"] + QUICK)
    est = run_train(cfg, tmp_path / "t")
    assert est.history_ == []
    ckpt = tmp_path / "t" / "checkpoint"
    loaded = EATScheduler.load(ckpt, cfg.env_config())
    report = run_eval(cfg.replace(checkpoint=str(ckpt)), tmp_path / "e")
    direct = run_eval(cfg, tmp_path / "e2", agent=est)
    assert report == direct
    assert loaded.get_params()["variant"] == "eat-da"


def test_train_curves_written(tmp_path):
    cfg = load_config(None, ["agent=eat-da", "episodes=3", "hidden=16", "batch_size=8"] + QUICK)
    run_train(cfg, tmp_path)
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0].startswith("episode,steps,reward") and len(lines) == 4
    assert "wall_time" in (tmp_path / "timing.csv").read_text()


def test_train_rejects_non_learned_agents(tmp_path):
    with pytest.raises(ValueError):
        run_train(ExperimentConfig(agent="greedy"), tmp_path)


def test_random_decisions_are_cheap():
    cfg = EnvConfig()
    rnd = measure_decision_latency(RandomScheduler().fit(cfg), cfg, n_decisions=1000, n_states=20)
    greedy = measure_decision_latency(GreedyScheduler().fit(cfg), cfg, n_decisions=20, n_states=20)
    assert rnd < greedy


# -- estimator API ---------------------------------------------------------------------------


def test_estimators_follow_sklearn_conventions():
    est = EATScheduler(variant="eat-a", episodes=2, hidden=8)
    params = est.get_params()
    assert params["variant"] == "eat-a" and params["hidden"] == 8
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "actor_")
    est.set_params(hidden=12)
    assert est.hidden == 12
    assert clone(RandomScheduler(random_state=4)).random_state == 4


def test_predict_shapes_and_validation():
    cfg = EnvConfig()
    est = EATScheduler.untrained(cfg, variant="eat-da", hidden=8)
    env = EdgeClusterEnv(cfg)
    env.reset(seed=1)
    actions = est.predict([env.observe_normalized(), env.observe_normalized()])
    assert actions.shape == (2, cfg.action_dim)
    with pytest.raises(ValueError):
        est.predict(env.observe_normalized()[:, :3])


# -- CLI ------------------------------------------------------------------------------------------


def test_cli_eval_prints_summary(tmp_path, capsys):
    code = cli.main(["eval", "--set", "agent=greedy", *sum((["--set", q] for q in QUICK), []),
                     "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["verb"] == "eval" and summary["agent"] == "greedy"
    assert (tmp_path / "metrics.csv").exists() and (tmp_path / "config").exists()


def test_cli_replay(tmp_path, capsys):
    assert cli.main(["replay", "traditional", "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["mean_latency"] == pytest.approx(52.0, abs=0.2)


@pytest.mark.parametrize("argv", [
    ["eval", "--set", "agent=ppo"],
    ["eval", "--set", "bogus=1"],
    ["eval", "--config", "/nonexistent/file"],
    ["replay", "/nonexistent/fixture"],
    ["optimize", "--set", "agent=greedy"],
])
def test_cli_errors_are_machine_readable(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(err)
    assert payload["error"] and payload["type"]


def test_cli_entry_point_runs_as_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edgesched", "replay", "eat", "--out", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout.strip().splitlines()[-1])["verb"] == "replay"
