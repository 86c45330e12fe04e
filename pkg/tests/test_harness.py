"""Harness: arms, aggregation, seed isolation, CSV and manifest plumbing."""

import os

import pytest

from collusim.errors import ConfigError
from collusim.harness import (

    ArmRow,
    aggregate,
    evaluate_arm,
    file_sha256,
    load_manifest,
    metrics_csv_lines,
    parse_metrics_csv,
    pool_map,
    run_episode,
    write_manifest,
    write_metrics_csv,
)
from collusim.metrics import EpisodeMetrics
from collusim.network import NetworkSpec, build_network
from collusim.scenario import ScenarioConfig
from collusim.trace import format_trace
from conftest import greedy_queue_controller


def stub_metrics(reward=0.0, **kw):
    base = dict(
        reward=reward, col_travel_avg=10.0, col_wait_avg=2.0,
        oth_travel_avg=12.0, oth_wait_avg=3.0, col_count=4, oth_count=10,
    )
    base.update(kw)
    return EpisodeMetrics(**base)


class TestAggregate:
    def test_constant_metrics_zero_std(self):
        rows = [ArmRow("all:1", s, stub_metrics(-5.0)) for s in (0, 1, 2)]
        agg = aggregate("all:1", rows)
        assert agg.mean["reward"] == -5.0
        assert agg.std["reward"] == 0.0

    def test_population_convention(self):
        rows = [ArmRow("x", 0, stub_metrics(-10.0)), ArmRow("x", 1, stub_metrics(-20.0))]
        agg = aggregate("x", rows)
        assert agg.mean["reward"] == -15.0
        assert agg.std["reward"] == 5.0  # population (ddof=0), not sample

    def test_failed_seeds_flag(self):
        rows = [ArmRow("x", 0, stub_metrics())]
        agg = aggregate("x", rows, failed=[1])
        assert not agg.ok


class TestRunEpisode:
    def test_deterministic(self, small_scenario):
        net, cfg = small_scenario
        ctl = greedy_queue_controller(net)
        m1, r1 = run_episode(net, cfg, ctl, None, 4)
        m2, r2 = run_episode(net, cfg, ctl, None, 4)
        assert m1 == m2
        assert format_trace(r1) == format_trace(r2)

    def test_zero_demand_empty_flagged(self):
        cfg = ScenarioConfig(
            network=NetworkSpec(kind="grid", rows=2, cols=2),
            total_vehicles=0,
            collusion_size=0,
            episode_len=60,
        )
        cfg.validate()
        net = build_network(cfg.network)
        metrics, _ = run_episode(net, cfg, greedy_queue_controller(net), None, 0)
        assert metrics.is_empty
        assert metrics.reward == 0.0

    def test_collusion_size_override(self, small_scenario):
        net, cfg = small_scenario
        _, rec = run_episode(net, cfg, greedy_queue_controller(net), None, 0, collusion_size=0)
        assert all(not v.colluding for v in rec.vehicles)


class TestEvaluateArm:
    def test_seed_isolation(self, small_scenario):
        net, cfg = small_scenario
        ctl = greedy_queue_controller(net)
        rows_a, _ = evaluate_arm(net, cfg, ctl, "all:10", [0, 1])
        rows_b, _ = evaluate_arm(net, cfg, ctl, "all:10", [0, 1, 10])
        assert rows_a[0].metrics == rows_b[0].metrics
        assert rows_a[1].metrics == rows_b[1].metrics

    def test_needs_two_seeds(self, small_scenario):
        net, cfg = small_scenario
        with pytest.raises(ConfigError):
            evaluate_arm(net, cfg, greedy_queue_controller(net), "all:1", [0])

    def test_failure_isolation(self, small_scenario):
        net, cfg = small_scenario
        ctl = greedy_queue_controller(net)
        # learned arm with a missing checkpoint dir fails per-seed, not globally
        rows, agg = evaluate_arm(net, cfg, ctl, "learned:/nonexistent", [0, 1])
        assert rows == []
        assert agg.failed_seeds == [0, 1]
        assert not agg.ok


class TestCsv:
    def test_export_deterministic_and_round_trip(self, tmp_path, small_scenario):
        net, cfg = small_scenario
        ctl = greedy_queue_controller(net)
        rows, agg = evaluate_arm(net, cfg, ctl, "all:10", [0, 1])
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_metrics_csv(str(p1), rows, [agg], cfg.seconds_per_step)
        write_metrics_csv(str(p2), rows, [agg], cfg.seconds_per_step)
        assert p1.read_bytes() == p2.read_bytes()
        parsed = parse_metrics_csv(str(p1))
        run_rows = [r for r in parsed if r["kind"] == "run"]
        assert len(run_rows) == 2
        for parsed_row, row in zip(run_rows, rows):
            assert float(parsed_row["reward"]) == row.metrics.reward
            assert float(parsed_row["col_wait_avg"]) == row.metrics.col_wait_avg
        agg_rows = [r for r in parsed if r["kind"] == "mean"]
        assert float(agg_rows[0]["reward"]) == agg.mean["reward"]

    def test_header_stable(self):
        lines = metrics_csv_lines([], [], 1.0)
        assert lines[0].startswith("arm,seed,kind,reward,col_travel_avg")

    def test_seconds_columns_scale(self, small_scenario, tmp_path):
        net, cfg = small_scenario
        cfg.seconds_per_step = 2.0
        ctl = greedy_queue_controller(net)
        rows, agg = evaluate_arm(net, cfg, ctl, "all:1", [0, 1])
        p = tmp_path / "s.csv"
        write_metrics_csv(str(p), rows, [agg], cfg.seconds_per_step)
        parsed = [r for r in parse_metrics_csv(str(p)) if r["kind"] == "run"][0]
        assert float(parsed["col_wait_avg_s"]) == 2.0 * float(parsed["col_wait_avg"])


class TestManifest:
    def test_write_load_and_hashes(self, tmp_path, small_scenario):
        net, cfg = small_scenario
        out = tmp_path / "run"
        os.makedirs(out)
        csv_path = out / "metrics.csv"
        csv_path.write_text("arm,seed\nx,0\n")
        path = write_manifest(
            str(out), "eval", {"seeds": [0, 1], "policy": "all:1"}, cfg, [str(csv_path)]
        )
        m = load_manifest(path)
        assert m["command"] == "eval"
        assert m["scenario_sha256"] == cfg.sha256()
        assert m["outputs"]["metrics.csv"] == file_sha256(str(csv_path))
        assert "scenario_yaml" in m


def _square(x):
    return x * x


class TestPool:
    def test_pool_map_inline(self):
        assert pool_map(_square, [(2,), (3,)], jobs=1) == [4, 9]

    def test_pool_map_processes(self):
        assert pool_map(_square, [(2,), (3,), (4,)], jobs=2) == [4, 9, 16]
