"""Experiment orchestration: seeded rollouts, arms, ablations, sweeps, CSVs.

Every run is a pure function of (scenario, frozen controller, arm, seed);
aggregation is mean +- population standard deviation across seeds. CSV and
manifest bytes are deterministic for equal inputs, which is what makes
manifest replay a byte-level check.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .baselines import baseline_reporter, parse_arm
from .collusion import (
    CollusionModel,
    ObsLayout,
    compute_reward,
    load_collusion,
    model_reporter,
    train_collusion,
)
from .errors import CheckpointError, ConfigError, ValidationError
from .metrics import EpisodeMetrics, EpisodeRecord, VehicleOutcome, episode_metrics
from .network import RoadNetwork, build_network
from .scenario import ScenarioConfig, materialize_vehicles
from .simulator import SimState, advance_window

METRIC_FIELDS = ("reward", "col_travel_avg", "col_wait_avg", "oth_travel_avg", "oth_wait_avg")
ABLATION_ARMS = ("private", "no-st", "no-comm", "full")


def run_episode(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    reporter,
    seed: int,
    vehicles=None,
    collusion_size: int | None = None,
) -> tuple[EpisodeMetrics, EpisodeRecord]:
    """One deterministic evaluation rollout at tau cadence."""
    if vehicles is None:
        vehicles = materialize_vehicles(network, cfg, seed, collusion_size)
    state = SimState(network, vehicles, seed)
    sim_cfg = cfg.sim_config()
    record = EpisodeRecord(
        scenario_sha=cfg.sha256(),
        seed=seed,
        episode_len=cfg.episode_len,
        tau=cfg.tau,
        seconds_per_step=cfg.seconds_per_step,
    )
    record.wait_snaps.append(state.colluder_waits())
    for w in range(cfg.n_windows):
        running = state.running_colluders()
        reports = reporter(state, w) if reporter is not None else []
        green = controller(state, reports, w)
        prev = state.colluder_waits()
        advance_window(state, green, cfg.tau, sim_cfg)
        now = state.colluder_waits()
        record.window_rewards.append(compute_reward(now, prev, running))
        record.greens.append(dict(green))
        record.wait_snaps.append(now)
        record.running.append(list(running))
    for v in state.vehicles.values():
        record.vehicles.append(
            VehicleOutcome(v.id, v.is_colluding, v.depart_step, v.done_step, v.wait_accum, v.departed)
        )
    return episode_metrics(record), record


def reporter_for_arm(arm_spec: str, cfg: ScenarioConfig, seed: int, layout: ObsLayout):
    """(label, reporter) for a policy selector; learned arms resolve
    <dir>/seed_<seed> or a bare model directory."""
    label, payload = parse_arm(arm_spec, cfg.a_max)
    if payload is None:
        return label, None
    if label == "learned":
        base = payload
        per_seed = os.path.join(base, f"seed_{seed}")
        model_dir = per_seed if os.path.isdir(per_seed) else base
        model = load_collusion(model_dir, layout)
        return label, model_reporter(model)
    return label, baseline_reporter(payload, seed)


@dataclass
class ArmRow:
    arm: str
    seed: int
    metrics: EpisodeMetrics


@dataclass
class AggregateResult:
    arm: str
    n_seeds: int
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    failed_seeds: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.n_seeds >= 2 and not self.failed_seeds


def aggregate(arm: str, rows: list[ArmRow], failed: list[int] | None = None) -> AggregateResult:
    """Mean and population (ddof=0) standard deviation across seeds."""
    agg = AggregateResult(arm, len(rows), failed_seeds=list(failed or []))
    for f in METRIC_FIELDS:
        xs = np.array([getattr(r.metrics, f) for r in rows], dtype=np.float64)
        agg.mean[f] = float(xs.mean()) if len(xs) else float("nan")
        agg.std[f] = float(xs.std(ddof=0)) if len(xs) else float("nan")
    return agg


def evaluate_arm(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    arm_spec: str,
    seeds: list[int],
    trace_dir: str | None = None,
) -> tuple[list[ArmRow], AggregateResult]:
    """Deterministic evaluation of one arm across seeds with per-seed
    failure isolation."""
    if len(seeds) < 2:
        raise ConfigError("evaluate_arm needs at least 2 seeds")
    layout = ObsLayout.from_network(network, cfg)
    rows: list[ArmRow] = []
    failed: list[int] = []
    label = arm_spec
    for seed in seeds:
        try:
            label, reporter = reporter_for_arm(arm_spec, cfg, seed, layout)
            metrics, record = run_episode(network, cfg, controller, reporter, seed)
        except (ConfigError, ValidationError, CheckpointError):
            failed.append(seed)
            continue
        rows.append(ArmRow(label, seed, metrics))
        if trace_dir:
            from .trace import write_trace

            os.makedirs(trace_dir, exist_ok=True)
            write_trace(os.path.join(trace_dir, f"{_slug(label)}_seed{seed}.trace"), record)
    return rows, aggregate(label, rows, failed)


def _slug(label: str) -> str:
    return label.replace(":", "-").replace("/", "_")


# ---------------------------------------------------------------------------
# training-backed experiments


def train_and_eval_attack(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    seed: int,
    arch: str = "full",
    collusion_size: int | None = None,
    a_max: int | None = None,
    episodes: int | None = None,
    ckpt_dir: str | None = None,
) -> tuple[EpisodeMetrics, list[tuple[int, float]], CollusionModel]:
    """Train one collusion model, then evaluate it deterministically."""
    model, curve = train_collusion(
        network, cfg, controller, seed, arch=arch, collusion_size=collusion_size,
        a_max=a_max, episodes=episodes, ckpt_dir=ckpt_dir,
    )
    vehicles = materialize_vehicles(network, cfg, seed, collusion_size)
    metrics, _ = run_episode(
        network, cfg, controller, model_reporter(model), seed, vehicles=vehicles
    )
    return metrics, curve, model


def run_ablation(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    seeds: list[int],
    episodes: int | None = None,
    arms: tuple[str, ...] = ABLATION_ARMS,
) -> dict[str, tuple[list[ArmRow], AggregateResult, dict[int, list]]]:
    """Train all ablation arms with identical budgets and seed lists."""
    out: dict[str, tuple[list[ArmRow], AggregateResult, dict[int, list]]] = {}
    for arch in arms:
        rows: list[ArmRow] = []
        curves: dict[int, list] = {}
        failed: list[int] = []
        for seed in seeds:
            try:
                metrics, curve, _ = train_and_eval_attack(
                    network, cfg, controller, seed, arch=arch, episodes=episodes
                )
            except (ConfigError, ValidationError):
                failed.append(seed)
                continue
            rows.append(ArmRow(arch, seed, metrics))
            curves[seed] = curve
        out[arch] = (rows, aggregate(arch, rows, failed), curves)
    return out


@dataclass
class SizeSweepRow:
    size: int
    learned: EpisodeMetrics
    all_one: EpisodeMetrics

    @property
    def avg_time_saved(self) -> float:
        return self.all_one.col_wait_avg - self.learned.col_wait_avg

    @property
    def total_time_saved(self) -> float:
        return (
            self.all_one.col_wait_avg * self.all_one.col_count
            - self.learned.col_wait_avg * self.learned.col_count
        )


def sweep_collusion_size(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    sizes: list[int],
    seed: int,
    episodes: int | None = None,
) -> list[SizeSweepRow]:
    """Nested-subset size sweep: one colluder permutation, prefix sets."""
    if sorted(sizes) != list(sizes):
        raise ConfigError("sizes must be ascending")
    layout = ObsLayout.from_network(network, cfg)
    rows = []
    for size in sizes:
        if size > cfg.total_vehicles:
            raise ConfigError(f"collusion size {size} exceeds total vehicles {cfg.total_vehicles}")
        learned, _, _ = train_and_eval_attack(
            network, cfg, controller, seed, collusion_size=size, episodes=episodes
        )
        _, reporter = reporter_for_arm("all:1", cfg, seed, layout)
        all_one, _ = run_episode(
            network, cfg, controller, reporter, seed,
            vehicles=materialize_vehicles(network, cfg, seed, size),
        )
        rows.append(SizeSweepRow(size, learned, all_one))
    return rows


@dataclass
class ActionSweepRow:
    cap: int
    learned: EpisodeMetrics
    greedy: EpisodeMetrics


def sweep_action_space(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    caps: list[int],
    seed: int,
    episodes: int | None = None,
) -> list[ActionSweepRow]:
    """Learned vs always-report-the-cap across action-space caps."""
    if any(c < 1 for c in caps):
        raise ConfigError("caps must be >= 1")
    layout = ObsLayout.from_network(network, cfg)
    rows = []
    for cap in caps:
        learned, _, _ = train_and_eval_attack(
            network, cfg, controller, seed, a_max=cap, episodes=episodes
        )
        _, reporter = reporter_for_arm(f"all:{min(cap, cfg.a_max)}", cfg, seed, layout)
        greedy, _ = run_episode(network, cfg, controller, reporter, seed)
        rows.append(ActionSweepRow(cap, learned, greedy))
    return rows


# ---------------------------------------------------------------------------
# CSV emission


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_csv_lines(
    rows: list[ArmRow], aggs: list[AggregateResult], seconds_per_step: float
) -> list[str]:
    header = (
        ["arm", "seed", "kind"]
        + list(METRIC_FIELDS)
        + [f + "_s" for f in METRIC_FIELDS if f != "reward"]
        + ["col_count", "oth_count", "col_censored", "oth_censored", "never_departed"]
    )
    lines = [",".join(header)]
    for r in rows:
        m = r.metrics
        vals = [r.arm, str(r.seed), "run"]
        vals += [_fmt(getattr(m, f)) for f in METRIC_FIELDS]
        vals += [
            _fmt(getattr(m, f) * seconds_per_step) for f in METRIC_FIELDS if f != "reward"
        ]
        vals += [str(m.col_count), str(m.oth_count), str(m.col_censored),
                 str(m.oth_censored), str(m.never_departed)]
        lines.append(",".join(vals))
    for agg in aggs:
        for kind, stats in (("mean", agg.mean), ("std", agg.std)):
            vals = [agg.arm, "agg", kind]
            vals += [_fmt(stats[f]) for f in METRIC_FIELDS]
            vals += [
                _fmt(stats[f] * seconds_per_step) for f in METRIC_FIELDS if f != "reward"
            ]
            vals += ["", "", "", "", ""]
            lines.append(",".join(vals))
    return lines


def write_metrics_csv(path, rows, aggs, seconds_per_step) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(metrics_csv_lines(rows, aggs, seconds_per_step)) + "\n")


def parse_metrics_csv(path: str) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def write_curve_csv(path: str, curve: list[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("episode,reward\n")
        for ep, r in curve:
            fh.write(f"{ep},{r!r}\n")


def write_size_sweep_csv(path: str, rows: list[SizeSweepRow]) -> None:
    header = ["size", "arm"] + list(METRIC_FIELDS) + ["col_count", "avg_time_saved", "total_time_saved"]
    out = [",".join(header)]
    for row in rows:
        for arm, m in (("learned", row.learned), ("all:1", row.all_one)):
            vals = [str(row.size), arm]
            vals += [_fmt(getattr(m, f)) for f in METRIC_FIELDS]
            vals += [str(m.col_count), _fmt(row.avg_time_saved), _fmt(row.total_time_saved)]
            out.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def write_action_sweep_csv(path: str, rows: list[ActionSweepRow]) -> None:
    header = ["cap", "arm"] + list(METRIC_FIELDS)
    out = [",".join(header)]
    for row in rows:
        for arm, m in (("learned", row.learned), ("greedy", row.greedy)):
            vals = [str(row.cap), arm] + [_fmt(getattr(m, f)) for f in METRIC_FIELDS]
            out.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# run manifests

MANIFEST_NAME = "run_manifest.json"


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    outdir: str,
    command: str,
    args: dict,
    cfg: ScenarioConfig,
    outputs: list[str],
    inputs: dict[str, str] | None = None,
) -> str:
    from .scenario import scenario_to_yaml

    manifest = {
        "command": command,
        "args": args,
        "package_version": __version__,
        "scenario_sha256": cfg.sha256(),
        "scenario_yaml": scenario_to_yaml(cfg),
        "inputs": inputs or {},
        "outputs": {
            os.path.relpath(p, outdir): file_sha256(p) for p in sorted(outputs)
        },
    }
    path = os.path.join(outdir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# bounded worker pool (jobs > 1 fans tasks out to processes)


def pool_map(fn, tasks: list[tuple], jobs: int = 1) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def attack_training_job(
    scenario_yaml: str, atcs_dir: str, arch: str, seed: int,
    collusion_size: int | None, a_max: int | None, episodes: int | None,
    ckpt_dir: str | None,
):
    """Self-contained (picklable) train+eval job for worker processes."""
    from .atcs import load_atcs, make_controller
    from .scenario import scenario_from_dict
    import yaml as _yaml

    cfg = scenario_from_dict(_yaml.safe_load(scenario_yaml))
    network = build_network(cfg.network)
    controller = make_controller(load_atcs(atcs_dir, network))
    metrics, curve, _ = train_and_eval_attack(
        network, cfg, controller, seed, arch=arch, collusion_size=collusion_size,
        a_max=a_max, episodes=episodes, ckpt_dir=ckpt_dir,
    )
    return arch, seed, metrics, curve
