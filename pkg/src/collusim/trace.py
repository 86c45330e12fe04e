"""Line-oriented episode traces.

Traces capture the physical trajectory of one rollout: green schedule,
vehicle outcomes, per-window team rewards, colluder wait snapshots at every
decision boundary, and which colluders were acting in each window. A replay
recomputes the rewards from the snapshots and the metrics from the vehicle
rows, failing loudly if the recorded rewards disagree.

The policy label is deliberately not part of the trace, so trajectory
identity between arms is a plain byte comparison.
"""

from __future__ import annotations

from .collusion import compute_reward
from .errors import ValidationError
from .metrics import EpisodeMetrics, EpisodeRecord, VehicleOutcome, episode_metrics

TRACE_HEADER = "COLLUSIM-TRACE v1"


def format_trace(record: EpisodeRecord) -> str:
    lines = [TRACE_HEADER]
    lines.append(f"meta scenario_sha {record.scenario_sha}")
    lines.append(f"meta seed {record.seed}")
    lines.append(f"meta episode_len {record.episode_len}")
    lines.append(f"meta tau {record.tau}")
    lines.append(f"meta seconds_per_step {record.seconds_per_step!r}")
    for v in record.vehicles:
        done = "-" if v.done is None else str(v.done)
        lines.append(
            f"veh {v.id} {int(v.colluding)} {v.depart} {done} {v.wait} {int(v.entered)}"
        )
    for w, green in enumerate(record.greens):
        pairs = " ".join(f"{iid}={p}" for iid, p in green.items())
        lines.append(f"green {w} {pairs}")
    for b, snap in enumerate(record.wait_snaps):
        pairs = " ".join(f"{aid}={wt}" for aid, wt in sorted(snap.items()))
        lines.append(f"snap {b} {pairs}".rstrip())
    for w, (r, running) in enumerate(zip(record.window_rewards, record.running)):
        run = ",".join(str(a) for a in running) if running else "-"
        lines.append(f"window {w} {r!r} run={run}")
    return "\n".join(lines) + "\n"


def write_trace(path: str, record: EpisodeRecord) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trace(record))


def parse_trace(path: str) -> EpisodeRecord:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValidationError(f"{path}: bad trace header")
    meta: dict[str, str] = {}
    vehicles: list[VehicleOutcome] = []
    greens: list[dict[str, int]] = []
    snaps: list[dict[int, int]] = []
    rewards: list[float] = []
    running: list[list[int]] = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        kind, rest = ln.split(" ", 1) if " " in ln else (ln, "")
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = value
        elif kind == "veh":
            vid, col, depart, done, wait, entered = rest.split()
            vehicles.append(
                VehicleOutcome(
                    int(vid), col == "1", int(depart),
                    None if done == "-" else int(done), int(wait), entered == "1",
                )
            )
        elif kind == "green":
            parts = rest.split()
            greens.append({p.split("=")[0]: int(p.split("=")[1]) for p in parts[1:]})
        elif kind == "snap":
            parts = rest.split()
            snaps.append({int(p.split("=")[0]): int(p.split("=")[1]) for p in parts[1:]})
        elif kind == "window":
            parts = rest.split()
            rewards.append(float(parts[1]))
            run = parts[2][len("run="):]
            running.append([] if run == "-" else [int(a) for a in run.split(",")])
        else:
            raise ValidationError(f"{path}: unparseable trace line {ln!r}")
    return EpisodeRecord(
        scenario_sha=meta.get("scenario_sha", ""),
        seed=int(meta.get("seed", 0)),
        episode_len=int(meta["episode_len"]),
        tau=int(meta["tau"]),
        seconds_per_step=float(meta.get("seconds_per_step", 1.0)),
        vehicles=vehicles,
        window_rewards=rewards,
        greens=greens,
        wait_snaps=snaps,
        running=running,
    )


def replay_metrics(record: EpisodeRecord) -> EpisodeMetrics:
    """Recompute metrics from the trace, re-deriving every window reward
    from the wait snapshots and cross-checking the recorded value."""
    if len(record.wait_snaps) != len(record.window_rewards) + 1:
        raise ValidationError("trace snapshots do not bracket the reward windows")
    recomputed = []
    for w, running in enumerate(record.running):
        r = compute_reward(record.wait_snaps[w + 1], record.wait_snaps[w], running)
        if r != record.window_rewards[w]:
            raise ValidationError(
                f"trace reward mismatch in window {w}: recorded "
                f"{record.window_rewards[w]!r}, recomputed {r!r}"
            )
        recomputed.append(r)
    replayed = EpisodeRecord(
        scenario_sha=record.scenario_sha,
        seed=record.seed,
        episode_len=record.episode_len,
        tau=record.tau,
        seconds_per_step=record.seconds_per_step,
        vehicles=record.vehicles,
        window_rewards=recomputed,
        greens=record.greens,
        wait_snaps=record.wait_snaps,
        running=record.running,
    )
    return episode_metrics(replayed)
