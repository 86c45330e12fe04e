"""Episode records and the five evaluation metrics.

An `EpisodeRecord` is the full observable outcome of one rollout: final
vehicle outcomes, the green schedule, the per-window team rewards and the
colluder wait snapshots at every decision boundary (enough to recompute the
rewards independently). Metrics are in steps; CSV emission also derives
seconds via the scenario's seconds-per-step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class VehicleOutcome:
    id: int
    colluding: bool
    depart: int
    done: int | None
    wait: int
    entered: bool


@dataclass
class EpisodeRecord:
    scenario_sha: str
    seed: int
    episode_len: int
    tau: int
    seconds_per_step: float
    vehicles: list[VehicleOutcome] = field(default_factory=list)
    window_rewards: list[float] = field(default_factory=list)
    greens: list[dict[str, int]] = field(default_factory=list)
    wait_snaps: list[dict[int, int]] = field(default_factory=list)
    running: list[list[int]] = field(default_factory=list)


@dataclass
class EpisodeMetrics:
    """Cumulative team reward plus travel/waiting averages per group (steps)."""

    reward: float
    col_travel_avg: float
    col_wait_avg: float
    oth_travel_avg: float
    oth_wait_avg: float
    col_count: int = 0
    oth_count: int = 0
    col_censored: int = 0
    oth_censored: int = 0
    never_departed: int = 0

    @property
    def is_empty(self) -> bool:
        return self.col_count + self.oth_count == 0

    def as_row(self) -> dict[str, float]:
        return {
            "reward": self.reward,
            "col_travel_avg": self.col_travel_avg,
            "col_wait_avg": self.col_wait_avg,
            "oth_travel_avg": self.oth_travel_avg,
            "oth_wait_avg": self.oth_wait_avg,
        }


def episode_metrics(record: EpisodeRecord) -> EpisodeMetrics:
    """Reduce a record to the five metrics.

    Travel time is done - depart; vehicles unfinished at episode end are
    included with the censored value episode_len - depart and counted.
    Vehicles that never entered the network are excluded and counted.
    """
    groups = {True: {"travel": [], "wait": [], "censored": 0}, False: {"travel": [], "wait": [], "censored": 0}}
    never = 0
    for v in record.vehicles:
        if not v.entered:
            never += 1
            continue
        g = groups[v.colluding]
        if v.done is None:
            g["censored"] += 1
            g["travel"].append(record.episode_len - v.depart)
        else:
            g["travel"].append(v.done - v.depart)
        g["wait"].append(v.wait)

    def avg(xs):
        return float(np.mean(xs)) if xs else 0.0

    col, oth = groups[True], groups[False]
    return EpisodeMetrics(
        reward=float(sum(record.window_rewards)),
        col_travel_avg=avg(col["travel"]),
        col_wait_avg=avg(col["wait"]),
        oth_travel_avg=avg(oth["travel"]),
        oth_wait_avg=avg(oth["wait"]),
        col_count=len(col["travel"]),
        oth_count=len(oth["travel"]),
        col_censored=col["censored"],
        oth_censored=oth["censored"],
        never_departed=never,
    )
