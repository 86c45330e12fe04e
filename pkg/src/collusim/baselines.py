"""Rule-based attack arms: constant-count reporting and uniform random."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .scenario import STREAM_BASELINE, child_rng
from .simulator import PresenceReport, SimState


@dataclass(frozen=True)
class BaselinePolicy:
    kind: str  # "all" | "random"
    value: int  # constant count for "all", cap for "random"

    def __post_init__(self):
        if self.kind not in ("all", "random"):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.value < 0:
            raise ConfigError(f"baseline value must be >= 0, got {self.value}")


def all_k(k: int) -> BaselinePolicy:
    return BaselinePolicy("all", k)


def greedy_cap(a_max: int) -> BaselinePolicy:
    """Always report the maximum possible count; identical to all_k(a_max)."""
    return all_k(a_max)


def random_policy(a_max: int) -> BaselinePolicy:
    return BaselinePolicy("random", a_max)


def baseline_act(policy: BaselinePolicy, agent_id: int, decision_index: int, rng=None) -> int:
    if policy.kind == "all":
        return policy.value
    if rng is None:
        raise ConfigError("random baseline needs an rng")
    return int(rng.integers(0, policy.value + 1))


def baseline_reporter(policy: BaselinePolicy, seed: int):
    """Reporter closure: one action per running colluder per decision; only
    vehicles currently on an approach lane actually submit a report."""
    rng = child_rng(seed, STREAM_BASELINE)

    def reporter(state: SimState, window: int) -> list[PresenceReport]:
        reports = []
        for aid in state.running_colluders():
            action = baseline_act(policy, aid, window, rng)
            lane = state.vehicles[aid].current_lane
            if lane is not None:
                reports.append(PresenceReport(aid, lane, action))
        return reports

    return reporter


def parse_arm(spec: str, a_max: int) -> tuple[str, BaselinePolicy | str | None]:
    """Parse a policy selector: none | all:<k> | random:<cap> | learned:<dir>.

    Returns (label, payload) where payload is a BaselinePolicy, a checkpoint
    directory for learned arms, or None for the honest no-report run.
    """
    if spec == "none":
        return "none", None
    if ":" not in spec:
        raise ConfigError(f"bad policy selector {spec!r}")
    kind, arg = spec.split(":", 1)
    if kind == "all":
        k = int(arg)
        if not (0 <= k <= a_max):
            raise ConfigError(f"all:{k} outside action space 0..{a_max}")
        return spec, all_k(k)
    if kind == "random":
        cap = int(arg)
        if cap < 0:
            raise ConfigError(f"random cap must be >= 0, got {cap}")
        return spec, random_policy(cap)
    if kind == "learned":
        if not arg:
            raise ConfigError("learned policy needs a checkpoint directory")
        return "learned", arg
    raise ConfigError(f"unknown policy kind {kind!r}")
