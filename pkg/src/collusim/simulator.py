"""Deterministic discrete-time queue simulator.

Vehicles traverse links in integer free-flow steps, then join the link's
FIFO approach lane at the downstream intersection. Lanes granted green by
the current phase discharge up to `discharge_rate` head vehicles per step
onto the next route link (blocked when that link is at capacity), or finish
the vehicle when its route is exhausted. A queued vehicle that does not
move in a step accumulates one step of waiting time.

Order of operations inside one `step` (frozen; tests rely on it):
  1. link travel advances; vehicles reaching the end of a link enqueue
  2. green lanes discharge
  3. vehicles still queued that neither arrived nor moved gain +1 wait
  4. pending vehicles whose departure time has come enter their first link
     if it has spare capacity (otherwise they retry next step)
  5. the clock advances

All randomness lives in vehicle generation; stepping is a pure function of
(state, green, config).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ReportError, ValidationError
from .network import RoadNetwork


@dataclass
class SimConfig:
    discharge_rate: int = 1
    check_invariants: bool = False

    def __post_init__(self):
        if self.discharge_rate < 1:
            raise ValidationError(f"discharge_rate must be >= 1, got {self.discharge_rate}")


@dataclass(slots=True)
class Vehicle:
    id: int
    route: tuple[str, ...]
    depart_step: int
    is_colluding: bool = False
    link_index: int = -1  # -1 = not yet departed
    remaining: int = 0  # free-flow steps left on the current link
    queued_lane: str | None = None
    wait_accum: int = 0
    done_step: int | None = None

    @property
    def departed(self) -> bool:
        return self.link_index >= 0

    @property
    def running(self) -> bool:
        return self.departed and self.done_step is None

    @property
    def current_lane(self) -> str | None:
        """Approach lane the vehicle is present on (rolling or queued).

        One lane per link: a running vehicle is visible on its current
        link's approach lane for the whole traversal.
        """
        if not self.running:
            return None
        return self.route[self.link_index]

    def upcoming_intersection(self, network: RoadNetwork) -> str:
        """Downstream intersection of the current (or first) route link."""
        idx = max(self.link_index, 0)
        return network.link(self.route[min(idx, len(self.route) - 1)]).dst


@dataclass
class PresenceReport:
    """A vehicle's claimed multiplicity on its current lane (honest: 1)."""

    vehicle_id: int
    lane: str
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValidationError(f"report count must be >= 0, got {self.count}")


class SimState:
    """Complete world state; advanced in place by `step`."""

    def __init__(self, network: RoadNetwork, vehicles: list[Vehicle], rng_seed: int = 0):
        self.network = network
        self.clock = 0
        self.rng_seed = rng_seed
        self.vehicles: dict[int, Vehicle] = {v.id: v for v in sorted(vehicles, key=lambda v: v.id)}
        self.lane_queues: dict[str, deque[int]] = {l.id: deque() for l in network.links}
        self.transit: dict[str, list[int]] = {l.id: [] for l in network.links}
        self.occupancy: dict[str, int] = {l.id: 0 for l in network.links}
        self.pending: deque[int] = deque(
            v.id for v in sorted(vehicles, key=lambda v: (v.depart_step, v.id))
        )
        self.phase: dict[str, int] = {i.id: 0 for i in network.intersections}
        self.lane_wait_total: dict[str, int] = {l.id: 0 for l in network.links}

    def running_colluders(self) -> list[int]:
        return [vid for vid, v in self.vehicles.items() if v.is_colluding and v.running]

    def colluder_waits(self) -> dict[int, int]:
        return {vid: v.wait_accum for vid, v in self.vehicles.items() if v.is_colluding}

    def all_done(self) -> bool:
        return not self.pending and all(v.done_step is not None for v in self.vehicles.values() if v.departed)


def step(state: SimState, green: dict[str, int], config: SimConfig) -> SimState:
    """Advance the world by one step under a fixed green assignment."""
    net = state.network
    vehicles = state.vehicles

    # 1. travel + arrivals
    arrived_now: set[int] = set()
    for link in net.links:
        lst = state.transit[link.id]
        if not lst:
            continue
        keep: list[int] = []
        q = state.lane_queues[link.id]
        for vid in lst:
            v = vehicles[vid]
            v.remaining -= 1
            if v.remaining == 0:
                q.append(vid)
                v.queued_lane = link.id
                arrived_now.add(vid)
            else:
                keep.append(vid)
        state.transit[link.id] = keep

    # 2. discharge green lanes
    for inter in net.intersections:
        pidx = green[inter.id]
        if not (0 <= pidx < len(inter.phases)):
            raise ValidationError(f"intersection {inter.id!r}: phase index {pidx} out of range")
        state.phase[inter.id] = pidx
        for lane in inter.phases[pidx]:
            q = state.lane_queues[lane]
            for _ in range(config.discharge_rate):
                if not q:
                    break
                v = vehicles[q[0]]
                nxt_idx = v.link_index + 1
                if nxt_idx >= len(v.route):
                    q.popleft()
                    state.occupancy[lane] -= 1
                    v.queued_lane = None
                    v.done_step = state.clock
                    continue
                nxt = v.route[nxt_idx]
                if state.occupancy[nxt] >= net.link(nxt).capacity:
                    break  # head blocked by spillback; FIFO blocks the lane
                q.popleft()
                state.occupancy[lane] -= 1
                v.queued_lane = None
                v.link_index = nxt_idx
                v.remaining = net.link(nxt).free_steps
                state.transit[nxt].append(v.id)
                state.occupancy[nxt] += 1

    # 3. waiting accounting
    for link in net.links:
        q = state.lane_queues[link.id]
        if not q:
            continue
        for vid in q:
            if vid not in arrived_now:
                vehicles[vid].wait_accum += 1
                state.lane_wait_total[link.id] += 1

    # 4. departures (blocked vehicles stay pending and retry next step)
    still: list[int] = []
    while state.pending and vehicles[state.pending[0]].depart_step <= state.clock:
        vid = state.pending.popleft()
        v = vehicles[vid]
        first = v.route[0]
        if state.occupancy[first] < net.link(first).capacity:
            v.link_index = 0
            v.remaining = net.link(first).free_steps
            state.transit[first].append(vid)
            state.occupancy[first] += 1
        else:
            still.append(vid)
    for vid in reversed(still):
        state.pending.appendleft(vid)

    state.clock += 1
    if config.check_invariants:
        validate_state(state)
    return state


def validate_state(state: SimState) -> None:
    """Census + containment checks (debug builds / tests)."""
    n_pending = len(state.pending)
    n_transit = sum(len(v) for v in state.transit.values())
    n_queued = sum(len(q) for q in state.lane_queues.values())
    n_done = sum(1 for v in state.vehicles.values() if v.done_step is not None)
    total = len(state.vehicles)
    if n_pending + n_transit + n_queued + n_done != total:
        raise ValidationError(
            f"conservation violated at clock {state.clock}: "
            f"{n_pending}+{n_transit}+{n_queued}+{n_done} != {total}"
        )
    seen: set[int] = set()
    for lane, q in state.lane_queues.items():
        for vid in q:
            if vid in seen:
                raise ValidationError(f"vehicle {vid} is in more than one queue (lane {lane!r})")
            seen.add(vid)
            if state.vehicles[vid].queued_lane != lane:
                raise ValidationError(f"vehicle {vid} queue membership inconsistent with queued_lane")
    for lane, occ in state.occupancy.items():
        real = len(state.transit[lane]) + len(state.lane_queues[lane])
        if occ != real:
            raise ValidationError(f"occupancy cache wrong on {lane!r}: {occ} != {real}")


def advance_window(state: SimState, green: dict[str, int], tau: int, config: SimConfig) -> None:
    """Hold one green assignment for tau consecutive steps."""
    for _ in range(tau):
        step(state, green, config)


def _lane_occupants(state: SimState, lane: str):
    """Vehicle ids present on a lane: rolling up the link, then queued."""
    return state.transit[lane] + list(state.lane_queues[lane])


def reported_lane_counts(
    state: SimState,
    intersection_id: str,
    reports: list[PresenceReport],
    a_max: int | None = None,
) -> np.ndarray:
    """Per-lane reported vehicle counts at one intersection.

    Vehicles present without an explicit report contribute an honest 1;
    reports override the contribution of the named (present) vehicle.
    Reports for lanes of other intersections are ignored here.
    """
    net = state.network
    lanes = net.incoming_lanes(intersection_id)
    lane_set = set(lanes)
    override: dict[int, int] = {}
    for rep in reports:
        if rep.lane not in lane_set:
            continue
        v = state.vehicles.get(rep.vehicle_id)
        if v is None or v.current_lane != rep.lane:
            raise ReportError(
                f"vehicle {rep.vehicle_id} is not on lane {rep.lane!r}; a vehicle can only report where it is"
            )
        if rep.vehicle_id in override:
            raise ReportError(f"duplicate report for vehicle {rep.vehicle_id}")
        if a_max is not None and rep.count > a_max:
            raise ReportError(f"report count {rep.count} exceeds cap {a_max}")
        override[rep.vehicle_id] = rep.count
    counts = np.zeros(len(lanes), dtype=np.int64)
    for i, lane in enumerate(lanes):
        counts[i] = sum(override.get(vid, 1) for vid in _lane_occupants(state, lane))
    return counts


def true_colluding_counts(state: SimState, intersection_id: str) -> np.ndarray:
    """Per-lane census of present colluding vehicles (report-independent)."""
    lanes = state.network.incoming_lanes(intersection_id)
    counts = np.zeros(len(lanes), dtype=np.int64)
    for i, lane in enumerate(lanes):
        counts[i] = sum(
            1 for vid in _lane_occupants(state, lane) if state.vehicles[vid].is_colluding
        )
    return counts


def true_lane_counts(state: SimState, intersection_id: str) -> np.ndarray:
    """Per-lane census of all present vehicles (the honest ground truth)."""
    lanes = state.network.incoming_lanes(intersection_id)
    return np.array(
        [len(state.transit[lane]) + len(state.lane_queues[lane]) for lane in lanes],
        dtype=np.int64,
    )
