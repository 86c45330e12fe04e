"""Road network model: directed links, per-link approach lanes, phase tables.

A link carries vehicles from `src` to `dst` in `free_steps` simulation steps
and then feeds one FIFO approach lane at `dst`; the lane shares the link's
id. Links whose `src` is an origin (not an intersection) are entry links.
Vehicles leave the network by discharging from the last queue of their
route, so every link's downstream end is an intersection.

Grid generation rule: directed internal links between all orthogonally
adjacent intersections, plus exactly one entry link per boundary
intersection, attached to its first free side in N, E, S, W order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import ValidationError

NET_HEADER = "COLLUSIM-NET v1"

_SIDES = ("N", "E", "S", "W")
_AXIS = {"N": "NS", "S": "NS", "E": "EW", "W": "EW"}


@dataclass(frozen=True)
class Link:
    id: str
    src: str
    dst: str
    free_steps: int
    capacity: int

    @property
    def lane(self) -> str:
        """Approach lane at dst; one lane per link, sharing the link id."""
        return self.id


@dataclass(frozen=True)
class Intersection:
    id: str
    phases: tuple[tuple[str, ...], ...]  # each phase: lanes granted green


@dataclass
class NetworkSpec:
    """Validated scenario input describing the topology to build."""

    kind: str = "grid"  # "grid" | "explicit"
    rows: int = 3
    cols: int = 3
    phase_scheme: str = "axis"  # "axis" (2 groups) | "approach" (per-direction)
    free_steps: int = 3
    capacity: int = 25
    # explicit form
    origins: tuple[str, ...] = ()
    intersections: tuple[tuple[str, tuple[tuple[str, ...], ...]], ...] = ()
    links: tuple[tuple[str, str, str, int, int], ...] = ()  # id, src, dst, free, cap


@dataclass
class RoadNetwork:
    intersections: tuple[Intersection, ...]
    links: tuple[Link, ...]
    origins: tuple[str, ...]
    _by_iid: dict[str, Intersection] = field(init=False, repr=False)
    _by_link: dict[str, Link] = field(init=False, repr=False)
    _incoming: dict[str, tuple[str, ...]] = field(init=False, repr=False)
    _outgoing: dict[str, tuple[str, ...]] = field(init=False, repr=False)
    _neighbors: dict[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_iid = {i.id: i for i in self.intersections}
        self._by_link = {l.id: l for l in self.links}
        inc: dict[str, list[str]] = {i.id: [] for i in self.intersections}
        out: dict[str, list[str]] = {i.id: [] for i in self.intersections}
        for l in self.links:
            inc[l.dst].append(l.id)
            if l.src in inc:
                out[l.src].append(l.id)
        self._incoming = {k: tuple(v) for k, v in inc.items()}
        self._outgoing = {k: tuple(v) for k, v in out.items()}
        nbrs: dict[str, list[str]] = {i.id: [] for i in self.intersections}
        for l in self.links:
            if l.src in self._by_iid and l.dst in self._by_iid and l.src != l.dst:
                if l.dst not in nbrs[l.src]:
                    nbrs[l.src].append(l.dst)
                if l.src not in nbrs[l.dst]:
                    nbrs[l.dst].append(l.src)
        self._neighbors = {k: tuple(v) for k, v in nbrs.items()}

    def intersection(self, iid: str) -> Intersection:
        return self._by_iid[iid]

    def link(self, link_id: str) -> Link:
        return self._by_link[link_id]

    def incoming_lanes(self, iid: str) -> tuple[str, ...]:
        """Approach lanes of an intersection, in construction order."""
        return self._incoming[iid]

    def outgoing_links(self, iid: str) -> tuple[str, ...]:
        return self._outgoing[iid]

    def neighbors(self, iid: str) -> tuple[str, ...]:
        """1-hop neighbor intersections (either link direction)."""
        return self._neighbors[iid]

    def entry_links(self) -> tuple[str, ...]:
        return tuple(l.id for l in self.links if l.src not in self._by_iid)

    def lane_intersection(self, lane: str) -> str:
        return self._by_link[lane].dst

    def max_approach_count(self) -> int:
        return max(len(self._incoming[i.id]) for i in self.intersections)


def _grid_candidates(spec: NetworkSpec):
    if spec.rows * spec.cols < 2:
        raise ValidationError("grid needs at least 2 intersections (use an explicit topology otherwise)")
    if spec.phase_scheme not in ("axis", "approach"):
        raise ValidationError(f"unknown phase_scheme {spec.phase_scheme!r}")

    def iid(r, c):
        return f"I{r}_{c}"

    in_grid = lambda r, c: 0 <= r < spec.rows and 0 <= c < spec.cols
    offsets = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}

    links: list[tuple[str, str, str, int, int]] = []
    approach_side: dict[str, str] = {}  # link id -> side it arrives from, at dst
    origins: list[str] = []
    inter_ids: list[str] = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            inter_ids.append(iid(r, c))
            for side in _SIDES:
                dr, dc = offsets[side]
                nr, nc = r + dr, c + dc
                if in_grid(nr, nc):
                    lid = f"{iid(nr, nc)}->{iid(r, c)}"
                    links.append((lid, iid(nr, nc), iid(r, c), spec.free_steps, spec.capacity))
                    approach_side[lid] = side
            free = [s for s in _SIDES if not in_grid(r + offsets[s][0], c + offsets[s][1])]
            if free:
                origin = f"O{r}_{c}"
                origins.append(origin)
                lid = f"{origin}->{iid(r, c)}"
                links.append((lid, origin, iid(r, c), spec.free_steps, spec.capacity))
                approach_side[lid] = free[0]

    inters: list[tuple[str, tuple[tuple[str, ...], ...]]] = []
    for i in inter_ids:
        lanes = [lid for (lid, _s, d, _f, _c) in links if d == i]
        groups: dict[str, list[str]] = {}
        for lane in lanes:
            key = (
                _AXIS[approach_side[lane]]
                if spec.phase_scheme == "axis"
                else approach_side[lane]
            )
            groups.setdefault(key, []).append(lane)
        order = ("NS", "EW") if spec.phase_scheme == "axis" else _SIDES
        phases = tuple(tuple(groups[k]) for k in order if k in groups)
        inters.append((i, phases))
    return tuple(origins), tuple(inters), tuple(links)


def build_network(spec: NetworkSpec) -> RoadNetwork:
    """Build and validate a RoadNetwork; deterministic for equal specs."""
    if spec.kind == "grid":
        if spec.free_steps < 1:
            raise ValidationError(f"free_steps must be >= 1, got {spec.free_steps}")
        if spec.capacity < 1:
            raise ValidationError(f"capacity must be >= 1, got {spec.capacity}")
        origins, inters, links = _grid_candidates(spec)
    elif spec.kind == "explicit":
        origins, inters, links = spec.origins, spec.intersections, spec.links
    else:
        raise ValidationError(f"unknown network kind {spec.kind!r}")
    return _validate(origins, inters, links)


def _validate(origins, inters, link_rows) -> RoadNetwork:
    iids = [i for i, _p in inters]
    if len(set(iids)) != len(iids):
        raise ValidationError("duplicate intersection id")
    iid_set = set(iids)
    origin_set = set(origins)
    if iid_set & origin_set:
        raise ValidationError(f"origin ids collide with intersections: {sorted(iid_set & origin_set)}")

    links = []
    seen = set()
    for lid, src, dst, free, cap in link_rows:
        if lid in seen:
            raise ValidationError(f"duplicate link id {lid!r}")
        seen.add(lid)
        if dst not in iid_set:
            raise ValidationError(f"dangling link {lid!r}: downstream intersection {dst!r} does not exist")
        if src not in iid_set and src not in origin_set:
            raise ValidationError(f"link {lid!r}: source {src!r} is neither an intersection nor a declared origin")
        if int(free) < 1:
            raise ValidationError(f"link {lid!r}: free_steps must be >= 1, got {free}")
        if int(cap) < 1:
            raise ValidationError(f"link {lid!r}: capacity must be >= 1, got {cap}")
        links.append(Link(lid, src, dst, int(free), int(cap)))

    incoming: dict[str, list[str]] = {i: [] for i in iids}
    for l in links:
        incoming[l.dst].append(l.id)

    intersections = []
    for iid, phases in inters:
        lanes = set(incoming[iid])
        norm = tuple(tuple(p) for p in phases)
        if not (2 <= len(norm) <= 6):
            raise ValidationError(f"intersection {iid!r}: phase count {len(norm)} outside 2..6")
        sets = []
        for pi, phase in enumerate(norm):
            if not phase:
                raise ValidationError(f"intersection {iid!r}: phase {pi} is empty")
            for lane in phase:
                if lane not in lanes:
                    raise ValidationError(
                        f"intersection {iid!r}: phase {pi} grants lane {lane!r} which is not an approach lane"
                    )
            s = frozenset(phase)
            if s in sets:
                raise ValidationError(f"intersection {iid!r}: duplicate phase lane set {sorted(s)}")
            sets.append(s)
        covered = set().union(*sets) if sets else set()
        missing = lanes - covered
        if missing:
            raise ValidationError(
                f"intersection {iid!r}: lane {sorted(missing)[0]!r} appears in no phase"
            )
        intersections.append(Intersection(iid, norm))

    return RoadNetwork(tuple(intersections), tuple(links), tuple(origins))


def shortest_link_path(network: RoadNetwork, start_iid: str, dest_iid: str) -> list[str]:
    """BFS shortest path (in links) between intersections; deterministic
    tie-breaking by construction order. Raises if unreachable."""
    if start_iid == dest_iid:
        return []
    parent: dict[str, tuple[str, str]] = {}
    frontier = deque([start_iid])
    seen = {start_iid}
    while frontier:
        cur = frontier.popleft()
        for lid in network.outgoing_links(cur):
            nxt = network.link(lid).dst
            if nxt in seen:
                continue
            seen.add(nxt)
            parent[nxt] = (cur, lid)
            if nxt == dest_iid:
                path = []
                node = dest_iid
                while node != start_iid:
                    node, lid2 = parent[node]
                    path.append(lid2)
                return path[::-1]
            frontier.append(nxt)
    raise ValidationError(f"no route from {start_iid!r} to {dest_iid!r}")


def serialize_network(network: RoadNetwork) -> str:
    lines = [NET_HEADER]
    for o in network.origins:
        lines.append(f"origin {o}")
    for i in network.intersections:
        phases = "|".join(",".join(p) for p in i.phases)
        lines.append(f"intersection {i.id} phases={phases}")
    for l in network.links:
        lines.append(f"link {l.id} {l.src} {l.dst} {l.free_steps} {l.capacity}")
    return "\n".join(lines) + "\n"


def parse_network(text: str) -> RoadNetwork:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != NET_HEADER:
        raise ValidationError(f"bad network header: expected {NET_HEADER!r}")
    origins: list[str] = []
    inters: list[tuple[str, tuple[tuple[str, ...], ...]]] = []
    links: list[tuple[str, str, str, int, int]] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "origin" and len(parts) == 2:
            origins.append(parts[1])
        elif parts[0] == "intersection" and len(parts) == 3 and parts[2].startswith("phases="):
            phases = tuple(
                tuple(p.split(",")) for p in parts[2][len("phases="):].split("|")
            )
            inters.append((parts[1], phases))
        elif parts[0] == "link" and len(parts) == 6:
            links.append((parts[1], parts[2], parts[3], int(parts[4]), int(parts[5])))
        else:
            raise ValidationError(f"unparseable network line: {ln!r}")
    return _validate(tuple(origins), tuple(inters), tuple(links))
