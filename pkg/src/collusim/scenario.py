"""Scenario configuration: the key-value tree driving every experiment.

A scenario YAML fixes the topology, demand profile, simulation constants,
collusion parameters and both training configurations, so a run is fully
reproducible from (scenario file, seed). Demand is Bernoulli per origin and
step with piecewise-constant interval weights, scaled so the expected total
matches `total_vehicles`.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .errors import ConfigError, ValidationError
from .network import NetworkSpec, RoadNetwork, shortest_link_path
from .ppo import PpoConfig
from .simulator import SimConfig, Vehicle

# child-stream tags for decoupled seeded generators
STREAM_ROUTES = 0
STREAM_COLLUDERS = 1
STREAM_TRAINING = 2
STREAM_POLICY = 3
STREAM_BASELINE = 4

# two-peak default demand profile (relative interval weights)
DEFAULT_DEMAND_WEIGHTS = (0.5, 1.0, 0.4, 0.9, 0.35, 0.1)


def child_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


def default_atcs_ppo() -> PpoConfig:
    return PpoConfig(gamma=0.6, lr=1e-3, epochs=8, minibatch_size=128, reward_scale=0.02)


def default_attack_ppo() -> PpoConfig:
    return PpoConfig(
        gamma=0.5, lr=2e-3, lr_final=3e-4, epochs=6, minibatch_size=24,
        entropy_coef=0.02, entropy_final=0.002, reward_scale=0.05,
    )


@dataclass
class AtcsTrainConfig:
    episodes: int = 240
    rollout_episodes: int = 4
    hidden: int = 32
    seed: int = 7
    ppo: PpoConfig = field(default_factory=default_atcs_ppo)


@dataclass
class AttackTrainConfig:
    episodes: int = 900
    rollout_episodes: int = 3
    ckpt_every: int = 0  # 0 disables periodic checkpoints
    # minibatch_size is interpreted as decision instants per minibatch
    ppo: PpoConfig = field(default_factory=default_attack_ppo)


@dataclass
class ScenarioConfig:
    network: NetworkSpec = field(default_factory=NetworkSpec)
    total_vehicles: int = 500
    collusion_size: int = 20
    seeds: tuple[int, ...] = (0, 1, 10, 12, 42)
    episode_len: int = 300
    tau: int = 5
    discharge_rate: int = 1
    a_max: int = 10
    k_intervals: int = 6
    demand_weights: tuple[float, ...] = DEFAULT_DEMAND_WEIGHTS
    origin_weights: dict[str, float] | None = None  # default: uniform over origins
    seconds_per_step: float = 1.0
    alpha: float = 0.5
    count_scale: float = 0.1
    atcs: AtcsTrainConfig = field(default_factory=AtcsTrainConfig)
    attack: AttackTrainConfig = field(default_factory=AttackTrainConfig)

    def validate(self) -> None:
        if self.total_vehicles < 0:
            raise ConfigError("total_vehicles must be >= 0")
        if not (0 <= self.collusion_size <= self.total_vehicles):
            raise ConfigError(
                f"collusion size {self.collusion_size} must be within 0..total_vehicles ({self.total_vehicles})"
            )
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if self.episode_len < 1 or self.tau < 1:
            raise ConfigError("episode_len and tau must be >= 1")
        if self.episode_len % self.tau != 0:
            raise ConfigError(f"episode_len {self.episode_len} must be a multiple of tau {self.tau}")
        if self.k_intervals < 1 or self.episode_len % self.k_intervals != 0:
            raise ConfigError(
                f"episode_len {self.episode_len} must be a multiple of k_intervals {self.k_intervals}"
            )
        if self.a_max < 0:
            raise ConfigError("a_max must be >= 0")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if len(self.demand_weights) != self.k_intervals:
            raise ConfigError(
                f"demand weights length {len(self.demand_weights)} != k_intervals {self.k_intervals}"
            )
        if any(w < 0 for w in self.demand_weights) or sum(self.demand_weights) <= 0:
            raise ConfigError("demand weights must be >= 0 and sum to > 0")
        if self.origin_weights is not None:
            if any(w < 0 for w in self.origin_weights.values()):
                raise ConfigError("origin weights must be >= 0")
            if sum(self.origin_weights.values()) <= 0:
                raise ConfigError("origin weights must sum to > 0")
        if self.seconds_per_step <= 0:
            raise ConfigError("seconds_per_step must be > 0")

    def sim_config(self, check_invariants: bool = False) -> SimConfig:
        return SimConfig(self.discharge_rate, check_invariants)

    @property
    def n_windows(self) -> int:
        return self.episode_len // self.tau

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"]["intersections"] = [
            {"id": i, "phases": [list(p) for p in phases]}
            for i, phases in self.network.intersections
        ]
        d["network"]["links"] = [
            {"id": l[0], "src": l[1], "dst": l[2], "free_steps": l[3], "capacity": l[4]}
            for l in self.network.links
        ]
        d["network"]["origins"] = list(self.network.origins)
        return d

    def canonical_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_yaml().encode()).hexdigest()


def _take(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _network_spec(d: dict) -> NetworkSpec:
    _take(d, {"kind", "rows", "cols", "phase_scheme", "free_steps", "capacity",
              "origins", "intersections", "links"}, "network")
    kind = d.get("kind", "grid")
    if kind == "explicit":
        inters = tuple(
            (i["id"], tuple(tuple(p) for p in i["phases"])) for i in d.get("intersections", [])
        )
        links = tuple(
            (l["id"], l["src"], l["dst"], int(l.get("free_steps", 3)), int(l.get("capacity", 25)))
            for l in d.get("links", [])
        )
        return NetworkSpec(kind="explicit", origins=tuple(d.get("origins", [])),
                           intersections=inters, links=links)
    return NetworkSpec(
        kind="grid",
        rows=int(d.get("rows", 3)),
        cols=int(d.get("cols", 3)),
        phase_scheme=d.get("phase_scheme", "axis"),
        free_steps=int(d.get("free_steps", 3)),
        capacity=int(d.get("capacity", 25)),
    )


def _ppo(d: dict, where: str, **defaults) -> PpoConfig:
    base = asdict(PpoConfig(**defaults))
    _take(d, set(base), where)
    base.update(d)
    try:
        return PpoConfig(**base)
    except (TypeError, ValidationError) as e:
        raise ConfigError(f"bad ppo settings in {where}: {e}") from e


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must contain a mapping at top level")
    _take(raw, {"network", "demand", "sim", "collusion", "signals",
                "atcs_training", "attack_training", "seeds"}, "scenario")
    demand = dict(raw.get("demand", {}))
    _take(demand, {"total_vehicles", "weights", "origin_weights"}, "demand")
    sim = dict(raw.get("sim", {}))
    _take(sim, {"episode_len", "tau", "discharge_rate", "k_intervals", "seconds_per_step"}, "sim")
    col = dict(raw.get("collusion", {}))
    _take(col, {"size", "a_max"}, "collusion")
    sig = dict(raw.get("signals", {}))
    _take(sig, {"alpha", "count_scale"}, "signals")

    base = ScenarioConfig()
    at = dict(raw.get("atcs_training", {}))
    at_ppo = _ppo(dict(at.pop("ppo", {})), "atcs_training.ppo", **asdict(default_atcs_ppo()))
    _take(at, {"episodes", "rollout_episodes", "hidden", "seed"}, "atcs_training")
    ak = dict(raw.get("attack_training", {}))
    ak_ppo = _ppo(dict(ak.pop("ppo", {})), "attack_training.ppo", **asdict(default_attack_ppo()))
    _take(ak, {"episodes", "rollout_episodes", "ckpt_every"}, "attack_training")

    k = int(sim.get("k_intervals", base.k_intervals))
    weights = demand.get("weights")
    if weights is None:
        weights = DEFAULT_DEMAND_WEIGHTS if k == len(DEFAULT_DEMAND_WEIGHTS) else (1.0,) * k
    cfg = ScenarioConfig(
        network=_network_spec(dict(raw.get("network", {}))),
        total_vehicles=int(demand.get("total_vehicles", base.total_vehicles)),
        collusion_size=int(col.get("size", base.collusion_size)),
        seeds=tuple(int(s) for s in raw.get("seeds", base.seeds)),
        episode_len=int(sim.get("episode_len", base.episode_len)),
        tau=int(sim.get("tau", base.tau)),
        discharge_rate=int(sim.get("discharge_rate", base.discharge_rate)),
        a_max=int(col.get("a_max", base.a_max)),
        k_intervals=k,
        demand_weights=tuple(float(w) for w in weights),
        origin_weights=(
            {str(k2): float(v) for k2, v in demand["origin_weights"].items()}
            if demand.get("origin_weights")
            else None
        ),
        seconds_per_step=float(sim.get("seconds_per_step", base.seconds_per_step)),
        alpha=float(sig.get("alpha", base.alpha)),
        count_scale=float(sig.get("count_scale", base.count_scale)),
        atcs=AtcsTrainConfig(
            episodes=int(at.get("episodes", base.atcs.episodes)),
            rollout_episodes=int(at.get("rollout_episodes", base.atcs.rollout_episodes)),
            hidden=int(at.get("hidden", base.atcs.hidden)),
            seed=int(at.get("seed", base.atcs.seed)),
            ppo=at_ppo,
        ),
        attack=AttackTrainConfig(
            episodes=int(ak.get("episodes", base.attack.episodes)),
            rollout_episodes=int(ak.get("rollout_episodes", base.attack.rollout_episodes)),
            ckpt_every=int(ak.get("ckpt_every", base.attack.ckpt_every)),
            ppo=ak_ppo,
        ),
    )
    cfg.validate()
    return cfg


def desk_scenario(
    rows: int = 3,
    cols: int = 3,
    total_vehicles: int = 500,
    collusion_size: int = 20,
) -> ScenarioConfig:
    """The calibrated desk-scale scenario: a 3x3 grid with a heavier western
    inflow so adaptive control has real headroom over fixed-time cycling,
    dense enough that falsified counts move phase decisions."""
    origin_weights = None
    if rows == 3 and cols == 3:
        origin_weights = {
            "O0_0": 2.0, "O1_0": 2.0, "O2_0": 2.0,
            "O0_1": 0.5, "O0_2": 1.0, "O1_2": 1.0, "O2_1": 0.5, "O2_2": 1.0,
        }
    cfg = ScenarioConfig(
        network=NetworkSpec(kind="grid", rows=rows, cols=cols, free_steps=3, capacity=25),
        total_vehicles=total_vehicles,
        collusion_size=collusion_size,
        origin_weights=origin_weights,
    )
    cfg.validate()
    return cfg


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse scenario file {path}: {e}") from e
    return scenario_from_dict(raw or {})


def scenario_to_yaml(cfg: ScenarioConfig) -> str:
    d = cfg.to_dict()
    out = {
        "network": {k: v for k, v in d["network"].items()
                    if d["network"]["kind"] == "explicit" or k in
                    {"kind", "rows", "cols", "phase_scheme", "free_steps", "capacity"}},
        "demand": {
            "total_vehicles": cfg.total_vehicles,
            "weights": list(cfg.demand_weights),
            **({"origin_weights": dict(cfg.origin_weights)} if cfg.origin_weights else {}),
        },
        "sim": {"episode_len": cfg.episode_len, "tau": cfg.tau,
                "discharge_rate": cfg.discharge_rate, "k_intervals": cfg.k_intervals,
                "seconds_per_step": cfg.seconds_per_step},
        "collusion": {"size": cfg.collusion_size, "a_max": cfg.a_max},
        "signals": {"alpha": cfg.alpha, "count_scale": cfg.count_scale},
        "atcs_training": {"episodes": cfg.atcs.episodes,
                          "rollout_episodes": cfg.atcs.rollout_episodes,
                          "hidden": cfg.atcs.hidden, "seed": cfg.atcs.seed,
                          "ppo": asdict(cfg.atcs.ppo)},
        "attack_training": {"episodes": cfg.attack.episodes,
                            "rollout_episodes": cfg.attack.rollout_episodes,
                            "ckpt_every": cfg.attack.ckpt_every,
                            "ppo": asdict(cfg.attack.ppo)},
        "seeds": list(cfg.seeds),
    }
    return yaml.safe_dump(out, sort_keys=True)


def generate_vehicles(network: RoadNetwork, cfg: ScenarioConfig, seed: int) -> list[Vehicle]:
    """Seeded demand: Bernoulli departures per (step, origin), then routes
    to a uniformly drawn destination via deterministic shortest paths."""
    rng = child_rng(seed, STREAM_ROUTES)
    entries = network.entry_links()
    if not entries or cfg.total_vehicles == 0:
        return []
    origin_w = {e: 1.0 for e in entries}
    if cfg.origin_weights:
        by_origin = {network.link(e).src: e for e in entries}
        unknown = set(cfg.origin_weights) - set(by_origin)
        if unknown:
            raise ConfigError(f"origin weights name unknown origins: {sorted(unknown)}")
        origin_w = {e: cfg.origin_weights.get(network.link(e).src, 0.0) for e in entries}
    interval_len = cfg.episode_len // cfg.k_intervals
    w = np.asarray(cfg.demand_weights, dtype=np.float64)
    per_step = np.repeat(w, interval_len)
    expected = per_step.sum() * sum(origin_w.values())
    scale = cfg.total_vehicles / expected
    rates = {e: np.minimum(per_step * scale * origin_w[e], 1.0) for e in entries}

    candidates: list[tuple[int, str]] = []
    for t in range(cfg.episode_len):
        for e in entries:
            if rng.random() < rates[e][t]:
                candidates.append((t, e))
    candidates = candidates[: cfg.total_vehicles]

    iids = [i.id for i in network.intersections]
    # prefer destinations at least 2 hops out so trips cross the network
    far: dict[str, list[str]] = {}
    for e in entries:
        start = network.link(e).dst
        opts = [i for i in iids if i != start]
        distant = [i for i in opts if len(shortest_link_path(network, start, i)) >= 2]
        far[e] = distant or opts
    vehicles: list[Vehicle] = []
    for vid, (t, e) in enumerate(candidates):
        start = network.link(e).dst
        dests = far[e]
        if dests:
            dest = dests[int(rng.integers(len(dests)))]
            route = (e, *shortest_link_path(network, start, dest))
        else:
            route = (e,)
        vehicles.append(Vehicle(vid, route, t))
    return vehicles


def colluder_permutation(n_vehicles: int, seed: int) -> list[int]:
    """Seeded vehicle-id permutation; prefixes give nested collusion sets."""
    rng = child_rng(seed, STREAM_COLLUDERS)
    return [int(i) for i in rng.permutation(n_vehicles)]


def materialize_vehicles(
    network: RoadNetwork, cfg: ScenarioConfig, seed: int, collusion_size: int | None = None
) -> list[Vehicle]:
    """Vehicles with routes and colluding flags for one run seed."""
    vehicles = generate_vehicles(network, cfg, seed)
    size = cfg.collusion_size if collusion_size is None else collusion_size
    size = min(size, len(vehicles))
    chosen = set(colluder_permutation(len(vehicles), seed)[:size])
    for v in vehicles:
        v.is_colluding = v.id in chosen
    return vehicles
