"""The attack target: per-intersection signal policies trained on honest
traffic, then frozen.

Each intersection has its own actor/critic pair over an observation built
from reported lane counts: [own approach counts, current-phase one-hot,
alpha * each 1-hop neighbor's approach counts]. Training rewards an
intersection with the negative waiting-time increment on its own approach
lanes plus alpha times its neighbors' increments over each decision window.

Frozen policies act by argmax and are exposed to the rest of the system
only through controller closures, keeping the vehicle side black-box.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, TrainingDiverged, ValidationError
from .network import RoadNetwork
from .nn import init_mlp, mlp_forward, sample_action, softmax
from .ppo import ActorCritic, RolloutBuffer, ppo_update
from .scenario import (
    STREAM_POLICY,
    STREAM_TRAINING,
    ScenarioConfig,
    child_rng,
    generate_vehicles,
)
from .simulator import (
    PresenceReport,
    SimState,
    advance_window,
    reported_lane_counts,
)


def signal_obs_dim(network: RoadNetwork, iid: str) -> int:
    own = len(network.incoming_lanes(iid))
    phases = len(network.intersection(iid).phases)
    nbr = sum(len(network.incoming_lanes(j)) for j in network.neighbors(iid))
    return own + phases + nbr


def _assemble(network: RoadNetwork, iid: str, counts_of, phase_idx: int, alpha: float) -> np.ndarray:
    inter = network.intersection(iid)
    phase_onehot = np.zeros(len(inter.phases))
    phase_onehot[phase_idx] = 1.0
    parts = [counts_of(iid).astype(np.float64), phase_onehot]
    for j in network.neighbors(iid):
        parts.append(alpha * counts_of(j).astype(np.float64))
    return np.concatenate(parts)


def signal_observe(
    state: SimState, iid: str, reports: list[PresenceReport], alpha: float
) -> np.ndarray:
    """[own reported counts | phase one-hot | alpha * neighbor counts]."""
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha must be in [0,1], got {alpha}")
    cache: dict[str, np.ndarray] = {}

    def counts_of(j):
        if j not in cache:
            cache[j] = reported_lane_counts(state, j, reports)
        return cache[j]

    return _assemble(state.network, iid, counts_of, state.phase[iid], alpha)


def all_signal_observations(
    state: SimState, reports: list[PresenceReport], alpha: float
) -> dict[str, np.ndarray]:
    """Observations for every intersection, computing each count vector once."""
    net = state.network
    counts = {i.id: reported_lane_counts(state, i.id, reports) for i in net.intersections}
    return {
        i.id: _assemble(net, i.id, counts.__getitem__, state.phase[i.id], alpha)
        for i in net.intersections
    }


def _obs_scale(network: RoadNetwork, iid: str, count_scale: float) -> np.ndarray:
    """Fixed input conditioning: count entries shrunk, phase one-hot intact."""
    own = len(network.incoming_lanes(iid))
    phases = len(network.intersection(iid).phases)
    nbr = sum(len(network.incoming_lanes(j)) for j in network.neighbors(iid))
    scale = np.full(own + phases + nbr, count_scale)
    scale[own : own + phases] = 1.0
    return scale


@dataclass
class SignalAgent:
    intersection_id: str
    nets: ActorCritic
    scale: np.ndarray


class SignalPolicySet:
    """All intersection policies plus the spatial discount they were built with."""

    def __init__(self, network: RoadNetwork, agents: dict[str, SignalAgent],
                 alpha: float, count_scale: float):
        self.network = network
        self.agents = agents
        self.alpha = alpha
        self.count_scale = count_scale
        self.frozen = False

    def freeze(self) -> None:
        for agent in self.agents.values():
            agent.nets.actor.params.setflags(write=False)
            agent.nets.critic.params.setflags(write=False)
        self.frozen = True


def new_signal_policy(
    network: RoadNetwork, alpha: float, count_scale: float, hidden: int,
    rng: np.random.Generator,
) -> SignalPolicySet:
    agents = {}
    for inter in network.intersections:
        dim = signal_obs_dim(network, inter.id)
        actor = init_mlp((dim, hidden, len(inter.phases)), rng, out_gain=0.01)
        critic = init_mlp((dim, hidden, 1), rng)
        agents[inter.id] = SignalAgent(
            inter.id, ActorCritic(actor, critic), _obs_scale(network, inter.id, count_scale)
        )
    return SignalPolicySet(network, agents, alpha, count_scale)


def signal_act(
    policy: SignalPolicySet, iid: str, obs: np.ndarray,
    mode: str = "deterministic", rng: np.random.Generator | None = None,
) -> int:
    agent = policy.agents[iid]
    logits = mlp_forward(agent.nets.actor, obs * agent.scale)
    if mode == "deterministic":
        return int(np.argmax(logits))
    if mode == "stochastic":
        if rng is None:
            raise ValidationError("stochastic mode needs an rng")
        idx, _ = sample_action(softmax(logits), rng)
        return idx
    raise ValidationError(f"unknown mode {mode!r}")


def make_controller(policy: SignalPolicySet, stochastic: bool = False,
                    rng: np.random.Generator | None = None):
    """Black-box closure (state, reports, window) -> green assignment."""
    mode = "stochastic" if stochastic else "deterministic"

    def controller(state: SimState, reports: list[PresenceReport], window: int) -> dict[str, int]:
        obs = all_signal_observations(state, reports, policy.alpha)
        return {iid: signal_act(policy, iid, o, mode, rng) for iid, o in obs.items()}

    return controller


def fixed_time_controller(network: RoadNetwork):
    """Round-robin baseline: phase index cycles every decision window."""

    def controller(state: SimState, reports: list[PresenceReport], window: int) -> dict[str, int]:
        return {i.id: window % len(i.phases) for i in network.intersections}

    return controller


def train_atcs(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    seed: int | None = None,
    on_episode=None,
) -> tuple[SignalPolicySet, list[tuple[int, float]]]:
    """Train per-intersection policies on honest traffic, freeze, return.

    Traffic demand is redrawn each episode (from the training stream) so the
    frozen controller generalizes across route realizations.
    """
    tc = cfg.atcs
    base_seed = tc.seed if seed is None else seed
    rng = child_rng(base_seed, STREAM_TRAINING)
    policy = new_signal_policy(
        network, cfg.alpha, cfg.count_scale, tc.hidden, child_rng(base_seed, STREAM_POLICY)
    )
    ppo_cfg = tc.ppo
    buffers = {i.id: RolloutBuffer() for i in network.intersections}
    sim_cfg = cfg.sim_config()
    curve: list[tuple[int, float]] = []

    for ep in range(tc.episodes):
        route_seed = int(rng.integers(2**31))
        vehicles = generate_vehicles(network, cfg, route_seed)
        state = SimState(network, vehicles, route_seed)
        ep_reward = {i.id: 0.0 for i in network.intersections}
        n_windows = cfg.n_windows
        for w in range(n_windows):
            obs = all_signal_observations(state, [], cfg.alpha)
            green = {}
            cache = {}
            for iid, o in obs.items():
                agent = policy.agents[iid]
                scaled = o * agent.scale
                logits = mlp_forward(agent.nets.actor, scaled)
                a, logp = sample_action(softmax(logits), rng)
                value = float(mlp_forward(agent.nets.critic, scaled)[0])
                green[iid] = a
                cache[iid] = (scaled, a, logp, value)
            before = dict(state.lane_wait_total)
            advance_window(state, green, cfg.tau, sim_cfg)
            deltas = {
                i.id: sum(
                    state.lane_wait_total[l] - before[l] for l in network.incoming_lanes(i.id)
                )
                for i in network.intersections
            }
            for iid, (scaled, a, logp, value) in cache.items():
                r = -(deltas[iid] + cfg.alpha * sum(deltas[j] for j in network.neighbors(iid)))
                ep_reward[iid] += r
                buffers[iid].add(scaled, a, logp, r * ppo_cfg.reward_scale, value,
                                 done=(w == n_windows - 1))
        curve.append((ep, float(np.mean(list(ep_reward.values())))))
        if on_episode:
            on_episode(ep, curve[-1][1])
        if (ep + 1) % tc.rollout_episodes == 0:
            for iid, buf in buffers.items():
                agent = policy.agents[iid]
                try:
                    ppo_update(agent.nets, buf, ppo_cfg, rng)
                except TrainingDiverged as e:
                    e.diagnostics["intersection"] = iid
                    e.diagnostics["episode"] = ep
                    raise
                buf.clear()

    policy.freeze()
    return policy, curve


def save_atcs(policy: SignalPolicySet, dirpath: str) -> None:
    os.makedirs(dirpath, exist_ok=True)
    for iid, agent in policy.agents.items():
        meta = {
            "kind": "signal-policy",
            "intersection": iid,
            "alpha": repr(policy.alpha),
            "count_scale": repr(policy.count_scale),
        }
        save_checkpoint(
            os.path.join(dirpath, f"atcs_{iid}.ckpt"),
            {"actor": agent.nets.actor, "critic": agent.nets.critic},
            meta,
        )


def load_atcs(dirpath: str, network: RoadNetwork) -> SignalPolicySet:
    agents = {}
    alpha = None
    count_scale = None
    for inter in network.intersections:
        path = os.path.join(dirpath, f"atcs_{inter.id}.ckpt")
        nets, meta = load_checkpoint(path)
        if meta.get("kind") != "signal-policy" or meta.get("intersection") != inter.id:
            raise CheckpointError(f"{path}: not a signal policy for {inter.id!r}")
        if "actor" not in nets or "critic" not in nets:
            raise CheckpointError(f"{path}: missing actor/critic nets")
        alpha = float(meta["alpha"])
        count_scale = float(meta["count_scale"])
        dim = signal_obs_dim(network, inter.id)
        if nets["actor"].in_dim != dim or nets["actor"].out_dim != len(inter.phases):
            raise CheckpointError(
                f"{path}: actor dims {nets['actor'].layer_sizes} do not match "
                f"intersection {inter.id!r} (obs {dim}, phases {len(inter.phases)})"
            )
        agents[inter.id] = SignalAgent(
            inter.id,
            ActorCritic(nets["actor"], nets["critic"]),
            _obs_scale(network, inter.id, count_scale),
        )
    policy = SignalPolicySet(network, agents, alpha, count_scale)
    policy.freeze()
    return policy
