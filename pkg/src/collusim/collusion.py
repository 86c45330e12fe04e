"""The learned vehicle-collusion framework.

Each colluding vehicle observes [time one-hot | upcoming-intersection
one-hot | per-lane vehicle counts | per-lane colluder counts], encodes the
four blocks with shared single-layer branch encoders into a 64-d embedding,
interprets it with a private network into a 64-d policy vector, pools the
policy vectors of colluders headed to the same intersection through a
shared message network (16-d), and feeds [plcy | msg] to a private trunk
whose last layer splits into action logits (reported count 0..A_max) and a
value estimate.

Training is on-policy: every decision window all running colluders act, the
frozen signal controller reacts to the falsified counts, and the shared
team reward is the negative mean waiting increment over the acting agents.
The update backpropagates each agent's surrogate/value/entropy loss through
its private nets and sums gradients from all agents into the shared
encoder and message parameters.

The controller is only ever a callable here; this module has no knowledge
of the signal-policy types.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, TrainingDiverged, ValidationError
from .network import RoadNetwork
from .nn import Adam, Array, Mlp, init_mlp, log_softmax, mlp_forward, mlp_grad, sample_action, softmax
from .ppo import normalize_batch, policy_grad_terms
from .scenario import STREAM_TRAINING, ScenarioConfig, child_rng, materialize_vehicles
from .simulator import (
    PresenceReport,
    SimState,
    Vehicle,
    advance_window,
    true_colluding_counts,
    true_lane_counts,
)

BRANCHES = ("time", "loc", "veh", "col")
BRANCH_OUT = 16
EMB_DIM = 4 * BRANCH_OUT
PLCY_DIM = 64
MSG_DIM = 16
HEAD_HIDDEN = 32
ARCHS = ("private", "no-st", "no-comm", "full")


@dataclass(frozen=True)
class ObsLayout:
    """Fixed observation dimensions for one scenario."""

    k: int
    interval_len: int
    intersections: tuple[str, ...]
    max_lanes: int

    @classmethod
    def from_network(cls, network: RoadNetwork, cfg: ScenarioConfig) -> "ObsLayout":
        return cls(
            k=cfg.k_intervals,
            interval_len=cfg.episode_len // cfg.k_intervals,
            intersections=tuple(i.id for i in network.intersections),
            max_lanes=network.max_approach_count(),
        )

    @property
    def dims(self) -> dict[str, int]:
        return {
            "time": self.k,
            "loc": len(self.intersections),
            "veh": self.max_lanes,
            "col": self.max_lanes,
        }

    def intersection_index(self, iid: str) -> int:
        return self.intersections.index(iid)


@dataclass
class CollusionObservation:
    """The four-block observation of one colluding vehicle."""

    o_t: Array
    o_l: Array
    o_v: Array
    o_c: Array

    def vector(self) -> Array:
        return np.concatenate([self.o_t, self.o_l, self.o_v, self.o_c])


def observe_vehicle(state: SimState, layout: ObsLayout, vehicle: Vehicle) -> CollusionObservation:
    """Assemble the raw observation for a running colluding vehicle."""
    if not vehicle.running:
        raise ValidationError(
            f"vehicle {vehicle.id} is not running (departed={vehicle.departed}, "
            f"done={vehicle.done_step})"
        )
    o_t = np.zeros(layout.k)
    o_t[min(state.clock // layout.interval_len, layout.k - 1)] = 1.0
    upcoming = vehicle.upcoming_intersection(state.network)
    o_l = np.zeros(len(layout.intersections))
    o_l[layout.intersection_index(upcoming)] = 1.0
    o_v = np.zeros(layout.max_lanes)
    o_c = np.zeros(layout.max_lanes)
    veh = true_lane_counts(state, upcoming)
    col = true_colluding_counts(state, upcoming)
    o_v[: len(veh)] = veh
    o_c[: len(col)] = col
    return CollusionObservation(o_t, o_l, o_v, o_c)


def road_enc(shared: dict[str, Mlp], obs: CollusionObservation) -> Array:
    """Concatenated four-branch encoding of one observation (64-d)."""
    return np.concatenate(
        [
            mlp_forward(shared["time"], obs.o_t),
            mlp_forward(shared["loc"], obs.o_l),
            mlp_forward(shared["veh"], obs.o_v),
            mlp_forward(shared["col"], obs.o_c),
        ]
    )


def veh_int(agent_net: Mlp, emb: Array) -> Array:
    """Agent-specific interpretation of the shared embedding (64-d)."""
    return mlp_forward(agent_net, emb)


def comm_mech(shared: Mlp, neighbor_plcys: list[Array]) -> Array:
    """Message from the mean of neighboring policy vectors (16-d)."""
    if not neighbor_plcys:
        raise ValidationError("comm_mech needs a nonempty neighbor set")
    mean = np.mean(np.stack(neighbor_plcys), axis=0)
    return mlp_forward(shared, mean)


@dataclass
class AgentNets:
    veh_int: Mlp
    head: Mlp
    enc: dict[str, Mlp] | None = None  # private branch encoders ("private" arch)


class CollusionModel:
    """Shared + per-agent networks for one collusion group."""

    def __init__(
        self,
        layout: ObsLayout,
        agent_ids: list[int],
        a_max: int,
        arch: str,
        count_scale: float,
        rng: np.random.Generator,
    ):
        if arch not in ARCHS:
            raise ValidationError(f"unknown arch {arch!r}; expected one of {ARCHS}")
        self.layout = layout
        self.a_max = int(a_max)
        self.arch = arch
        self.count_scale = count_scale
        self.n_actions = self.a_max + 1
        dims = layout.dims

        def make_enc(r):
            return {b: init_mlp((dims[b], BRANCH_OUT), r) for b in BRANCHES}

        self.shared_enc = make_enc(rng) if arch != "private" else None
        self.comm = init_mlp((PLCY_DIM, MSG_DIM), rng) if arch == "full" else None
        head_in = PLCY_DIM + (MSG_DIM if self.comm is not None else 0)
        self.agents: dict[int, AgentNets] = {}
        for aid in sorted(agent_ids):
            enc = make_enc(rng) if arch == "private" else None
            vi = init_mlp((EMB_DIM, PLCY_DIM), rng)
            head = init_mlp((head_in, HEAD_HIDDEN, self.n_actions + 1), rng)
            w_last, _ = head.weights()[-1]
            w_last[: self.n_actions] *= 0.01  # small policy head, unit value head
            self.agents[aid] = AgentNets(vi, head, enc)
        self.opts: dict[str, Adam] = {}

    @property
    def head_in_dim(self) -> int:
        return PLCY_DIM + (MSG_DIM if self.comm is not None else 0)

    @property
    def uses_comm(self) -> bool:
        return self.comm is not None

    @property
    def mask_spatiotemporal(self) -> bool:
        return self.arch == "no-st"

    def encoders_for(self, aid: int) -> dict[str, Mlp]:
        return self.shared_enc if self.shared_enc is not None else self.agents[aid].enc

    def param_vectors(self) -> dict[str, Array]:
        out: dict[str, Array] = {}
        if self.shared_enc is not None:
            for b in BRANCHES:
                out[f"enc_{b}"] = self.shared_enc[b].params
        if self.comm is not None:
            out["comm"] = self.comm.params
        for aid, nets in self.agents.items():
            out[f"veh_int:{aid}"] = nets.veh_int.params
            out[f"head:{aid}"] = nets.head.params
            if nets.enc is not None:
                for b in BRANCHES:
                    out[f"enc_{b}:{aid}"] = nets.enc[b].params
        return out

    def opt_for(self, key: str, lr: float) -> Adam:
        if key not in self.opts:
            self.opts[key] = Adam(lr=lr)
        opt = self.opts[key]
        opt.lr = lr
        return opt

    def prepare(self, obs: CollusionObservation) -> CollusionObservation:
        """Model-side preprocessing: scale count blocks, mask o_T/o_L for
        the spatio-temporal ablation. Raw observations stay untouched."""
        zero = self.mask_spatiotemporal
        return CollusionObservation(
            np.zeros_like(obs.o_t) if zero else obs.o_t.copy(),
            np.zeros_like(obs.o_l) if zero else obs.o_l.copy(),
            obs.o_v * self.count_scale,
            obs.o_c * self.count_scale,
        )


def act(
    agent: AgentNets,
    plcy: Array,
    msg: Array | None,
    rng: np.random.Generator | None,
    mode: str = "train",
) -> tuple[int, float, float]:
    """Head forward on [plcy | msg]: sampled (train) or argmax (eval)
    action with its log-probability, plus the value estimate."""
    head_in = plcy if msg is None else np.concatenate([plcy, msg])
    out = mlp_forward(agent.head, head_in)
    logits, value = out[:-1], float(out[-1])
    if mode == "eval":
        action = int(np.argmax(logits))
        logp = float(log_softmax(logits)[action])
    elif mode == "train":
        if rng is None:
            raise ValidationError("train mode needs an rng")
        action, logp = sample_action(softmax(logits), rng)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    return action, logp, value


def compute_reward(
    waits_now: dict[int, int], waits_prev: dict[int, int], running: list[int]
) -> float:
    """Team reward: negative mean waiting increment over the acting agents."""
    if not running:
        return 0.0
    total = sum(waits_now[a] - waits_prev[a] for a in running)
    return -total / len(running)


# ---------------------------------------------------------------------------
# joint forward/backward over decision instants


@dataclass
class InstantData:
    """All acting agents of one decision instant (prepared observations)."""

    agent_ids: list[int]
    upcoming: list[str]
    obs: dict[str, Array]  # branch name -> (m, dim)
    actions: Array
    logps: Array
    values: Array
    reward: float
    dones: Array


def decide(
    model: CollusionModel,
    state: SimState,
    running: list[int],
    mode: str,
    rng: np.random.Generator | None,
) -> tuple[list[int], Array, Array, Array, list[str], dict[str, Array]]:
    """Joint forward for all running colluders at one decision boundary."""
    layout = model.layout
    rows = []
    upcoming = []
    for aid in running:
        v = state.vehicles[aid]
        rows.append(model.prepare(observe_vehicle(state, layout, v)))
        upcoming.append(v.upcoming_intersection(state.network))
    obs_mats = {
        "time": np.stack([r.o_t for r in rows]),
        "loc": np.stack([r.o_l for r in rows]),
        "veh": np.stack([r.o_v for r in rows]),
        "col": np.stack([r.o_c for r in rows]),
    }
    m = len(running)
    emb = np.empty((m, EMB_DIM))
    if model.shared_enc is not None:
        off = 0
        for b in BRANCHES:
            emb[:, off : off + BRANCH_OUT] = mlp_forward(model.shared_enc[b], obs_mats[b])
            off += BRANCH_OUT
    else:
        for i, aid in enumerate(running):
            enc = model.agents[aid].enc
            off = 0
            for b in BRANCHES:
                emb[i, off : off + BRANCH_OUT] = mlp_forward(enc[b], obs_mats[b][i])
                off += BRANCH_OUT
    plcy = np.empty((m, PLCY_DIM))
    for i, aid in enumerate(running):
        plcy[i] = mlp_forward(model.agents[aid].veh_int, emb[i])
    msgs: Array | None = None
    if model.uses_comm:
        nbr_mean = _neighbor_means(plcy, list(range(m)), upcoming)
        msgs = mlp_forward(model.comm, nbr_mean)
    actions = np.empty(m, dtype=np.int64)
    logps = np.empty(m)
    values = np.empty(m)
    for i, aid in enumerate(running):
        a, lp, val = act(model.agents[aid], plcy[i], None if msgs is None else msgs[i], rng, mode)
        actions[i], logps[i], values[i] = a, lp, val
    return running, actions, logps, values, upcoming, obs_mats


def _neighbor_means(plcy: Array, idx: list[int], upcoming: list[str]) -> Array:
    """Mean of the *other* group members' plcy vectors; self when alone."""
    out = np.empty((len(idx), PLCY_DIM))
    groups: dict[str, list[int]] = {}
    for pos, i in enumerate(idx):
        groups.setdefault(upcoming[pos], []).append(pos)
    for members in groups.values():
        if len(members) == 1:
            out[members[0]] = plcy[members[0]]
        else:
            total = plcy[members].sum(axis=0)
            for pos in members:
                out[pos] = (total - plcy[pos]) / (len(members) - 1)
    return out


@dataclass
class _FlatBatch:
    """Rows of several instants flattened for one minibatch pass."""

    aids: list[int]
    group_keys: list[tuple[int, str]]
    obs: dict[str, Array]
    actions: Array
    logp_old: Array
    adv: Array
    ret: Array

    @property
    def size(self) -> int:
        return len(self.aids)

    def rows_by_agent(self) -> dict[int, np.ndarray]:
        by: dict[int, list[int]] = {}
        for i, aid in enumerate(self.aids):
            by.setdefault(aid, []).append(i)
        return {aid: np.array(ix) for aid, ix in sorted(by.items())}


def _flatten(instants: list[InstantData], order: list[int], adv: list[Array], ret: list[Array]) -> _FlatBatch:
    aids: list[int] = []
    keys: list[tuple[int, str]] = []
    obs = {b: [] for b in BRANCHES}
    actions, logp, a_rows, r_rows = [], [], [], []
    for pos in order:
        inst = instants[pos]
        aids.extend(inst.agent_ids)
        keys.extend((pos, up) for up in inst.upcoming)
        for b in BRANCHES:
            obs[b].append(inst.obs[b])
        actions.append(inst.actions)
        logp.append(inst.logps)
        a_rows.append(adv[pos])
        r_rows.append(ret[pos])
    return _FlatBatch(
        aids=aids,
        group_keys=keys,
        obs={b: np.concatenate(obs[b]) for b in BRANCHES},
        actions=np.concatenate(actions),
        logp_old=np.concatenate(logp),
        adv=np.concatenate(a_rows),
        ret=np.concatenate(r_rows),
    )


def batch_pass(
    model: CollusionModel,
    fb: _FlatBatch,
    clip_eps: float,
    entropy_coef: float,
    value_coef: float,
    want_grads: bool = True,
) -> tuple[float, dict[str, Array] | None, dict]:
    """Loss (and exact gradients) of one minibatch through the full pipeline."""
    r_total = fb.size
    by_agent = fb.rows_by_agent()

    emb = np.empty((r_total, EMB_DIM))
    if model.shared_enc is not None:
        off = 0
        for b in BRANCHES:
            emb[:, off : off + BRANCH_OUT] = mlp_forward(model.shared_enc[b], fb.obs[b])
            off += BRANCH_OUT
    else:
        for aid, idx in by_agent.items():
            enc = model.agents[aid].enc
            off = 0
            for b in BRANCHES:
                emb[np.ix_(idx, range(off, off + BRANCH_OUT))] = mlp_forward(enc[b], fb.obs[b][idx])
                off += BRANCH_OUT

    plcy = np.empty((r_total, PLCY_DIM))
    for aid, idx in by_agent.items():
        plcy[idx] = mlp_forward(model.agents[aid].veh_int, emb[idx])

    groups: dict[tuple[int, str], list[int]] = {}
    for i, key in enumerate(fb.group_keys):
        groups.setdefault(key, []).append(i)

    if model.uses_comm:
        nbr_mean = np.empty_like(plcy)
        for members in groups.values():
            if len(members) == 1:
                nbr_mean[members[0]] = plcy[members[0]]
            else:
                total = plcy[members].sum(axis=0)
                for pos in members:
                    nbr_mean[pos] = (total - plcy[pos]) / (len(members) - 1)
        msg = mlp_forward(model.comm, nbr_mean)
        head_in = np.concatenate([plcy, msg], axis=1)
    else:
        nbr_mean = None
        head_in = plcy

    n_act = model.n_actions
    out = np.empty((r_total, n_act + 1))
    for aid, idx in by_agent.items():
        out[idx] = mlp_forward(model.agents[aid].head, head_in[idx])
    logits = out[:, :n_act]
    values = out[:, n_act]

    dlogits, pstats = policy_grad_terms(
        logits, fb.actions, fb.logp_old, fb.adv, clip_eps, entropy_coef
    )
    verr = values - fb.ret
    vloss = float(np.mean(verr**2))
    loss = -pstats["surrogate_mean"] - entropy_coef * pstats["entropy_mean"] + value_coef * vloss
    stats = dict(pstats, value_loss=vloss, loss=loss)
    if not want_grads:
        return loss, None, stats

    grads: dict[str, Array] = {}
    d_out = np.zeros((r_total, n_act + 1))
    d_out[:, :n_act] = -dlogits / r_total
    d_out[:, n_act] = value_coef * 2.0 * verr / r_total
    d_headin = np.empty_like(head_in)
    for aid, idx in by_agent.items():
        g, dx = mlp_grad(model.agents[aid].head, head_in[idx], d_out[idx])
        grads[f"head:{aid}"] = g
        d_headin[idx] = dx
    d_plcy = d_headin[:, :PLCY_DIM].copy()
    if model.uses_comm:
        d_msg = d_headin[:, PLCY_DIM:]
        g_comm, d_nm = mlp_grad(model.comm, nbr_mean, d_msg)
        grads["comm"] = g_comm
        for members in groups.values():
            if len(members) == 1:
                d_plcy[members[0]] += d_nm[members[0]]
            else:
                total = d_nm[members].sum(axis=0)
                for pos in members:
                    d_plcy[pos] += (total - d_nm[pos]) / (len(members) - 1)
    d_emb = np.empty((r_total, EMB_DIM))
    for aid, idx in by_agent.items():
        g, dx = mlp_grad(model.agents[aid].veh_int, emb[idx], d_plcy[idx])
        grads[f"veh_int:{aid}"] = g
        d_emb[idx] = dx
    if model.shared_enc is not None:
        off = 0
        for b in BRANCHES:
            g, _ = mlp_grad(model.shared_enc[b], fb.obs[b], d_emb[:, off : off + BRANCH_OUT])
            grads[f"enc_{b}"] = g
            off += BRANCH_OUT
    else:
        for aid, idx in by_agent.items():
            enc = model.agents[aid].enc
            off = 0
            for b in BRANCHES:
                g, _ = mlp_grad(enc[b], fb.obs[b][idx], d_emb[np.ix_(idx, range(off, off + BRANCH_OUT))])
                grads[f"enc_{b}:{aid}"] = g
                off += BRANCH_OUT
    return loss, grads, stats


def _per_row_returns(instants: list[InstantData], gamma: float) -> tuple[list[Array], list[Array]]:
    """Per-agent discounted returns threaded through the instant structure."""
    returns = [np.zeros(len(inst.agent_ids)) for inst in instants]
    acc: dict[int, float] = {}
    for pos in range(len(instants) - 1, -1, -1):
        inst = instants[pos]
        for slot, aid in enumerate(inst.agent_ids):
            g = 0.0 if inst.dones[slot] else acc.get(aid, 0.0)
            g = inst.reward + gamma * g
            acc[aid] = g
            returns[pos][slot] = g
    advantages = [ret - inst.values for ret, inst in zip(returns, instants)]
    return advantages, returns


def update_model(
    model: CollusionModel,
    instants: list[InstantData],
    ppo_cfg,
    rng: np.random.Generator,
    lr: float | None = None,
    entropy_coef: float | None = None,
) -> dict:
    """One PPO update over collected instants; shared nets receive the
    summed gradients of every agent, private nets only their own."""
    if not instants:
        raise ValidationError("no decision instants collected")
    lr = ppo_cfg.lr if lr is None else lr
    entropy_coef = ppo_cfg.entropy_coef if entropy_coef is None else entropy_coef
    adv, ret = _per_row_returns(instants, ppo_cfg.gamma)
    if ppo_cfg.normalize_advantages:
        flat = np.concatenate(adv)
        norm = normalize_batch(flat)
        adv = []
        off = 0
        for r in ret:
            adv.append(norm[off : off + len(r)])
            off += len(r)
    n = len(instants)
    agg: dict[str, float] = {}
    passes = 0
    for _ in range(ppo_cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, ppo_cfg.minibatch_size):
            order = [int(i) for i in perm[start : start + ppo_cfg.minibatch_size]]
            fb = _flatten(instants, order, adv, ret)
            if fb.size == 0:
                continue
            loss, grads, stats = batch_pass(
                model, fb, ppo_cfg.clip_eps, entropy_coef, ppo_cfg.value_coef
            )
            if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged("non-finite loss in collusion update", {"loss": loss})
            vectors = model.param_vectors()
            for key, g in grads.items():
                model.opt_for(key, lr).step(vectors[key], g)
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            passes += 1
    return {k: v / passes for k, v in agg.items()}


# ---------------------------------------------------------------------------
# training loop


def fresh_vehicles(template: list[Vehicle]) -> list[Vehicle]:
    return [
        Vehicle(v.id, v.route, v.depart_step, is_colluding=v.is_colluding) for v in template
    ]


def build_reports(state: SimState, running: list[int], actions, a_max: int) -> list[PresenceReport]:
    """Falsified reports for acting colluders currently on an approach lane.

    With a_max == 0 falsification is impossible and no reports are sent:
    vehicles fall back to the honest default of counting as one.
    """
    if a_max == 0:
        return []
    reports = []
    for aid, action in zip(running, actions):
        lane = state.vehicles[aid].current_lane
        if lane is not None:
            reports.append(PresenceReport(aid, lane, int(action)))
    return reports


def train_collusion(
    network: RoadNetwork,
    cfg: ScenarioConfig,
    controller,
    seed: int,
    arch: str = "full",
    collusion_size: int | None = None,
    a_max: int | None = None,
    episodes: int | None = None,
    ckpt_dir: str | None = None,
    on_episode=None,
) -> tuple[CollusionModel, list[tuple[int, float]]]:
    """Train the collusion group against a frozen controller callable."""
    tc = cfg.attack
    ppo_cfg = tc.ppo
    cap = cfg.a_max if a_max is None else int(a_max)
    n_episodes = tc.episodes if episodes is None else int(episodes)
    template = materialize_vehicles(network, cfg, seed, collusion_size)
    agent_ids = [v.id for v in template if v.is_colluding]
    layout = ObsLayout.from_network(network, cfg)
    rng = child_rng(seed, STREAM_TRAINING)
    model = CollusionModel(layout, agent_ids, cap, arch, cfg.count_scale, rng)
    sim_cfg = cfg.sim_config()
    curve: list[tuple[int, float]] = []
    instants: list[InstantData] = []

    for ep in range(n_episodes):
        state = SimState(network, fresh_vehicles(template), seed)
        last_row: dict[int, tuple[int, int]] = {}
        ep_reward = 0.0
        for w in range(cfg.n_windows):
            running = state.running_colluders()
            inst = None
            if running:
                _, actions, logps, values, upcoming, obs_mats = decide(
                    model, state, running, "train", rng
                )
                reports = build_reports(state, running, actions, cap)
                inst = InstantData(
                    agent_ids=list(running),
                    upcoming=upcoming,
                    obs=obs_mats,
                    actions=actions,
                    logps=logps,
                    values=values,
                    reward=0.0,
                    dones=np.zeros(len(running), dtype=bool),
                )
            else:
                reports = []
            green = controller(state, reports, w)
            prev = state.colluder_waits()
            advance_window(state, green, cfg.tau, sim_cfg)
            r = compute_reward(state.colluder_waits(), prev, running)
            ep_reward += r
            if inst is not None:
                inst.reward = r * ppo_cfg.reward_scale
                instants.append(inst)
                pos = len(instants) - 1
                for slot, aid in enumerate(running):
                    last_row[aid] = (pos, slot)
        for aid, (pos, slot) in last_row.items():
            instants[pos].dones[slot] = True
        curve.append((ep, ep_reward))
        if on_episode:
            on_episode(ep, ep_reward)
        if (ep + 1) % tc.rollout_episodes == 0 and instants:
            lr, ent = ppo_cfg.at_progress(ep / max(n_episodes - 1, 1))
            try:
                update_model(model, instants, ppo_cfg, rng, lr=lr, entropy_coef=ent)
            except TrainingDiverged as e:
                e.diagnostics["episode"] = ep
                raise
            instants = []
        if ckpt_dir and tc.ckpt_every and (ep + 1) % tc.ckpt_every == 0:
            save_collusion(model, ckpt_dir)
    if ckpt_dir:
        save_collusion(model, ckpt_dir)
    return model, curve


def model_reporter(model: CollusionModel):
    """Deterministic eval-mode reporter closure for `run_episode`."""

    def reporter(state: SimState, window: int) -> list[PresenceReport]:
        running = [aid for aid in state.running_colluders() if aid in model.agents]
        if not running:
            return []
        _, actions, _, _, _, _ = decide(model, state, running, "eval", None)
        return build_reports(state, running, actions, model.a_max)

    return reporter


# ---------------------------------------------------------------------------
# checkpoints

_AGENT_FILE = re.compile(r"^agent_(\d+)\.ckpt$")


def _model_meta(model: CollusionModel) -> dict[str, str]:
    return {
        "kind": "collusion",
        "arch": model.arch,
        "a_max": str(model.a_max),
        "count_scale": repr(model.count_scale),
        "k": str(model.layout.k),
        "interval_len": str(model.layout.interval_len),
        "n_intersections": str(len(model.layout.intersections)),
        "max_lanes": str(model.layout.max_lanes),
    }


def save_collusion(model: CollusionModel, dirpath: str) -> None:
    os.makedirs(dirpath, exist_ok=True)
    meta = _model_meta(model)
    if model.shared_enc is not None:
        save_checkpoint(
            os.path.join(dirpath, "roadenc.ckpt"),
            {f"enc_{b}": model.shared_enc[b] for b in BRANCHES},
            meta,
        )
    if model.comm is not None:
        save_checkpoint(os.path.join(dirpath, "commmech.ckpt"), {"comm": model.comm}, meta)
    for aid, nets in model.agents.items():
        payload = {"veh_int": nets.veh_int, "head": nets.head}
        if nets.enc is not None:
            payload.update({f"enc_{b}": nets.enc[b] for b in BRANCHES})
        save_checkpoint(
            os.path.join(dirpath, f"agent_{aid}.ckpt"), payload, dict(meta, agent=str(aid))
        )


def load_collusion(dirpath: str, layout: ObsLayout) -> CollusionModel:
    if not os.path.isdir(dirpath):
        raise CheckpointError(f"{dirpath}: not a checkpoint directory")
    agent_files = sorted(
        (int(m.group(1)), os.path.join(dirpath, f))
        for f in os.listdir(dirpath)
        if (m := _AGENT_FILE.match(f))
    )
    if not agent_files:
        raise CheckpointError(f"{dirpath}: no agent checkpoints found")
    _, first_path = agent_files[0]
    _, meta = load_checkpoint(first_path)
    if meta.get("kind") != "collusion":
        raise CheckpointError(f"{first_path}: not a collusion checkpoint")
    arch = meta["arch"]
    expected = {
        "k": str(layout.k),
        "n_intersections": str(len(layout.intersections)),
        "max_lanes": str(layout.max_lanes),
    }
    for key, want in expected.items():
        if meta.get(key) != want:
            raise CheckpointError(
                f"{first_path}: layout mismatch on {key}: checkpoint {meta.get(key)}, scenario {want}"
            )
    model = CollusionModel(
        layout,
        [aid for aid, _ in agent_files],
        int(meta["a_max"]),
        arch,
        float(meta["count_scale"]),
        np.random.default_rng(0),
    )
    if model.shared_enc is not None:
        nets, _ = load_checkpoint(os.path.join(dirpath, "roadenc.ckpt"))
        for b in BRANCHES:
            model.shared_enc[b] = nets[f"enc_{b}"]
    if model.comm is not None:
        nets, _ = load_checkpoint(os.path.join(dirpath, "commmech.ckpt"))
        model.comm = nets["comm"]
    for aid, path in agent_files:
        nets, _ = load_checkpoint(path)
        target = model.agents[aid]
        if nets["veh_int"].layer_sizes != target.veh_int.layer_sizes:
            raise CheckpointError(f"{path}: veh_int manifest mismatch")
        if nets["head"].layer_sizes != target.head.layer_sizes:
            raise CheckpointError(f"{path}: head manifest mismatch")
        target.veh_int = nets["veh_int"]
        target.head = nets["head"]
        if target.enc is not None:
            for b in BRANCHES:
                target.enc[b] = nets[f"enc_{b}"]
    return model
