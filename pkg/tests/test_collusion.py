"""Collusion observation, model components, reward, gradients, training."""

import numpy as np
import pytest

from collusim.collusion import (
    BRANCHES,
    CollusionModel,
    CollusionObservation,
    InstantData,
    ObsLayout,
    act,
    batch_pass,
    build_reports,
    comm_mech,
    compute_reward,
    decide,
    load_collusion,
    model_reporter,
    observe_vehicle,
    road_enc,
    save_collusion,
    train_collusion,
    update_model,
    veh_int,
)
from collusim.errors import ValidationError
from collusim.nn import init_mlp, log_softmax, mlp_forward, softmax, zeros_mlp
from collusim.ppo import PpoConfig
from collusim.scenario import materialize_vehicles
from collusim.simulator import (
    SimConfig,
    SimState,
    Vehicle,
    step,
    true_colluding_counts,
    true_lane_counts,
)
from conftest import greedy_queue_controller

CFG = SimConfig()


def make_layout(k=6, iids=("A", "B"), max_lanes=3, interval=10):
    return ObsLayout(k=k, interval_len=interval, intersections=tuple(iids), max_lanes=max_lanes)


def running_state(tiny):
    """Advance random steps until at least one colluder is running."""
    net, cfg = tiny
    vs = materialize_vehicles(net, cfg, 0)
    state = SimState(net, vs)
    rng = np.random.default_rng(1)
    for _ in range(cfg.episode_len):
        green = {i.id: int(rng.integers(len(i.phases))) for i in net.intersections}
        step(state, green, CFG)
        if state.clock >= 8 and state.running_colluders():
            break
    assert state.running_colluders()
    return net, cfg, state


class TestObserveVehicle:
    def test_first_interval_onehot(self, tiny_scenario):
        net, cfg = tiny_scenario
        layout = ObsLayout.from_network(net, cfg)
        entry = net.entry_links()[0]
        v = Vehicle(0, (entry,), 0, is_colluding=True)
        state = SimState(net, [v])
        step(state, {i.id: 0 for i in net.intersections}, CFG)
        obs = observe_vehicle(state, layout, v)
        assert obs.o_t.tolist() == [1, 0, 0, 0, 0, 0]
        assert obs.o_t.sum() == 1 and obs.o_l.sum() == 1

    def test_alone_on_lane_self_included(self, tiny_scenario):
        net, cfg = tiny_scenario
        layout = ObsLayout.from_network(net, cfg)
        entry = net.entry_links()[0]
        dst = net.link(entry).dst
        red = next(
            pi for pi, phase in enumerate(net.intersection(dst).phases) if entry not in phase
        )
        v = Vehicle(0, (entry,), 0, is_colluding=True)
        state = SimState(net, [v])
        for _ in range(5):
            step(state, {i.id: (red if i.id == dst else 0) for i in net.intersections}, CFG)
        assert v.queued_lane == entry
        obs = observe_vehicle(state, layout, v)
        lane_pos = net.incoming_lanes(dst).index(entry)
        assert obs.o_v[lane_pos] == 1.0
        assert obs.o_c[lane_pos] == 1.0
        assert obs.o_l[layout.intersection_index(dst)] == 1.0

    def test_finished_agent_rejected(self, tiny_scenario):
        net, cfg = tiny_scenario
        layout = ObsLayout.from_network(net, cfg)
        v = Vehicle(0, (net.entry_links()[0],), 0)
        v.done_step = 5
        v.link_index = 0
        state = SimState(net, [v])
        with pytest.raises(ValidationError):
            observe_vehicle(state, layout, v)

    def test_matches_compositional_oracle(self, tiny_scenario):
        net, cfg, state = running_state(tiny_scenario)
        layout = ObsLayout.from_network(net, cfg)
        for v in state.vehicles.values():
            if not v.running:
                continue
            obs = observe_vehicle(state, layout, v)
            up = v.upcoming_intersection(net)
            k_idx = min(state.clock // layout.interval_len, layout.k - 1)
            assert obs.o_t[k_idx] == 1.0 and obs.o_t.sum() == 1.0
            assert obs.o_l[layout.intersection_index(up)] == 1.0
            veh = true_lane_counts(state, up)
            col = true_colluding_counts(state, up)
            assert np.array_equal(obs.o_v[: len(veh)], veh.astype(float))
            assert np.array_equal(obs.o_c[: len(col)], col.astype(float))
            assert not obs.o_v[len(veh):].any() and not obs.o_c[len(col):].any()


class TestRoadEnc:
    def rand_obs(self, layout, rng):
        return CollusionObservation(
            rng.standard_normal(layout.k),
            rng.standard_normal(len(layout.intersections)),
            rng.standard_normal(layout.max_lanes),
            rng.standard_normal(layout.max_lanes),
        )

    def test_zero_params_zero_vector(self):
        layout = make_layout()
        shared = {b: zeros_mlp((layout.dims[b], 16)) for b in BRANCHES}
        obs = self.rand_obs(layout, np.random.default_rng(0))
        assert not road_enc(shared, obs).any()

    def test_block_locality(self):
        layout = make_layout()
        rng = np.random.default_rng(1)
        shared = {b: init_mlp((layout.dims[b], 16), rng) for b in BRANCHES}
        obs = self.rand_obs(layout, rng)
        base = road_enc(shared, obs)
        obs2 = CollusionObservation(
            obs.o_t + rng.standard_normal(layout.k), obs.o_l, obs.o_v, obs.o_c
        )
        emb2 = road_enc(shared, obs2)
        assert not np.array_equal(emb2[:16], base[:16])
        assert np.array_equal(emb2[16:], base[16:])

    def test_matches_four_oracle_forwards(self):
        layout = make_layout()
        rng = np.random.default_rng(2)
        shared = {b: init_mlp((layout.dims[b], 16), rng) for b in BRANCHES}
        obs = self.rand_obs(layout, rng)
        got = road_enc(shared, obs)
        want = np.concatenate(
            [
                mlp_forward(shared["time"], obs.o_t),
                mlp_forward(shared["loc"], obs.o_l),
                mlp_forward(shared["veh"], obs.o_v),
                mlp_forward(shared["col"], obs.o_c),
            ]
        )
        assert np.array_equal(got, want)
        assert got.shape == (64,)


class TestVehIntAndComm:
    def test_distinct_params_distinct_plcy(self):
        rng = np.random.default_rng(3)
        a = init_mlp((64, 64, 64), rng)
        b = init_mlp((64, 64, 64), rng)
        emb = rng.standard_normal(64)
        assert not np.array_equal(veh_int(a, emb), veh_int(b, emb))

    def test_zero_params_zero_plcy(self):
        assert not veh_int(zeros_mlp((64, 64, 64)), np.ones(64)).any()

    def test_single_neighbor_is_plain_forward(self):
        rng = np.random.default_rng(4)
        comm = init_mlp((64, 16), rng)
        p = rng.standard_normal(64)
        assert np.array_equal(comm_mech(comm, [p]), mlp_forward(comm, p))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        comm = init_mlp((64, 16), rng)
        ps = [rng.standard_normal(64) for _ in range(4)]
        a = comm_mech(comm, ps)
        b = comm_mech(comm, ps[::-1])
        assert np.allclose(a, b, atol=1e-12)

    def test_duplicate_mean_idempotent(self):
        rng = np.random.default_rng(6)
        comm = init_mlp((64, 16), rng)
        p = rng.standard_normal(64)
        assert np.allclose(comm_mech(comm, [p, p]), comm_mech(comm, [p]), atol=1e-12)

    def test_empty_set_rejected(self):
        with pytest.raises(ValidationError):
            comm_mech(init_mlp((64, 16), np.random.default_rng(0)), [])


class TestActHead:
    def make_agent_forced(self, logits, head_in=80, n_actions=3):
        from collusim.collusion import AgentNets

        head = zeros_mlp((head_in, 64, n_actions + 1))
        # bias-only net: last-layer bias produces the forced logits + value
        _, b_last = head.weights()[-1]
        b_last[:n_actions] = logits
        b_last[n_actions] = 7.5
        return AgentNets(zeros_mlp((64, 64, 64)), head)

    def test_forced_logits_deterministic_action(self):
        agent = self.make_agent_forced(np.array([10.0, 0.0, 0.0]))
        a, logp, v = act(agent, np.zeros(64), np.zeros(16), None, "eval")
        assert a == 0
        assert v == 7.5
        assert logp == pytest.approx(float(log_softmax(np.array([10.0, 0.0, 0.0]))[0]))

    def test_eval_mode_repeatable(self):
        rng = np.random.default_rng(7)
        from collusim.collusion import AgentNets

        agent = AgentNets(init_mlp((64, 64, 64), rng), init_mlp((80, 64, 4), rng))
        plcy, msg = rng.standard_normal(64), rng.standard_normal(16)
        out1 = act(agent, plcy, msg, None, "eval")
        out2 = act(agent, plcy, msg, None, "eval")
        assert out1 == out2

    def test_value_matches_oracle_forward(self):
        rng = np.random.default_rng(8)
        from collusim.collusion import AgentNets

        head = init_mlp((80, 64, 5), rng)
        agent = AgentNets(init_mlp((64, 64, 64), rng), head)
        plcy, msg = rng.standard_normal(64), rng.standard_normal(16)
        _, _, v = act(agent, plcy, msg, None, "eval")
        want = mlp_forward(head, np.concatenate([plcy, msg]))[-1]
        assert v == pytest.approx(float(want), abs=0)


class TestReward:
    def test_no_change_zero(self):
        assert compute_reward({1: 5}, {1: 5}, [1]) == 0.0

    def test_single_agent_increment(self):
        assert compute_reward({1: 10}, {1: 4}, [1]) == -6.0

    def test_two_agents_average(self):
        assert compute_reward({1: 4, 2: 8}, {1: 0, 2: 0}, [1, 2]) == -6.0

    def test_empty_running_zero(self):
        assert compute_reward({}, {}, []) == 0.0

    def test_matches_brute_force_on_random_episodes(self, small_scenario):
        net, cfg = small_scenario
        from collusim.harness import run_episode

        controller = greedy_queue_controller(net)
        for seed in range(3):
            metrics, record = run_episode(net, cfg, controller, None, seed)
            for w, running in enumerate(record.running):
                now, prev = record.wait_snaps[w + 1], record.wait_snaps[w]
                if running:
                    expected = -sum(now[a] - prev[a] for a in running) / len(running)
                else:
                    expected = 0.0
                assert record.window_rewards[w] == expected


def tiny_model(arch="full", n_agents=3, a_max=4, seed=0):
    layout = make_layout(k=4, iids=("A", "B"), max_lanes=3, interval=5)
    return CollusionModel(layout, list(range(n_agents)), a_max, arch, 0.1,
                          np.random.default_rng(seed)), layout


def fake_instants(model, layout, n_instants=6, seed=0):
    rng = np.random.default_rng(seed)
    dims = layout.dims
    out = []
    aids = sorted(model.agents)
    for t in range(n_instants):
        m = int(rng.integers(1, len(aids) + 1))
        chosen = list(rng.choice(aids, size=m, replace=False))
        chosen.sort()
        obs = {b: rng.uniform(0, 1, (m, dims[b])) for b in BRANCHES}
        upcoming = [str(rng.choice(["A", "B"])) for _ in range(m)]
        actions = rng.integers(0, model.n_actions, m)
        logits = rng.standard_normal((m, model.n_actions))
        logps = np.array([float(log_softmax(l)[a]) for l, a in zip(logits, actions)])
        out.append(
            InstantData(
                agent_ids=chosen,
                upcoming=upcoming,
                obs=obs,
                actions=actions,
                logps=logps,
                values=rng.standard_normal(m) * 0.1,
                reward=float(rng.standard_normal()),
                dones=rng.random(m) < 0.2,
            )
        )
    return out


class TestGradientFlow:
    @pytest.mark.parametrize("arch", ["full", "no-comm", "private"])
    def test_end_to_end_fd(self, arch):
        model, layout = tiny_model(arch)
        instants = fake_instants(model, layout, 4, seed=3)
        from collusim.collusion import _flatten, _per_row_returns

        adv, ret = _per_row_returns(instants, 0.9)
        fb = _flatten(instants, list(range(len(instants))), adv, ret)
        loss, grads, _ = batch_pass(model, fb, 0.2, 0.01, 0.5, want_grads=True)
        vectors = model.param_vectors()
        rng = np.random.default_rng(0)
        h = 1e-6
        checked = 0
        for key, params in vectors.items():
            for idx in rng.choice(params.size, size=min(6, params.size), replace=False):
                old = params[idx]
                params[idx] = old + h
                lp, _, _ = batch_pass(model, fb, 0.2, 0.01, 0.5, want_grads=False)
                params[idx] = old - h
                lm, _, _ = batch_pass(model, fb, 0.2, 0.01, 0.5, want_grads=False)
                params[idx] = old
                fd = (lp - lm) / (2 * h)
                got = grads[key][idx]
                denom = max(abs(fd), abs(got), 1e-4)
                assert abs(fd - got) / denom < 1e-3, (key, idx, fd, got)
                checked += 1
        assert checked > 20


class TestModelStructure:
    def test_shared_parameters_are_one_object(self):
        model, layout = tiny_model("full")
        ids = list(model.agents)
        assert model.encoders_for(ids[0]) is model.encoders_for(ids[1])
        inst = fake_instants(model, layout, 4, seed=1)
        update_model(model, inst, PpoConfig(minibatch_size=2), np.random.default_rng(0))
        assert model.encoders_for(ids[0]) is model.encoders_for(ids[1])

    def test_private_arch_has_no_shared(self):
        model, _ = tiny_model("private")
        assert model.shared_enc is None and model.comm is None
        ids = list(model.agents)
        assert model.encoders_for(ids[0]) is not model.encoders_for(ids[1])

    def test_parameter_count_ordering_private_exceeds_shared_arm(self):
        private, _ = tiny_model("private")
        no_comm, _ = tiny_model("no-comm")

        def private_params(m):
            return sum(
                v.size for k, v in m.param_vectors().items() if ":" in k
            )

        assert private_params(private) > private_params(no_comm)

    def test_head_input_dim_by_arch(self):
        full, _ = tiny_model("full")
        nc, _ = tiny_model("no-comm")
        assert full.head_in_dim == 80
        assert nc.head_in_dim == 64

    def test_spatiotemporal_mask(self, tiny_scenario):
        net, cfg, state = running_state(tiny_scenario)
        layout = ObsLayout.from_network(net, cfg)
        running = state.running_colluders()
        assert running
        model = CollusionModel(layout, running, cfg.a_max, "no-st", 0.1, np.random.default_rng(0))
        _, _, _, _, _, obs_mats = decide(model, state, running, "eval", None)
        assert not obs_mats["time"].any()
        assert not obs_mats["loc"].any()
        full = CollusionModel(layout, running, cfg.a_max, "full", 0.1, np.random.default_rng(0))
        _, _, _, _, _, obs2 = decide(full, state, running, "eval", None)
        assert obs2["time"].any() and obs2["loc"].any()


class TestReports:
    def test_amax_zero_no_reports(self, tiny_scenario):
        net, cfg, state = running_state(tiny_scenario)
        running = state.running_colluders()
        assert build_reports(state, running, [0] * len(running), 0) == []

    def test_running_agents_report_on_their_lane(self, tiny_scenario):
        net, cfg, state = running_state(tiny_scenario)
        running = state.running_colluders()
        reports = build_reports(state, running, [3] * len(running), 10)
        present = [a for a in running if state.vehicles[a].current_lane is not None]
        assert sorted(r.vehicle_id for r in reports) == sorted(present)
        assert all(r.count == 3 for r in reports)
        for r in reports:
            assert state.vehicles[r.vehicle_id].current_lane == r.lane


class TestTrainingLoop:
    def test_curve_deterministic(self, tiny_scenario):
        net, cfg = tiny_scenario
        controller = greedy_queue_controller(net)
        _, c1 = train_collusion(net, cfg, controller, seed=0, episodes=4)
        _, c2 = train_collusion(net, cfg, controller, seed=0, episodes=4)
        assert c1 == c2

    def test_model_params_deterministic(self, tiny_scenario):
        net, cfg = tiny_scenario
        controller = greedy_queue_controller(net)
        m1, _ = train_collusion(net, cfg, controller, seed=0, episodes=4)
        m2, _ = train_collusion(net, cfg, controller, seed=0, episodes=4)
        for key, v in m1.param_vectors().items():
            assert np.array_equal(v, m2.param_vectors()[key])

    def test_checkpoint_round_trip_preserves_eval(self, tiny_scenario, tmp_path):
        net, cfg = tiny_scenario
        controller = greedy_queue_controller(net)
        model, _ = train_collusion(net, cfg, controller, seed=0, episodes=3)
        save_collusion(model, str(tmp_path))
        layout = ObsLayout.from_network(net, cfg)
        loaded = load_collusion(str(tmp_path), layout)
        vs = materialize_vehicles(net, cfg, 0)
        state = SimState(net, vs)
        rng = np.random.default_rng(2)
        for _ in range(10):
            green = {i.id: int(rng.integers(len(i.phases))) for i in net.intersections}
            step(state, green, CFG)
        running = state.running_colluders()
        if running:
            _, a1, _, v1, _, _ = decide(model, state, running, "eval", None)
            _, a2, _, v2, _, _ = decide(loaded, state, running, "eval", None)
            assert np.array_equal(a1, a2)
            assert np.array_equal(v1, v2)

    def test_reporter_respects_a_max_zero(self, tiny_scenario):
        net, cfg, state = running_state(tiny_scenario)
        layout = ObsLayout.from_network(net, cfg)
        running = state.running_colluders()
        model = CollusionModel(layout, running, 0, "full", 0.1, np.random.default_rng(0))
        assert model_reporter(model)(state, 0) == []
