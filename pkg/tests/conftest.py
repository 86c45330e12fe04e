"""Shared fixtures: small scenarios and a report-sensitive reference controller."""

import numpy as np
import pytest

from collusim.network import NetworkSpec, build_network
from collusim.scenario import ScenarioConfig
from collusim.simulator import reported_lane_counts


def greedy_queue_controller(network):
    """Serve the phase with the largest reported count sum (deterministic).

    A stand-in for a trained signal policy in tests that only need a
    report-sensitive black box.
    """

    def controller(state, reports, window):
        green = {}
        for inter in network.intersections:
            counts = reported_lane_counts(state, inter.id, reports)
            by_lane = dict(zip(network.incoming_lanes(inter.id), counts))
            scores = [sum(by_lane[l] for l in phase) for phase in inter.phases]
            green[inter.id] = int(np.argmax(scores))
        return green

    return controller


@pytest.fixture
def small_scenario():
    cfg = ScenarioConfig(
        network=NetworkSpec(kind="grid", rows=2, cols=2, free_steps=2, capacity=12),
        total_vehicles=90,
        collusion_size=12,
        episode_len=120,
        tau=5,
        k_intervals=6,
    )
    cfg.validate()
    net = build_network(cfg.network)
    return net, cfg


@pytest.fixture
def tiny_scenario():
    cfg = ScenarioConfig(
        network=NetworkSpec(kind="grid", rows=1, cols=2, free_steps=2, capacity=10),
        total_vehicles=20,
        collusion_size=4,
        episode_len=60,
        tau=5,
        k_intervals=6,
    )
    cfg.validate()
    net = build_network(cfg.network)
    return net, cfg
