"""Sensitivity sweeps: collusion size and action-space cap.

Emits the same plot-ready CSVs the CLI produces. Reduced budgets; expect
several minutes.

Run: python3 demos/05_sweeps.py
"""

import os

from collusim.atcs import make_controller, train_atcs
from collusim.harness import (
    sweep_action_space,
    sweep_collusion_size,
    write_action_sweep_csv,
    write_size_sweep_csv,
)
from collusim.network import build_network
from collusim.scenario import desk_scenario

SEED = 0
EPISODES = 250  # per-arm demo budget
OUT = "demo_sweeps"

cfg = desk_scenario()
net = build_network(cfg.network)
print("training the frozen target controller...")
policy, _ = train_atcs(net, cfg)
controller = make_controller(policy)
os.makedirs(OUT, exist_ok=True)

print("collusion-size sweep (nested subsets)...")
size_rows = sweep_collusion_size(net, cfg, controller, [4, 8, 16], SEED, episodes=EPISODES)
write_size_sweep_csv(os.path.join(OUT, "size_sweep.csv"), size_rows)
print(f"{'size':>5} {'avg saved':>10} {'total saved':>12}")
for row in size_rows:
    print(f"{row.size:>5} {row.avg_time_saved:>10.2f} {row.total_time_saved:>12.1f}")

print()
print("action-cap sweep (learned vs always-max)...")
cap_rows = sweep_action_space(net, cfg, controller, [2, 4, 10], SEED, episodes=EPISODES)
write_action_sweep_csv(os.path.join(OUT, "action_sweep.csv"), cap_rows)
print(f"{'cap':>4} {'learned reward':>15} {'greedy reward':>14}")
for row in cap_rows:
    print(f"{row.cap:>4} {row.learned.reward:>15.1f} {row.greedy.reward:>14.1f}")

print(f"\nCSVs in {OUT}/")
