"""End-to-end attack: freeze the controller, let vehicles learn to lie.

A reduced-budget version of the main comparison: honest reporting, constant
inflation, random counts, and the learned collusion group.

Run: python3 demos/04_collusion_attack.py   (a few minutes)
"""

from collusim.atcs import make_controller, train_atcs
from collusim.baselines import all_k, baseline_reporter, greedy_cap, random_policy
from collusim.collusion import model_reporter, train_collusion
from collusim.harness import run_episode
from collusim.network import build_network
from collusim.scenario import desk_scenario, materialize_vehicles

SEED = 0
cfg = desk_scenario()
cfg.attack.episodes = 300  # demo budget; the desk default is 900
net = build_network(cfg.network)

print("training and freezing the signal controllers...")
policy, _ = train_atcs(net, cfg)
controller = make_controller(policy)

rows = []
for label, reporter in [
    ("honest (all:1)", baseline_reporter(all_k(1), SEED)),
    ("greedy (all:10)", baseline_reporter(greedy_cap(10), SEED)),
    ("random:10", baseline_reporter(random_policy(10), SEED)),
]:
    m, _ = run_episode(net, cfg, controller, reporter, SEED)
    rows.append((label, m))

print(f"training the collusion group (seed {SEED}, {cfg.attack.episodes} episodes)...")
model, curve = train_collusion(net, cfg, controller, SEED, episodes=cfg.attack.episodes)
vehicles = materialize_vehicles(net, cfg, SEED)
m, _ = run_episode(net, cfg, controller, model_reporter(model), SEED, vehicles=vehicles)
rows.append(("learned collusion", m))

print()
print(f"{'arm':>18} {'reward':>8} {'col wait':>9} {'col travel':>11} {'others wait':>12}")
for label, m in rows:
    print(f"{label:>18} {m.reward:>8.1f} {m.col_wait_avg:>9.2f} "
          f"{m.col_travel_avg:>11.2f} {m.oth_wait_avg:>12.2f}")
