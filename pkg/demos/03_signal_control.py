"""Train the adaptive signal controllers and race them against fixed-time.

Uses a reduced budget so it finishes in about a minute; the full desk
configuration lives in `collusim.scenario.desk_scenario()`.

Run: python3 demos/03_signal_control.py
"""

import numpy as np

from collusim.atcs import fixed_time_controller, make_controller, train_atcs
from collusim.harness import run_episode
from collusim.network import build_network
from collusim.scenario import desk_scenario

cfg = desk_scenario()
cfg.atcs.episodes = 120  # demo budget; the desk default is 240
net = build_network(cfg.network)

print(f"training {len(net.intersections)} signal policies on honest traffic...")
policy, curve = train_atcs(net, cfg)
rewards = [r for _, r in curve]
print(f"episode reward (mean per intersection): start {np.mean(rewards[:10]):.0f}, "
      f"end {np.mean(rewards[-10:]):.0f}")

ctl = make_controller(policy)
ft = fixed_time_controller(net)
print()
print("frozen controller vs round-robin, mean vehicle waiting time (steps):")
print(f"{'seed':>6} {'adaptive':>9} {'fixed':>7}")
for seed in cfg.seeds:
    adaptive = run_episode(net, cfg, ctl, None, seed, collusion_size=0)[0].oth_wait_avg
    fixed = run_episode(net, cfg, ft, None, seed, collusion_size=0)[0].oth_wait_avg
    print(f"{seed:>6} {adaptive:>9.2f} {fixed:>7.2f}")
