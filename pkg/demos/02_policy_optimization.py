"""The optimization core: analytic gradients, the clipped surrogate, a bandit.

Run: python3 demos/02_policy_optimization.py
"""

import numpy as np

from collusim.nn import init_mlp, mlp_forward, mlp_grad, sample_action, softmax
from collusim.ppo import ActorCritic, PpoConfig, RolloutBuffer, ppo_surrogate, ppo_update

print("== gradients are exact: spot-check against finite differences ==")
rng = np.random.default_rng(0)
net = init_mlp((6, 16, 3), rng)
x = rng.standard_normal(6)
upstream = rng.standard_normal(3)
grad, _ = mlp_grad(net, x, upstream)
i = int(rng.integers(net.params.size))
h = 1e-5
old = net.params[i]
net.params[i] = old + h
fp = float(upstream @ mlp_forward(net, x))
net.params[i] = old - h
fm = float(upstream @ mlp_forward(net, x))
net.params[i] = old
fd = (fp - fm) / (2 * h)
print(f"coordinate {i}: analytic={grad[i]:+.8f}  finite-diff={fd:+.8f}")

print()
print("== the clipped surrogate is pessimistic ==")
for w, a in [(1.0, 2.0), (1.5, 1.0), (0.5, -1.0)]:
    print(f"ratio={w:,.2f} advantage={a:+.1f} -> {ppo_surrogate(w, a, 0.2):+.2f}")

print()
print("== a two-armed bandit: the policy finds the +1 arm ==")
actor = init_mlp((1, 8, 2), np.random.default_rng(1), out_gain=0.01)
critic = init_mlp((1, 8, 1), np.random.default_rng(2))
nets = ActorCritic(actor, critic)
cfg = PpoConfig(lr=3e-3, gamma=0.0, epochs=4, minibatch_size=32)
rng = np.random.default_rng(3)
obs = np.ones(1)
for it in range(120):
    buf = RolloutBuffer()
    for _ in range(64):
        probs = softmax(mlp_forward(nets.actor, obs))
        a, logp = sample_action(probs, rng)
        reward = 1.0 if a == 0 else -1.0
        buf.add(obs, a, logp, reward, float(mlp_forward(nets.critic, obs)[0]), done=True)
    ppo_update(nets, buf, cfg, rng)
    if it % 30 == 29:
        p = softmax(mlp_forward(nets.actor, obs))
        print(f"iteration {it+1:3d}: P(best arm) = {p[0]:.3f}")
