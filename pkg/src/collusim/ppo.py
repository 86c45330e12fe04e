"""Clipped-surrogate policy optimization on `Mlp` actor/critic pairs.

The update maximizes   mean(min(w*A, clip(w, 1-eps, 1+eps)*A))
                     + entropy_coef * mean(H)
                     - value_coef * mean((V - G)^2)

over several epochs of shuffled minibatches, where w is the probability
ratio against the behavior policy, A the normalized Monte-Carlo advantage
and G the discounted return. Gradients are assembled analytically from
`mlp_grad` and applied with `Adam`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDiverged, ValidationError
from .nn import Adam, Array, Mlp, log_softmax, mlp_forward, mlp_grad, softmax


@dataclass
class PpoConfig:
    gamma: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 128
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    normalize_advantages: bool = True
    reward_scale: float = 1.0
    # optional linear annealing targets over a training run (None: constant)
    lr_final: float | None = None
    entropy_final: float | None = None

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise ValidationError(f"clip_eps must be in (0,1), got {self.clip_eps}")
        if not (0.0 <= self.gamma < 1.0):
            raise ValidationError(f"gamma must be in [0,1), got {self.gamma}")

    def at_progress(self, frac: float) -> tuple[float, float]:
        """(lr, entropy_coef) linearly annealed at training fraction frac."""
        frac = min(max(frac, 0.0), 1.0)
        lr = self.lr if self.lr_final is None else self.lr + (self.lr_final - self.lr) * frac
        ent = (
            self.entropy_coef
            if self.entropy_final is None
            else self.entropy_coef + (self.entropy_final - self.entropy_coef) * frac
        )
        return lr, ent


class RolloutBuffer:
    """Per-step trajectory store consumed by one update.

    `dones[t]` marks t as the final step of its episode segment; returns are
    never propagated across a done boundary.
    """

    def __init__(self):
        self.obs: list[Array] = []
        self.actions: list[int] = []
        self.logps: list[float] = []
        self.rewards: list[float] = []
        self.values: list[float] = []
        self.dones: list[bool] = []

    def add(self, obs: Array, action: int, logp: float, reward: float, value: float, done: bool):
        if not np.isfinite(logp) or logp > 1e-9:
            raise ValidationError(f"log-probability must be finite and <= 0, got {logp}")
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.actions.append(int(action))
        self.logps.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.actions)

    def clear(self):
        self.__init__()


def discounted_returns(rewards: Array, dones: Array, gamma: float) -> Array:
    """Within-segment discounted reward sums, computed backwards."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * (0.0 if dones[t] else g)
        out[t] = g
    return out


def compute_returns_and_advantages(
    buffer: RolloutBuffer, gamma: float, normalize: bool = True
) -> tuple[Array, Array]:
    """Monte-Carlo returns and (optionally normalized) advantages."""
    if len(buffer) == 0:
        raise ValidationError("empty rollout buffer")
    returns = discounted_returns(np.array(buffer.rewards), np.array(buffer.dones), gamma)
    advantages = returns - np.asarray(buffer.values, dtype=np.float64)
    if normalize:
        advantages = normalize_batch(advantages)
    return advantages, returns


def normalize_batch(x: Array) -> Array:
    return (x - x.mean()) / (x.std() + 1e-8)


def ppo_surrogate(w, advantage, clip_eps):
    """Pessimistic clipped objective min(w*A, clip(w)*A). Vectorizes."""
    w = np.asarray(w, dtype=np.float64)
    a = np.asarray(advantage, dtype=np.float64)
    clipped = np.clip(w, 1.0 - clip_eps, 1.0 + clip_eps)
    out = np.minimum(w * a, clipped * a)
    return float(out) if out.ndim == 0 else out


def policy_grad_terms(
    logits: Array,
    actions: Array,
    logp_old: Array,
    advantages: Array,
    clip_eps: float,
    entropy_coef: float,
) -> tuple[Array, dict]:
    """d(objective)/d(logits) for the surrogate + entropy terms, per row.

    Returns the *ascent* direction (caller negates for a loss) without the
    1/batch factor, plus summary stats.
    """
    b, n = logits.shape
    p = softmax(logits)
    logp_all = log_softmax(logits)
    rows = np.arange(b)
    logp_new = logp_all[rows, actions]
    w = np.exp(logp_new - logp_old)
    clipped = np.clip(w, 1.0 - clip_eps, 1.0 + clip_eps)
    surr_un = w * advantages
    surr_cl = clipped * advantages
    # grad flows through the unclipped branch wherever min() selects it
    flow = np.where(surr_un <= surr_cl, w * advantages, 0.0)
    dlogp = -p.copy()
    dlogp[rows, actions] += 1.0
    dlogits = flow[:, None] * dlogp

    entropy = -(p * logp_all).sum(axis=1)
    if entropy_coef != 0.0:
        dlogits += entropy_coef * (-p * (logp_all + entropy[:, None]))

    stats = {
        "ratio_mean": float(w.mean()),
        "clip_fraction": float(np.mean((w < 1.0 - clip_eps) | (w > 1.0 + clip_eps))),
        "entropy_mean": float(entropy.mean()),
        "surrogate_mean": float(np.minimum(surr_un, surr_cl).mean()),
    }
    return dlogits, stats


@dataclass
class ActorCritic:
    """An actor/critic Mlp pair with its optimizer state."""

    actor: Mlp
    critic: Mlp
    actor_opt: Adam = field(default_factory=Adam)
    critic_opt: Adam = field(default_factory=Adam)


@dataclass
class PpoStats:
    ratio_mean: float
    clip_fraction: float
    value_loss: float
    entropy_mean: float
    surrogate_mean: float
    n_samples: int


def ppo_update(
    nets: ActorCritic, buffer: RolloutBuffer, config: PpoConfig, rng: np.random.Generator
) -> PpoStats:
    """One PPO update over the buffer; mutates nets in place."""
    if len(buffer) == 0:
        raise ValidationError("empty rollout buffer")
    obs = np.stack(buffer.obs)
    actions = np.asarray(buffer.actions)
    logp_old = np.asarray(buffer.logps)
    advantages, returns = compute_returns_and_advantages(
        buffer, config.gamma, config.normalize_advantages
    )
    n = len(buffer)
    nets.actor_opt.lr = config.lr
    nets.critic_opt.lr = config.lr

    agg: dict[str, float] = {"ratio_mean": 0.0, "clip_fraction": 0.0, "entropy_mean": 0.0,
                             "surrogate_mean": 0.0, "value_loss": 0.0}
    passes = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start : start + config.minibatch_size]
            b = len(idx)
            logits = mlp_forward(nets.actor, obs[idx])
            dlogits, stats = policy_grad_terms(
                logits, actions[idx], logp_old[idx], advantages[idx],
                config.clip_eps, config.entropy_coef,
            )
            # descend the negated objective, averaged over the minibatch
            agrad, _ = mlp_grad(nets.actor, obs[idx], -dlogits / b)

            values = mlp_forward(nets.critic, obs[idx])[:, 0]
            verr = values - returns[idx]
            vloss = float(np.mean(verr**2))
            dvalue = (config.value_coef * 2.0 * verr / b)[:, None]
            cgrad, _ = mlp_grad(nets.critic, obs[idx], dvalue)

            if not (np.all(np.isfinite(agrad)) and np.all(np.isfinite(cgrad)) and np.isfinite(vloss)):
                raise TrainingDiverged(
                    "non-finite loss/gradient in update",
                    {"value_loss": vloss, "batch": b, "step": passes},
                )
            nets.actor_opt.step(nets.actor.params, agrad)
            nets.critic_opt.step(nets.critic.params, cgrad)

            for k in ("ratio_mean", "clip_fraction", "entropy_mean", "surrogate_mean"):
                agg[k] += stats[k]
            agg["value_loss"] += vloss
            passes += 1

    return PpoStats(
        ratio_mean=agg["ratio_mean"] / passes,
        clip_fraction=agg["clip_fraction"] / passes,
        value_loss=agg["value_loss"] / passes,
        entropy_mean=agg["entropy_mean"] / passes,
        surrogate_mean=agg["surrogate_mean"] / passes,
        n_samples=n,
    )
