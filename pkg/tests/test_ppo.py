"""Unit tests for returns, the clipped surrogate, and the update loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collusim.errors import ValidationError
from collusim.nn import init_mlp, mlp_forward, sample_action, softmax, zeros_mlp
from collusim.ppo import (
    ActorCritic,
    PpoConfig,
    RolloutBuffer,
    compute_returns_and_advantages,
    discounted_returns,
    policy_grad_terms,
    ppo_surrogate,
    ppo_update,
)


def oracle_surrogate(w, a, eps):
    """Independent straight-line min(w*A, clip(w)*A)."""
    clipped = w
    if clipped < 1.0 - eps:
        clipped = 1.0 - eps
    if clipped > 1.0 + eps:
        clipped = 1.0 + eps
    u, c = w * a, clipped * a
    return u if u < c else c


def oracle_returns(rewards, gamma):
    """O(T^2) double loop over a single episode segment."""
    t_max = len(rewards)
    return [
        sum(gamma ** (u - t) * rewards[u] for u in range(t, t_max)) for t in range(t_max)
    ]


class TestReturns:
    def test_gamma_zero_collapses_to_rewards(self):
        r = np.array([1.0, 1.0, 1.0])
        d = np.array([False, False, True])
        assert np.array_equal(discounted_returns(r, d, 0.0), r)

    def test_geometric_sum(self):
        r = np.array([0.0, 0.0, 2.0])
        d = np.array([False, False, True])
        assert np.allclose(discounted_returns(r, d, 0.5), [0.5, 1.0, 2.0], atol=1e-15)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            r = rng.standard_normal(20)
            d = np.zeros(20, dtype=bool)
            d[-1] = True
            got = discounted_returns(r, d, 0.9)
            want = oracle_returns(list(r), 0.9)
            assert np.allclose(got, want, atol=1e-10)

    def test_segments_reset_at_done(self):
        r = np.array([1.0, 1.0, 1.0, 1.0])
        d = np.array([False, True, False, True])
        got = discounted_returns(r, d, 0.5)
        assert np.allclose(got, [1.5, 1.0, 1.5, 1.0], atol=1e-15)

    def test_empty_buffer_rejected(self):
        with pytest.raises(ValidationError):
            compute_returns_and_advantages(RolloutBuffer(), 0.9)

    def test_advantages_are_return_minus_value(self):
        buf = RolloutBuffer()
        for r, v in [(1.0, 0.5), (2.0, 0.0), (0.0, 1.0)]:
            buf.add(np.zeros(2), 0, -0.1, r, v, done=False)
        buf.dones[-1] = True
        adv, ret = compute_returns_and_advantages(buf, 0.0, normalize=False)
        assert np.allclose(adv, ret - np.array([0.5, 0.0, 1.0]), atol=1e-15)

    def test_normalized_advantages(self):
        buf = RolloutBuffer()
        rng = np.random.default_rng(4)
        for _ in range(32):
            buf.add(np.zeros(1), 0, -0.5, float(rng.standard_normal()), 0.0, done=False)
        buf.dones[-1] = True
        adv, _ = compute_returns_and_advantages(buf, 0.9, normalize=True)
        assert abs(adv.mean()) < 1e-9
        assert abs(adv.std() - 1.0) < 1e-6


class TestSurrogate:
    @pytest.mark.parametrize(
        "w,a,eps,want",
        [
            (1.0, 2.0, 0.2, 2.0),
            (1.5, 1.0, 0.2, 1.2),
            (0.5, -1.0, 0.2, -0.8),
        ],
    )
    def test_known_values(self, w, a, eps, want):
        assert ppo_surrogate(w, a, eps) == pytest.approx(want, abs=1e-15)

    @given(
        st.floats(0.01, 5.0),
        st.floats(-10, 10),
        st.floats(0.05, 0.5),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_oracle(self, w, a, eps):
        assert abs(ppo_surrogate(w, a, eps) - oracle_surrogate(w, a, eps)) < 1e-12

    @given(st.floats(-10, 10), st.floats(0.05, 0.5))
    @settings(max_examples=100, deadline=None)
    def test_identity_at_ratio_one(self, a, eps):
        assert ppo_surrogate(1.0, a, eps) == pytest.approx(a, abs=1e-12)

    def test_nonincreasing_in_w_for_negative_advantage(self):
        ws = np.linspace(0.01, 3.0, 200)
        vals = ppo_surrogate(ws, -1.5, 0.2)
        assert np.all(np.diff(vals) <= 1e-12)


class TestPolicyGradTerms:
    def test_entropy_gradient_matches_fd(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((1, 5))
        actions = np.array([2])
        logp_old = np.log(softmax(logits))[0, 2:3]
        adv = np.array([0.0])  # isolate entropy term
        d, _ = policy_grad_terms(logits, actions, logp_old, adv, 0.2, 1.0)
        h = 1e-6
        for k in range(5):
            zp, zm = logits.copy(), logits.copy()
            zp[0, k] += h
            zm[0, k] -= h

            def ent(z):
                p = softmax(z)
                return float(-(p * np.log(p)).sum())

            fd = (ent(zp) - ent(zm)) / (2 * h)
            assert abs(fd - d[0, k]) < 1e-6

    def test_surrogate_gradient_matches_fd(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((1, 4))
        actions = np.array([1])
        logp_old = np.array([-1.1])
        adv = np.array([0.7])
        d, _ = policy_grad_terms(logits, actions, logp_old, adv, 0.5, 0.0)
        h = 1e-6

        def surr(z):
            lp = float(np.log(softmax(z))[0, 1])
            return oracle_surrogate(np.exp(lp - logp_old[0]), adv[0], 0.5)

        for k in range(4):
            zp, zm = logits.copy(), logits.copy()
            zp[0, k] += h
            zm[0, k] -= h
            fd = (surr(zp) - surr(zm)) / (2 * h)
            assert abs(fd - d[0, k]) < 1e-6


def make_bandit_nets(seed=0, obs_dim=1, n_actions=2):
    rng = np.random.default_rng(seed)
    actor = init_mlp((obs_dim, 8, n_actions), rng, out_gain=0.01)
    critic = init_mlp((obs_dim, 8, 1), rng)
    return ActorCritic(actor, critic)


class TestPpoUpdate:
    def _fill_bandit(self, nets, rng, rewards=(1.0, -1.0), steps=64):
        buf = RolloutBuffer()
        obs = np.ones(1)
        for _ in range(steps):
            probs = softmax(mlp_forward(nets.actor, obs))
            a, logp = sample_action(probs, rng)
            v = float(mlp_forward(nets.critic, obs)[0])
            buf.add(obs, a, logp, rewards[a], v, done=True)
        return buf

    def test_zero_advantage_zero_entropy_leaves_policy_unchanged(self):
        nets = make_bandit_nets(3)
        before = nets.actor.params.copy()
        buf = RolloutBuffer()
        rng = np.random.default_rng(0)
        obs = np.ones(1)
        for _ in range(16):
            probs = softmax(mlp_forward(nets.actor, obs))
            a, logp = sample_action(probs, rng)
            buf.add(obs, a, logp, 0.0, 0.0, done=True)  # returns == values == 0
        cfg = PpoConfig(entropy_coef=0.0, normalize_advantages=False, gamma=0.9)
        ppo_update(nets, buf, cfg, np.random.default_rng(1))
        assert np.array_equal(nets.actor.params, before)

    def test_bandit_converges_to_better_arm(self):
        nets = make_bandit_nets(5)
        rng = np.random.default_rng(10)
        cfg = PpoConfig(lr=3e-3, epochs=4, minibatch_size=32, gamma=0.0)
        for _ in range(200):
            buf = self._fill_bandit(nets, rng)
            ppo_update(nets, buf, cfg, rng)
        probs = softmax(mlp_forward(nets.actor, np.ones(1)))
        assert probs[0] > 0.95

    def test_clip_fraction_in_unit_interval(self):
        nets = make_bandit_nets(6)
        rng = np.random.default_rng(2)
        buf = self._fill_bandit(nets, rng)
        stats = ppo_update(nets, buf, PpoConfig(), rng)
        assert 0.0 <= stats.clip_fraction <= 1.0

    def test_bit_deterministic_with_fixed_shuffle_seed(self):
        results = []
        for _ in range(2):
            nets = make_bandit_nets(7)
            rng = np.random.default_rng(20)
            buf = self._fill_bandit(nets, rng)
            ppo_update(nets, buf, PpoConfig(), np.random.default_rng(99))
            results.append((nets.actor.params.copy(), nets.critic.params.copy()))
        assert np.array_equal(results[0][0], results[1][0])
        assert np.array_equal(results[0][1], results[1][1])


class TestBuffer:
    def test_rejects_positive_logp(self):
        buf = RolloutBuffer()
        with pytest.raises(ValidationError):
            buf.add(np.zeros(1), 0, 0.5, 0.0, 0.0, False)

    def test_rejects_nonfinite_logp(self):
        buf = RolloutBuffer()
        with pytest.raises(ValidationError):
            buf.add(np.zeros(1), 0, float("-inf"), 0.0, 0.0, False)

    def test_zero_weight_net_smoke(self):
        net = zeros_mlp((2, 3))
        assert not mlp_forward(net, np.ones(2)).any()
