import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perdpp.cluster import NOISE, hdbscan_labels
from perdpp.elastic import (
    ElasticAccumulator,
    ElasticConfig,
    ElasticStepper,
    MemoryBank,
    elastic_step,
    same_cluster,
)
from perdpp.env import EnvState
from perdpp.replay import PrioritizedReplayBuffer

S0 = EnvState(3, 3, (0,) * 8)
S1 = EnvState(2, 2, (0,) * 8)


def far_q(i):
    """Q-vectors that never share a cluster: every call lands in a new place."""
    return np.full(8, 1000.0 * (i + 1))


def warm_stepper(d_max=8, mcs=3):
    """Stepper whose bank already holds two tight, well-separated blobs."""
    stepper = ElasticStepper(ElasticConfig(0.9, d_max, mcs, 64), 8)
    rng = np.random.default_rng(0)
    for _ in range(10):
        stepper.bank.push(rng.normal(0.0, 0.01, 8))
        stepper.bank.push(rng.normal(50.0, 0.01, 8))
    return stepper


class TestSameCluster:
    def test_cases(self):
        labels = np.array([0, 0, 1, NOISE, NOISE])
        assert same_cluster(labels, 0, 0)
        assert same_cluster(labels, 0, 1)
        assert not same_cluster(labels, 1, 2)
        assert not same_cluster(labels, 3, 4)

    def test_cross_blob(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(0, 0.01, (5, 8)), rng.normal(10, 0.01, (5, 8))])
        assert not same_cluster(hdbscan_labels(X, 5), 0, 7)


class TestMemoryBank:
    def test_ring_order(self):
        bank = MemoryBank(3, 1)
        for v in range(5):
            bank.push([v])
        np.testing.assert_array_equal(bank.points().ravel(), [2, 3, 4])
        assert len(bank) == 3


class TestAccumulator:
    def test_three_steps(self):
        acc = ElasticAccumulator(0.9)
        acc.start(S0, 2)
        for d, r in enumerate((100.0, -100.0, 100.0)):
            acc.d = d
            acc.add(r)
        assert acc.reward == pytest.approx(91.0, abs=1e-12)

    def test_stepper_accumulates_91(self):
        stepper = warm_stepper()
        stepper.begin(S0, 4)
        for i, r in enumerate((100.0, -100.0, 100.0)):
            dec = stepper.step(r, far_q(2 * i), far_q(2 * i + 1) * -1, S1, False, False)
            assert not dec.committed
        assert stepper.acc.reward == pytest.approx(91.0, abs=1e-12)
        assert stepper.acc.d == 3

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from([-500.0, -200.0, -100.0, 100.0, 500.0]), min_size=1, max_size=9))
    def test_reward_log_identity(self, rewards):
        acc = ElasticAccumulator(0.9)
        acc.start(S0, 0)
        for d, r in enumerate(rewards):
            acc.d = d
            acc.add(r)
        direct = math.fsum(0.9 ** k * r for k, r in enumerate(acc.reward_log))
        assert acc.reward == pytest.approx(direct, rel=1e-14, abs=1e-11)


class TestCommit:
    def test_terminal_always_commits(self):
        stepper = warm_stepper()
        buf = PrioritizedReplayBuffer(8)
        stepper.begin(S0, 1)
        dec = stepper.step(500.0, far_q(0), -far_q(1), S1, True, False, buf)
        assert dec.committed and dec.reason == "episode_end"
        assert dec.transition.terminal and len(buf) == 1
        assert stepper.acc.empty

    def test_identical_q_commits_with_d(self):
        stepper = warm_stepper()
        stepper.begin(S0, 3)
        stepper.step(100.0, far_q(0), -far_q(1), S1, False, False)
        q = np.zeros(8)
        dec = stepper.step(-100.0, q, q, S1, False, False)
        assert dec.committed and dec.reason == "same_cluster"
        assert dec.transition.steps == 1
        assert dec.transition.reward == pytest.approx(100.0 - 90.0)
        assert stepper.acc.empty

    def test_warmup_commits_every_step(self):
        stepper = ElasticStepper(ElasticConfig(min_cluster_size=5), 8)
        stepper.begin(S0, 0)
        dec = stepper.step(100.0, far_q(0), -far_q(1), S1, False, False)
        assert dec.committed and dec.reason == "warmup" and dec.transition.steps == 0

    def test_d_max_zero_is_one_step(self):
        stepper = warm_stepper(d_max=0)
        for i in range(5):
            stepper.begin(S0, i)
            dec = stepper.step(100.0, far_q(i), -far_q(i), S1, False, False)
            assert dec.committed and dec.transition.steps == 0

    def test_bounded_d(self):
        stepper = warm_stepper(d_max=4)
        rng = np.random.default_rng(3)
        for _ in range(200):
            stepper.begin(S0, 0)
            dec = stepper.step(float(rng.choice([-100.0, 100.0])), rng.normal(0, 100, 8),
                               rng.normal(0, 100, 8), S1, False, False)
            if dec.committed:
                assert 0 <= dec.transition.steps <= 4

    def test_step_requires_begin(self):
        with pytest.raises(RuntimeError):
            ElasticStepper().step(1.0, np.zeros(8), np.zeros(8), S1, False, False)

    def test_functional_form(self):
        acc = ElasticAccumulator(0.9)
        acc.start(S0, 6)
        bank = MemoryBank(64, 8)
        buf = PrioritizedReplayBuffer(4)
        dec = elastic_step(acc, 100.0, np.zeros(8), np.ones(8), bank, buf, S1, episode_end=True)
        assert dec.committed and len(buf) == 1 and len(bank) == 2 and acc.empty
