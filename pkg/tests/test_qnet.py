import json

import numpy as np
import pytest
from scipy.stats import chisquare

from perdpp.env import EnvState
from perdpp.qnet import (
    QNetwork,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    loss_gradients,
    save_checkpoint,
    select_action_epsilon_greedy,
    sync_target,
    td_error_multistep,
    td_error_onestep,
    train_step,
    weighted_td_loss,
)
from perdpp.replay import SampledBatch


def make_batch(states, actions, rewards, next_states, steps=None, terminals=None, weights=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = len(states)
    return SampledBatch(
        np.arange(n), [None] * n, np.full(n, 1.0 / n),
        np.ones(n) if weights is None else np.asarray(weights, dtype=float),
        states, np.asarray(actions, dtype=int), np.asarray(rewards, dtype=float),
        np.atleast_2d(np.asarray(next_states, dtype=float)),
        np.zeros(n, dtype=int) if steps is None else np.asarray(steps, dtype=int),
        np.zeros(n, dtype=bool) if terminals is None else np.asarray(terminals, dtype=bool),
    )


def random_batch(rng, n=6, sizes=(10, 8, 8, 8)):
    return make_batch(
        rng.normal(size=(n, sizes[0])), rng.integers(0, sizes[-1], n), rng.normal(0, 50, n),
        rng.normal(size=(n, sizes[0])), rng.integers(0, 4, n), rng.random(n) < 0.3,
        rng.uniform(0.1, 1.0, n),
    )


def constant_net(sizes, out_bias):
    """Network whose output is ``out_bias`` for every input."""
    net = QNetwork.zeros(sizes)
    net.params[-1] = np.asarray(out_bias, dtype=float)
    return net


class TestForward:
    def test_zero_net(self):
        net = QNetwork.zeros()
        s = EnvState(3, -2, (1, 0, 0, 1, 0, 0, 1, 0)).encode()
        np.testing.assert_array_equal(net.forward(s), np.zeros(8))

    def test_purity(self):
        net = QNetwork(rng=np.random.default_rng(0))
        s = np.random.default_rng(1).normal(size=10)
        np.testing.assert_array_equal(net.forward(s), net.forward(s.copy()))

    def test_hand_computed_single_unit(self):
        # 2 inputs -> 1 hidden -> 1 hidden -> 2 outputs
        W1, b1 = np.array([[2.0], [-1.0]]), np.array([0.5])
        W2, b2 = np.array([[3.0]]), np.array([-1.0])
        W3, b3 = np.array([[1.0, -2.0]]), np.array([0.25, 0.0])
        net = QNetwork((2, 1, 1, 2), [W1, b1, W2, b2, W3, b3])
        # h1 = relu(2*1 - 1*0.5 + 0.5) = 2; h2 = relu(3*2 - 1) = 5; out = (5.25, -10)
        np.testing.assert_allclose(net.forward([1.0, 0.5]), [5.25, -10.0], atol=0)
        # negative pre-activation is cut: h1 = relu(-2 + 0.5) = 0, h2 = relu(-1) = 0
        np.testing.assert_allclose(net.forward([-1.0, 0.0]), [0.25, 0.0], atol=0)

    def test_batch_and_single_agree(self):
        net = QNetwork(rng=np.random.default_rng(2))
        X = np.random.default_rng(3).normal(size=(5, 10))
        np.testing.assert_allclose(net.forward(X)[2], net.forward(X[2]), rtol=0, atol=1e-12)

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            QNetwork((2, 3, 2), [np.zeros((2, 3)), np.zeros(3), np.zeros((2, 2)), np.zeros(2)])


class TestTDError:
    def test_multistep_example(self):
        # Q(s, a) = 5 everywhere for the main net, max target Q = 20
        main = constant_net((1, 2, 2, 2), [5.0, 5.0])
        target = constant_net((1, 2, 2, 2), [20.0, -3.0])
        b = make_batch([[0.0]], [0], [10.0], [[0.0]], steps=[2])
        td = td_error_multistep(b, main, target, 0.9)
        assert td[0] == pytest.approx(10 + 0.9 ** 3 * 20 - 5, abs=1e-12)
        assert td[0] == pytest.approx(19.58, abs=1e-12)

    def test_terminal_goal(self):
        main = QNetwork.zeros((1, 2, 2, 2))
        target = constant_net((1, 2, 2, 2), [99.0, 99.0])
        b = make_batch([[0.0]], [1], [500.0], [[0.0]], terminals=[True])
        assert td_error_multistep(b, main, target, 0.9)[0] == 500.0

    def test_d_zero_is_onestep_bitwise(self):
        rng = np.random.default_rng(4)
        main, target = QNetwork(rng=rng), QNetwork(rng=rng)
        b = random_batch(rng, n=200, sizes=(10, 64, 64, 8))
        b.steps[:] = 0
        np.testing.assert_array_equal(td_error_multistep(b, main, target, 0.9),
                                      td_error_onestep(b, main, target, 0.9))


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        sizes = (10, 8, 8, 8)
        main, target = QNetwork(sizes, rng=rng), QNetwork(sizes, rng=rng)
        b = random_batch(rng, sizes=sizes)
        td = td_error_multistep(b, main, target, 0.9)
        y = td + main.forward(b.states)[np.arange(len(b)), b.actions]
        grads = loss_gradients(main, b, td, b.weights)
        h = 1e-5
        for p, g in zip(main.params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = weighted_td_loss(main, b, y, b.weights)
                p[idx] = old - h
                down = weighted_td_loss(main, b, y, b.weights)
                p[idx] = old
                num = (up - down) / (2 * h)
                assert abs(num - g[idx]) <= 1e-4 * max(1.0, abs(num), abs(g[idx]))

    def test_output_unit_gradient_is_minus_delta(self):
        net = QNetwork((1, 2, 2, 2), rng=np.random.default_rng(0))
        target = net.copy()
        b = make_batch([[0.3]], [1], [4.0], [[0.3]])
        td = td_error_multistep(b, net, target, 0.9)
        grads = loss_gradients(net, b, td, b.weights)
        # the output bias of the chosen action sees dL/dQ directly
        assert grads[-1][1] == pytest.approx(-td[0], rel=1e-12)
        assert grads[-1][0] == 0.0

    def test_zero_lr_and_zero_weights(self):
        rng = np.random.default_rng(1)
        main = QNetwork(rng=rng)
        target = main.copy()
        b = random_batch(rng, sizes=(10, 64, 64, 8))
        before = [p.copy() for p in main.params]
        td = train_step(main, target, b, TrainConfig(lr=0.0))
        assert td.shape == (len(b),)
        for p, q in zip(before, main.params):
            np.testing.assert_array_equal(p, q)
        train_step(main, target, b, TrainConfig(), weights=np.zeros(len(b)))
        for p, q in zip(before, main.params):
            np.testing.assert_array_equal(p, q)

    def test_clipping_bounds_step(self):
        rng = np.random.default_rng(2)
        main = QNetwork(rng=rng)
        target = main.copy()
        b = random_batch(rng, sizes=(10, 64, 64, 8))
        b.rewards[:] = 1e4
        before = [p.copy() for p in main.params]
        train_step(main, target, b, TrainConfig(lr=1e-3, grad_clip=10.0))
        step = np.sqrt(sum(np.sum((p - q) ** 2) for p, q in zip(before, main.params)))
        assert step == pytest.approx(1e-3 * 10.0, rel=1e-9)

    def test_non_finite_aborts(self):
        main = QNetwork(rng=np.random.default_rng(0))
        target = main.copy()
        b = make_batch(np.zeros((1, 10)), [0], [np.inf], np.zeros((1, 10)))
        before = [p.copy() for p in main.params]
        with pytest.raises(TrainingError):
            train_step(main, target, b, TrainConfig())
        for p, q in zip(before, main.params):
            np.testing.assert_array_equal(p, q)

    def test_td_measured_before_update(self):
        rng = np.random.default_rng(5)
        main = QNetwork(rng=rng)
        target = main.copy()
        b = random_batch(rng, sizes=(10, 64, 64, 8))
        expected = td_error_multistep(b, main, target, 0.9)
        np.testing.assert_array_equal(train_step(main, target, b, TrainConfig()), expected)


class TestTarget:
    def test_sync(self):
        rng = np.random.default_rng(0)
        main, target = QNetwork(rng=rng), QNetwork(rng=rng)
        sync_target(main, target)
        s = rng.normal(size=(4, 10))
        np.testing.assert_array_equal(main.forward(s), target.forward(s))
        sync_target(main, target)
        np.testing.assert_array_equal(main.forward(s), target.forward(s))
        frozen = target.forward(s)
        train_step(main, target, random_batch(rng, sizes=(10, 64, 64, 8)), TrainConfig())
        np.testing.assert_array_equal(target.forward(s), frozen)
        assert not np.array_equal(main.forward(s), frozen)

    def test_mismatch(self):
        with pytest.raises(ValueError, match="architecture"):
            sync_target(QNetwork.zeros(), QNetwork.zeros((10, 32, 32, 8)))


class TestEpsilonGreedy:
    def test_greedy(self):
        net = constant_net((10, 4, 4, 8), [0, 1, 2, 3, 4, 9, 1, 0])
        rng = np.random.default_rng(0)
        assert all(select_action_epsilon_greedy(net, np.zeros(10), 0.0, rng) == 5 for _ in range(20))

    def test_ties_lowest_index(self):
        net = QNetwork.zeros((10, 4, 4, 8))
        assert select_action_epsilon_greedy(net, np.zeros(10), 0.0, np.random.default_rng(0)) == 0

    def test_uniform_when_epsilon_one(self):
        net = constant_net((10, 4, 4, 8), [0, 1, 2, 3, 4, 9, 1, 0])
        rng = np.random.default_rng(1)
        counts = np.bincount([select_action_epsilon_greedy(net, np.zeros(10), 1.0, rng)
                              for _ in range(100_000)], minlength=8)
        assert np.all(np.abs(counts - 12_500) <= 3 * np.sqrt(100_000 * (1 / 8) * (7 / 8)))
        assert chisquare(counts).pvalue > 0.01

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            select_action_epsilon_greedy(QNetwork.zeros(), np.zeros(10), 1.5, np.random.default_rng(0))


def two_state_mdp():
    """Action 0 stays, action 1 switches; rewards r[s, a]."""
    R = np.array([[0.0, 1.0], [2.0, 0.0]])
    nxt = np.array([[0, 1], [1, 0]])
    return R, nxt


def value_iteration(R, nxt, gamma, tol=1e-13):
    Q = np.zeros_like(R)
    while True:
        new = R + gamma * Q[nxt].max(axis=2)
        if np.abs(new - Q).max() < tol:
            return new
        Q = new


def test_two_state_mdp_converges():
    R, nxt = two_state_mdp()
    gamma = 0.9
    Q_star = value_iteration(R, nxt, gamma)
    np.testing.assert_allclose(Q_star, [[17.1, 19.0], [20.0, 17.1]], atol=1e-10)
    S = np.eye(2)
    b = make_batch(np.repeat(S, 2, axis=0), [0, 1, 0, 1], R.ravel(), S[nxt.ravel()])
    net = QNetwork((2, 16, 2), rng=np.random.default_rng(0))
    target = net.copy()
    cfg = TrainConfig(lr=0.05, gamma=gamma, target_sync=20, grad_clip=0.0)
    for i in range(1, 8001):
        train_step(net, target, b, cfg)
        if i % cfg.target_sync == 0:
            sync_target(net, target)
    assert np.abs(net.forward(S) - Q_star).max() < 1e-2


def test_checkpoint_roundtrip(tmp_path):
    net = QNetwork(rng=np.random.default_rng(0))
    path = tmp_path / "ck.json"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.sizes == net.sizes
    for p, q in zip(net.params, back.params):
        np.testing.assert_array_equal(p, q)
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(path)
