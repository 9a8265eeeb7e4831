"""Fully connected Q-value network in plain numpy with hand-written backprop."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .env import N_ACTIONS, STATE_DIM


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    gamma: float = 0.9
    target_sync: int = 100
    hidden: int = 64
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.target_sync < 1:
            raise ValueError("target_sync must be at least 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


class QNetwork:
    """ReLU MLP ``in -> hidden -> hidden -> out`` with a linear output layer.

    ``params`` is the flat list ``[W1, b1, W2, b2, W3, b3]`` with ``W`` of
    shape (fan_in, fan_out).
    """

    def __init__(self, sizes=(STATE_DIM, 64, 64, N_ACTIONS), params=None, rng=None):
        self.sizes = tuple(int(s) for s in sizes)
        if params is None:
            rng = np.random.default_rng() if rng is None else rng
            params = []
            for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
                params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
                params.append(np.zeros(fan_out))
        self.params = [np.array(p, dtype=float) for p in params]
        self._check_shapes()

    def _check_shapes(self):
        expected = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            expected += [(fan_in, fan_out), (fan_out,)]
        got = [p.shape for p in self.params]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match layer sizes {self.sizes}")

    @classmethod
    def zeros(cls, sizes=(STATE_DIM, 64, 64, N_ACTIONS)):
        net = cls(sizes, rng=np.random.default_rng(0))
        net.params = [np.zeros_like(p) for p in net.params]
        return net

    def copy(self) -> "QNetwork":
        return QNetwork(self.sizes, [p.copy() for p in self.params])

    def _prep(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input dimension {self.sizes[0]}, got {X.shape[-1]}")
        return X

    def forward(self, X) -> np.ndarray:
        X = self._prep(X)
        h = X
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def _forward_cached(self, X):
        acts, pre = [X], []
        h = X
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            z = h @ self.params[2 * k] + self.params[2 * k + 1]
            pre.append(z)
            h = np.maximum(z, 0.0) if k < n_layers - 1 else z
            acts.append(h)
        return acts, pre

    def backward(self, X, grad_out) -> list[np.ndarray]:
        """Parameter gradients of ``sum(grad_out * forward(X))``."""
        X = np.atleast_2d(self._prep(X))
        acts, pre = self._forward_cached(X)
        grads = [None] * len(self.params)
        g = np.atleast_2d(grad_out)
        for k in range(len(self.params) // 2 - 1, -1, -1):
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.params[2 * k].T) * (pre[k - 1] > 0)
        return grads

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params)

    def to_dict(self) -> dict:
        return {
            "format": "perdpp-qnet",
            "version": 1,
            "layer_sizes": list(self.sizes),
            "params": [p.ravel().tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QNetwork":
        if data.get("format") != "perdpp-qnet":
            raise ValueError("not a perdpp-qnet checkpoint")
        sizes = data["layer_sizes"]
        shapes = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        if len(data["params"]) != len(shapes):
            raise ValueError("checkpoint parameter count does not match layer sizes")
        params = [np.asarray(flat, dtype=float).reshape(shape)
                  for flat, shape in zip(data["params"], shapes)]
        return cls(sizes, params)


def save_checkpoint(net: QNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh)


def load_checkpoint(path) -> QNetwork:
    with open(path, encoding="utf-8") as fh:
        return QNetwork.from_dict(json.load(fh))


def sync_target(main: QNetwork, target: QNetwork) -> None:
    if main.sizes != target.sizes:
        raise ValueError(f"architecture mismatch: {main.sizes} vs {target.sizes}")
    target.params = [p.copy() for p in main.params]


def td_error_onestep(batch, main: QNetwork, target: QNetwork, gamma: float) -> np.ndarray:
    """``r + gamma * max_a Q_T(s', a) - Q(s, a)``, ignoring the step counts."""
    q = main.forward(batch.states)[np.arange(len(batch)), batch.actions]
    boot = np.where(batch.terminals, 0.0, target.forward(batch.next_states).max(axis=1))
    return batch.rewards + gamma * boot - q


def td_error_multistep(batch, main: QNetwork, target: QNetwork, gamma: float) -> np.ndarray:
    """``R + gamma^(d+1) * max_a Q_T(s', a) - Q(s, a)``; terminal next states drop the bootstrap."""
    q = main.forward(batch.states)[np.arange(len(batch)), batch.actions]
    boot = np.where(batch.terminals, 0.0, target.forward(batch.next_states).max(axis=1))
    return batch.rewards + gamma ** (batch.steps + 1) * boot - q


def weighted_td_loss(main: QNetwork, batch, td_target: np.ndarray, weights) -> float:
    """``sum_j w_j (y_j - Q(s_j, a_j))^2 / (2 B)`` with a fixed target ``y``."""
    q = main.forward(batch.states)[np.arange(len(batch)), batch.actions]
    d = td_target - q
    return float(np.sum(np.asarray(weights) * d * d) / (2 * len(batch)))


def loss_gradients(main: QNetwork, batch, td: np.ndarray, weights) -> list[np.ndarray]:
    """Gradients of :func:`weighted_td_loss` at the point where ``td`` was measured."""
    n = len(batch)
    g_out = np.zeros((n, main.sizes[-1]))
    g_out[np.arange(n), batch.actions] = -np.asarray(weights) * td / n
    return main.backward(batch.states, g_out)


def train_step(main: QNetwork, target: QNetwork, batch, config: TrainConfig, weights=None) -> np.ndarray:
    """One clipped SGD step on the importance-weighted squared TD error.

    Returns the TD errors measured before the update.  Raises
    :class:`TrainingError` and leaves ``main`` untouched if the gradient is
    not finite.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    w = batch.weights if weights is None else np.asarray(weights, dtype=float)
    # non-finite values are detected below, so numpy's warnings add nothing
    with np.errstate(invalid="ignore", over="ignore"):
        td = td_error_multistep(batch, main, target, config.gamma)
        grads = loss_gradients(main, batch, td, w)
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if not np.isfinite(norm):
        raise TrainingError("non-finite gradient; update aborted")
    scale = config.lr
    if config.grad_clip and norm > config.grad_clip:
        scale = config.lr * config.grad_clip / norm
    if scale != 0.0:
        new = [p - scale * g for p, g in zip(main.params, grads)]
        if not all(np.isfinite(p).all() for p in new):
            raise TrainingError("update produced non-finite parameters")
        main.params = new
    return td


def select_action_epsilon_greedy(net: QNetwork, state, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability ``epsilon``, else the lowest-index argmax."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    x = state.encode() if hasattr(state, "encode") else state
    if rng.random() < epsilon:
        return int(rng.integers(net.sizes[-1]))
    return int(np.argmax(net.forward(x)))
