"""Elastic multi-step transitions gated by density clustering of Q-vectors.

Rewards keep accumulating (``R += gamma^d r``) while the Q-vectors of the
origin state and the latest state fall in different clusters of the memory
bank; a transition is committed once they share a cluster label, the step
cap is reached, or the episode ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import NOISE, hdbscan_labels
from .replay import Transition


@dataclass
class ElasticConfig:
    gamma: float = 0.9
    d_max: int = 8
    min_cluster_size: int = 5
    bank_capacity: int = 256
    cluster_every: int = 1

    def __post_init__(self):
        if self.d_max < 0:
            raise ValueError("d_max must be non-negative")
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be at least 2")
        if self.bank_capacity < 2 * self.min_cluster_size:
            raise ValueError("bank_capacity must hold at least 2 * min_cluster_size points")
        if self.cluster_every < 1:
            raise ValueError("cluster_every must be at least 1")


class MemoryBank:
    """Ring buffer of Q-vectors; :meth:`points` returns them oldest first."""

    def __init__(self, capacity: int = 256, dim: int = 8):
        self.capacity = capacity
        self.dim = dim
        self._data = np.zeros((capacity, dim))
        self._cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, q) -> None:
        q = np.asarray(q, dtype=float).ravel()
        if q.shape != (self.dim,) or not np.isfinite(q).all():
            raise ValueError("Q-vector must be finite with the bank's dimension")
        self._data[self._cursor] = q
        self._cursor = (self._cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def points(self) -> np.ndarray:
        if self.size < self.capacity:
            return self._data[:self.size].copy()
        return np.roll(self._data, -self._cursor, axis=0)


def cluster_qvectors(bank, min_cluster_size: int = 5) -> np.ndarray:
    """HDBSCAN labels for the bank's Q-vectors (``NOISE`` = -1)."""
    X = bank.points() if isinstance(bank, MemoryBank) else np.asarray(bank, dtype=float)
    if len(X) < 2:
        raise ValueError("bank too small")
    return hdbscan_labels(X, min_cluster_size)


def same_cluster(labels, i: int, j: int) -> bool:
    """True iff points ``i`` and ``j`` share a label and neither is noise."""
    a, b = labels[i], labels[j]
    return bool(a == b and a != NOISE)


@dataclass
class ElasticAccumulator:
    gamma: float = 0.9
    state: object = None
    action: int = None
    reward: float = 0.0
    d: int = 0
    reward_log: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.state is None

    def start(self, state, action: int) -> None:
        self.state, self.action = state, action
        self.reward, self.d = 0.0, 0
        self.reward_log = []

    def add(self, r: float) -> None:
        self.reward += self.gamma ** self.d * r
        self.reward_log.append(r)

    def clear(self) -> None:
        self.state = self.action = None
        self.reward, self.d = 0.0, 0
        self.reward_log = []


@dataclass
class CommitDecision:
    committed: bool
    transition: Transition | None = None
    reason: str = ""
    index: int | None = None


class _LabelCache:
    """Labels from the last full clustering, extended to new points by nearest neighbour."""

    def __init__(self):
        self.points = None
        self.labels = None

    def refresh(self, points, labels):
        self.points, self.labels = points, labels

    def label(self, q) -> int:
        d = np.sum((self.points - q) ** 2, axis=1)
        return int(self.labels[int(np.argmin(d))])


class ElasticStepper:
    """Owns the memory bank and accumulator for one training run."""

    def __init__(self, config: ElasticConfig | None = None, n_actions: int = 8,
                 bank: MemoryBank | None = None, acc: ElasticAccumulator | None = None):
        self.config = config or ElasticConfig()
        self.bank = bank if bank is not None else MemoryBank(self.config.bank_capacity, n_actions)
        self.acc = acc if acc is not None else ElasticAccumulator(self.config.gamma)
        self._cache = _LabelCache()
        self._calls = 0

    def begin(self, state, action: int) -> None:
        """Open an accumulation at ``(state, action)`` if none is running."""
        if self.acc.empty:
            self.acc.start(state, action)

    def _same(self, q_now, q_next) -> bool:
        cfg = self.config
        if (self._calls - 1) % cfg.cluster_every == 0 or self._cache.points is None:
            pts = self.bank.points()
            labels = hdbscan_labels(pts, cfg.min_cluster_size)
            self._cache.refresh(pts, labels)
            return same_cluster(labels, len(pts) - 2, len(pts) - 1)
        a, b = self._cache.label(q_now), self._cache.label(q_next)
        return a == b and a != NOISE

    def step(self, reward: float, q_now, q_next, next_state, terminal: bool,
             episode_end: bool, buffer=None) -> CommitDecision:
        """Record one environment step and commit a transition when warranted."""
        if self.acc.empty:
            raise RuntimeError("call begin() before step()")
        cfg = self.config
        self._calls += 1
        self.bank.push(q_now)
        self.bank.push(q_next)
        self.acc.add(reward)
        if episode_end or terminal:
            reason = "episode_end"
        elif self.acc.d >= cfg.d_max:
            reason = "d_max"
        elif len(self.bank) < 2 * cfg.min_cluster_size:
            reason = "warmup"
        elif self._same(q_now, q_next):
            reason = "same_cluster"
        else:
            self.acc.d += 1
            return CommitDecision(False)
        t = Transition(self.acc.state, int(self.acc.action), float(self.acc.reward),
                       next_state, self.acc.d, bool(terminal))
        idx = buffer.push(t) if buffer is not None else None
        self.acc.clear()
        return CommitDecision(True, t, reason, idx)


def elastic_step(acc: ElasticAccumulator, reward: float, q_now, q_next, bank: MemoryBank,
                 replay_buffer, next_state, terminal: bool = False, episode_end: bool = False,
                 d_max: int = 8, min_cluster_size: int = 5) -> CommitDecision:
    """Functional form of :meth:`ElasticStepper.step` with explicit state."""
    config = ElasticConfig(acc.gamma, d_max, min_cluster_size,
                           max(bank.capacity, 2 * min_cluster_size))
    stepper = ElasticStepper(config, bank.dim, bank=bank, acc=acc)
    return stepper.step(reward, q_now, q_next, next_state, terminal, episode_end, replay_buffer)
