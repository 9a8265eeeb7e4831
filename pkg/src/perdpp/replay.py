"""Proportional prioritized replay and the two-stage priority -> diversity sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import N_ACTIONS, STATE_DIM, STATE_SCALE, EnvState
from .kernel import build_kernel, greedy_map_select

REWARD_SCALE = 500.0
FEATURE_DIM = STATE_DIM + N_ACTIONS + 1 + 2


class ReplayError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    """One committed replay record: ``steps + 1`` environment steps from ``state``.

    ``reward`` is the discounted sum of the rewards it spans and ``terminal``
    marks a next state that ends the episode (no bootstrap).
    """

    state: EnvState
    action: int
    reward: float
    next_state: EnvState
    steps: int = 0
    terminal: bool = False


class SumTree:
    """Binary sum tree over a power-of-two number of leaves."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ReplayError("capacity must be at least 1")
        self.capacity = capacity
        self.n_leaves = 1 << max(0, (capacity - 1).bit_length())
        self.nodes = np.zeros(2 * self.n_leaves)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.n_leaves:self.n_leaves + self.capacity]

    def set(self, idx: int, value: float) -> None:
        i = idx + self.n_leaves
        self.nodes[i] = value
        i >>= 1
        while i >= 1:
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            i >>= 1

    def set_many(self, idx, values) -> None:
        """Batched :meth:`set` for distinct indices."""
        nodes = np.asarray(idx, dtype=np.int64) + self.n_leaves
        self.nodes[nodes] = values
        while nodes.size and nodes[0] > 1:
            nodes = np.unique(nodes >> 1)
            self.nodes[nodes] = self.nodes[2 * nodes] + self.nodes[2 * nodes + 1]

    def rebuild(self) -> np.ndarray:
        """Internal sums recomputed bottom-up from the leaves."""
        out = self.nodes.copy()
        for i in range(self.n_leaves - 1, 0, -1):
            out[i] = out[2 * i] + out[2 * i + 1]
        return out

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each mass value."""
        mass = np.array(mass, dtype=float)
        node = np.ones(mass.shape, dtype=np.int64)
        for _ in range(self.n_leaves.bit_length() - 1):
            left = 2 * node
            lsum = self.nodes[left]
            go_right = (mass >= lsum) & (self.nodes[left + 1] > 0)
            mass = np.where(go_right, mass - lsum, mass)
            node = np.where(go_right, left + 1, left)
        return node - self.n_leaves


@dataclass
class SampledBatch:
    indices: np.ndarray
    transitions: list
    probabilities: np.ndarray
    weights: np.ndarray
    states: np.ndarray = field(repr=False, default=None)
    actions: np.ndarray = field(repr=False, default=None)
    rewards: np.ndarray = field(repr=False, default=None)
    next_states: np.ndarray = field(repr=False, default=None)
    steps: np.ndarray = field(repr=False, default=None)
    terminals: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.indices)

    def subset(self, positions) -> "SampledBatch":
        p = np.asarray(positions, dtype=int)
        return SampledBatch(
            self.indices[p], [self.transitions[i] for i in p], self.probabilities[p],
            self.weights[p], self.states[p], self.actions[p], self.rewards[p],
            self.next_states[p], self.steps[p], self.terminals[p],
        )

    @classmethod
    def from_transitions(cls, transitions, weights=None) -> "SampledBatch":
        """Batch built directly from transitions (uniform probabilities)."""
        n = len(transitions)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        return cls(
            np.arange(n), list(transitions), np.full(n, 1.0 / n), w,
            np.array([t.state.encode() for t in transitions]),
            np.array([t.action for t in transitions], dtype=int),
            np.array([t.reward for t in transitions], dtype=float),
            np.array([t.next_state.encode() for t in transitions]),
            np.array([t.steps for t in transitions], dtype=int),
            np.array([t.terminal for t in transitions], dtype=bool),
        )


def transition_features(batch: SampledBatch) -> np.ndarray:
    """Similarity features: encoded state, one-hot action, reward/500, next (dx, dy)."""
    n = len(batch)
    out = np.zeros((n, FEATURE_DIM))
    out[:, :STATE_DIM] = batch.states
    out[np.arange(n), STATE_DIM + batch.actions] = 1.0
    out[:, STATE_DIM + N_ACTIONS] = batch.rewards / REWARD_SCALE
    out[:, STATE_DIM + N_ACTIONS + 1:] = batch.next_states[:, :2]
    return out


def importance_weights(probabilities, size: int, beta: float) -> np.ndarray:
    """``(N P(j))^-beta`` divided by the batch maximum."""
    raw = (size * np.asarray(probabilities, dtype=float)) ** (-beta)
    return raw / raw.max()


@dataclass
class KernelConfig:
    sigma: float = 1.0
    jitter: float = 1e-6
    use_quality: bool = False


def _check_finite_transition(t: Transition):
    if not math.isfinite(t.reward):
        raise ReplayError("transition reward is not finite")
    if not (0 <= int(t.action) < N_ACTIONS):
        raise ReplayError(f"invalid action {t.action!r}")
    if t.steps < 0:
        raise ReplayError("step count must be non-negative")
    for s in (t.state, t.next_state):
        if not (math.isfinite(s.dx) and math.isfinite(s.dy)):
            raise ReplayError("transition state is not finite")


def diverse_positions(buffer, batch: SampledBatch, final_size: int,
                      kernel: KernelConfig | None = None) -> list[int]:
    """Positions within ``batch`` picked by greedy MAP over the transition kernel."""
    kernel = kernel or KernelConfig()
    if final_size < 1:
        raise ReplayError("final size must be at least 1")
    if final_size > len(batch):
        raise ReplayError("candidate size must be at least the final size")
    quality = None
    if kernel.use_quality:
        p = buffer.priorities[batch.indices]
        quality = p / p.max()
    K = build_kernel(transition_features(batch), kernel.sigma, kernel.jitter, quality)
    return greedy_map_select(K, final_size)


class PrioritizedReplayBuffer:
    """Ring buffer with proportional sampling ``P(j) = p_j^alpha / sum_k p_k^alpha``.

    Raw priorities ``p_j`` are kept alongside the tree, which stores ``p_j^alpha``.
    ``alpha`` is fixed per buffer; ``alpha = 0`` gives uniform replay.
    """

    def __init__(self, capacity: int = 10_000, alpha: float = 0.6, epsilon: float = 0.01):
        if not 0.0 <= alpha <= 1.0:
            raise ReplayError("alpha must lie in [0, 1]")
        if not epsilon > 0:
            raise ReplayError("epsilon must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.epsilon = epsilon
        self.tree = SumTree(capacity)
        self.priorities = np.zeros(capacity)
        self.transitions = [None] * capacity
        self._states = np.zeros((capacity, STATE_DIM))
        self._next = np.zeros((capacity, STATE_DIM))
        self._actions = np.zeros(capacity, dtype=int)
        self._rewards = np.zeros(capacity)
        self._steps = np.zeros(capacity, dtype=int)
        self._terminals = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def max_priority(self) -> float:
        if self.size == 0:
            return 1.0
        return float(self.priorities[:self.size].max())

    def _set_priority(self, idx: int, p: float) -> None:
        self.priorities[idx] = p
        self.tree.set(idx, p ** self.alpha)

    def push(self, t: Transition) -> int:
        """Store ``t`` with the current maximum priority; returns its slot."""
        _check_finite_transition(t)
        p = self.max_priority()
        idx = self.cursor
        self.transitions[idx] = t
        self._states[idx] = t.state.encode()
        self._next[idx] = t.next_state.encode()
        self._actions[idx] = t.action
        self._rewards[idx] = t.reward
        self._steps[idx] = t.steps
        self._terminals[idx] = t.terminal
        self._set_priority(idx, p)
        self.cursor = (idx + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return idx

    def probabilities(self, indices=None) -> np.ndarray:
        idx = np.arange(self.size) if indices is None else np.asarray(indices, dtype=int)
        return self.tree.nodes[self.tree.n_leaves + idx] / self.tree.total

    def gather(self, indices, probabilities, weights) -> SampledBatch:
        idx = np.asarray(indices, dtype=int)
        return SampledBatch(
            idx, [self.transitions[i] for i in idx], probabilities, weights,
            self._states[idx], self._actions[idx], self._rewards[idx],
            self._next[idx], self._steps[idx], self._terminals[idx],
        )

    def sample_proportional(self, batch_size: int, beta: float, rng: np.random.Generator) -> SampledBatch:
        """Stratified proportional draws with normalised importance weights.

        The total mass is cut into ``batch_size`` equal strata and one uniform
        draw is taken in each.  Weights are ``(N P(j))^-beta`` divided by the
        batch maximum.
        """
        if self.size == 0:
            raise ReplayError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ReplayError("batch size must be at least 1")
        if not 0.0 <= beta <= 1.0:
            raise ReplayError("beta must lie in [0, 1]")
        total = self.tree.total
        seg = total / batch_size
        mass = (np.arange(batch_size) + rng.random(batch_size)) * seg
        idx = self.tree.find(np.minimum(mass, np.nextafter(total, 0.0)))
        idx = np.minimum(idx, self.size - 1)
        probs = self.probabilities(idx)
        return self.gather(idx, probs, importance_weights(probs, self.size, beta))

    def update_priorities(self, indices, td_errors) -> None:
        """Set ``p_j = |delta_j| + epsilon`` for each sampled slot."""
        idx = np.asarray(indices, dtype=int)
        td = np.asarray(td_errors, dtype=float)
        if idx.shape != td.shape:
            raise ReplayError("indices and td_errors differ in length")
        if np.isnan(td).any():
            raise ReplayError("NaN TD error")
        if ((idx < 0) | (idx >= self.size)).any():
            raise ReplayError("priority index out of range")
        if idx.size == 0:
            return
        # repeated slots: the last error wins, as with sequential updates
        uniq, rev_pos = np.unique(idx[::-1], return_index=True)
        p = np.abs(td[::-1][rev_pos]) + self.epsilon
        self.priorities[uniq] = p
        self.tree.set_many(uniq, p ** self.alpha)

    def select_diverse(self, batch: SampledBatch, final_size: int, kernel: KernelConfig | None = None) -> SampledBatch:
        """Keep the ``final_size`` most diverse members of ``batch`` (greedy DPP MAP).

        Selection order is preserved; weights stay those of the first stage.
        """
        return batch.subset(diverse_positions(self, batch, final_size, kernel))

    def sample_per_dpp(self, candidate_size: int, final_size: int, beta: float,
                       rng: np.random.Generator, kernel: KernelConfig | None = None) -> SampledBatch:
        """Draw ``candidate_size`` by priority, then keep ``final_size`` diverse ones."""
        if candidate_size < final_size:
            raise ReplayError("candidate size must be at least the final size")
        candidates = self.sample_proportional(candidate_size, beta, rng)
        return self.select_diverse(candidates, final_size, kernel)
