"""Gaussian similarity kernels and greedy MAP selection for determinantal point processes.

The greedy selector keeps an incremental Cholesky factor of the selected
submatrix, so each step costs O(N k) instead of a fresh determinant per
candidate.  :func:`brute_force_map` is the exhaustive oracle used in tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

STOP_TOL = 1e-10
ORACLE_MAX_N = 20


class KernelError(ValueError):
    """Raised for invalid kernel inputs or a kernel that is not positive definite."""


@dataclass
class KernelMatrix:
    entries: np.ndarray
    sigma: float = 1.0
    jitter: float = 1e-6

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def submatrix(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return self.entries[np.ix_(idx, idx)]


def _as_feature_array(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        if features.ndim != 2:
            raise KernelError("features must be a 2-d array or a list of vectors")
        if features.shape[0] == 0:
            raise KernelError("empty batch")
        X = features.astype(float, copy=False)
    else:
        rows = [np.asarray(f, dtype=float).ravel() for f in features]
        if not rows:
            raise KernelError("empty batch")
        dim = rows[0].shape[0]
        for i, r in enumerate(rows):
            if r.shape[0] != dim:
                raise KernelError(
                    f"feature vector {i} has dimension {r.shape[0]}, expected {dim}"
                )
        X = np.vstack(rows)
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise KernelError(f"feature vector {int(np.flatnonzero(bad)[0])} has non-finite entries")
    return X


def build_kernel(features, sigma: float = 1.0, jitter: float = 1e-6, quality=None) -> KernelMatrix:
    """Gaussian kernel ``exp(-|f_i - f_j|^2 / (2 sigma^2))`` with ``jitter`` on the diagonal.

    Parameters
    ----------
    features : array-like of shape (n, F) or list of vectors
    sigma : float
        Bandwidth, must be positive.
    jitter : float
        Added to the diagonal so duplicate rows keep the matrix positive definite.
    quality : array-like of shape (n,), optional
        If given, entries are rescaled to ``q_i K_ij q_j``.
    """
    if not sigma > 0:
        raise KernelError("sigma must be positive")
    if jitter < 0:
        raise KernelError("jitter must be non-negative")
    X = _as_feature_array(features)
    n = X.shape[0]
    if n == 1:
        K = np.ones((1, 1))
    else:
        # pdist returns the upper triangle once; squareform mirrors it exactly
        K = squareform(np.exp(-pdist(X, "sqeuclidean") / (2.0 * sigma * sigma)))
        np.fill_diagonal(K, 1.0)
    K[np.diag_indices(n)] += jitter
    if quality is not None:
        q = np.asarray(quality, dtype=float)
        if q.shape != (n,) or not np.isfinite(q).all() or (q <= 0).any():
            raise KernelError("quality must be a positive finite vector of length n")
        K = q[:, None] * K * q[None, :]
    return KernelMatrix(K, float(sigma), float(jitter))


def _entries(K) -> np.ndarray:
    if isinstance(K, KernelMatrix):
        return K.entries
    A = np.asarray(K, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise KernelError("kernel must be a square matrix")
    return A


@dataclass
class GreedyState:
    """Running state of fast greedy MAP inference.

    ``cis[k]`` holds the k-th Cholesky row entries for every candidate and
    ``d2`` the current Schur complements (marginal gains before the log).
    ``pivots[k]`` is the d_i of the k-th selected item.
    """

    kernel: np.ndarray
    capacity: int
    stop_tol: float = STOP_TOL
    selected: list = field(default_factory=list)
    pivots: list = field(default_factory=list)
    cis: np.ndarray = None
    d2: np.ndarray = None
    active: np.ndarray = None

    def __post_init__(self):
        n = self.kernel.shape[0]
        if self.cis is None:
            self.cis = np.zeros((self.capacity, n))
        if self.d2 is None:
            self.d2 = np.diag(self.kernel).astype(float).copy()
        if self.active is None:
            self.active = np.ones(n, dtype=bool)

    @property
    def k(self) -> int:
        return len(self.selected)

    def gains(self) -> np.ndarray:
        """log(d_j^2) per candidate; -inf for selected or frozen candidates."""
        out = np.full(self.d2.shape, -np.inf)
        ok = self.active & (self.d2 > self.stop_tol)
        out[ok] = np.log(self.d2[ok])
        return out

    def best(self):
        """Index with the largest marginal gain, lowest index on ties; None when exhausted."""
        masked = np.where(self.active, self.d2, -np.inf)
        j = int(np.argmax(masked))
        if not masked[j] > self.stop_tol:
            return None
        return j

    def add(self, i: int) -> None:
        if self.k >= self.capacity:
            raise KernelError("greedy state is full")
        if not self.active[i]:
            raise KernelError(f"candidate {i} already selected")
        di2 = self.d2[i]
        if not di2 > self.stop_tol:
            raise KernelError(f"candidate {i} has non-positive pivot {di2!r}")
        k = self.k
        di = math.sqrt(di2)
        e = (self.kernel[i] - self.cis[:k, i] @ self.cis[:k]) / di
        self.cis[k] = e
        self.d2 = self.d2 - e * e
        self.selected.append(i)
        self.pivots.append(di)
        self.active[i] = False
        self.d2[i] = 0.0

    def factor(self) -> np.ndarray:
        """Lower-triangular V with V V^T = K_Y for the current selection."""
        k = self.k
        if k == 0:
            raise KernelError("no items selected")
        sel = np.asarray(self.selected)
        V = np.tril(self.cis[:k, sel].T, -1)
        V[np.diag_indices(k)] = self.pivots
        return V


def greedy_start(K, M: int, stop_tol: float = STOP_TOL) -> GreedyState:
    A = _entries(K)
    n = A.shape[0]
    if n == 0:
        raise KernelError("empty batch")
    if M < 1:
        raise KernelError("M must be at least 1")
    return GreedyState(A, min(M, n), stop_tol)


def greedy_map_select(K, M: int, stop_tol: float = STOP_TOL) -> list[int]:
    """Select up to ``M`` items greedily maximising ``log det(K_Y)``.

    Each step picks the candidate with the largest ``d_j^2`` (lowest index on
    ties) and updates every remaining candidate with one new Cholesky entry.
    Returns fewer than ``M`` items if all remaining pivots drop to ``stop_tol``.
    """
    state = greedy_start(K, M, stop_tol)
    if not state.d2.max() > stop_tol:
        raise KernelError("kernel not positive definite")
    while state.k < state.capacity:
        j = state.best()
        if j is None:
            break
        state.add(j)
    return list(state.selected)


def reconstruct(state: GreedyState) -> np.ndarray:
    V = state.factor()
    return V @ V.T


def brute_force_map(K, M: int) -> tuple[int, ...]:
    """Exhaustive MAP: the size-``M`` subset with the largest determinant.

    Ties go to the lexicographically first subset.  Only for N <= 20.
    """
    A = _entries(K)
    n = A.shape[0]
    if n > ORACLE_MAX_N:
        raise KernelError("oracle limited to small N")
    if not 1 <= M <= n:
        raise KernelError(f"M must lie in [1, {n}]")
    best, best_det = None, -np.inf
    for subset in itertools.combinations(range(n), M):
        det = np.linalg.det(A[np.ix_(subset, subset)])
        if det > best_det:
            best, best_det = subset, det
    return best


class DPPSelector(BaseEstimator):
    """Pick a diverse subset of rows with fast greedy MAP inference.

    Parameters
    ----------
    n_select : int
        Number of rows to keep.
    sigma, jitter : float
        Gaussian kernel bandwidth and diagonal jitter.

    Attributes
    ----------
    kernel_ : KernelMatrix
    selected_indices_ : ndarray of int, in selection order
    """

    def __init__(self, n_select: int = 32, sigma: float = 1.0, jitter: float = 1e-6):
        self.n_select = n_select
        self.sigma = sigma
        self.jitter = jitter

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if self.n_select < 1:
            raise ValueError("n_select must be at least 1")
        self.kernel_ = build_kernel(X, self.sigma, self.jitter)
        self.selected_indices_ = np.asarray(
            greedy_map_select(self.kernel_, min(self.n_select, X.shape[0])), dtype=int
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_indices_")
        X = check_array(X, dtype=float)
        if X.shape[0] != self.kernel_.n:
            raise ValueError("transform expects the rows the selector was fitted on")
        return X[self.selected_indices_]

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


def planted_kernel(n: int, m: int, rng: np.random.Generator, min_gap: float = 0.10,
                   max_tries: int = 1000):
    """Random PSD kernel whose best size-``m`` subset is known.

    ``m`` planted items get unit quality and near-orthogonal directions; the
    other items are noisy, lower-quality copies of planted directions.
    Draws are rejected until the planted subset's determinant beats every
    other subset by at least ``min_gap`` (relative).  Returns
    ``(K, planted_indices)`` with the indices sorted.
    """
    if not 1 <= m <= n <= ORACLE_MAX_N:
        raise KernelError("need 1 <= m <= n <= 20")
    for _ in range(max_tries):
        basis = np.linalg.qr(rng.normal(size=(n, n)))[0]
        vecs = np.empty((n, n))
        quality = np.empty(n)
        vecs[:m] = basis[:m] + 0.05 * rng.normal(size=(m, n))
        quality[:m] = 1.0
        parents = rng.integers(0, m, size=n - m)
        vecs[m:] = basis[parents] + 0.6 * rng.normal(size=(n - m, n))
        quality[m:] = rng.uniform(0.4, 0.85, size=n - m)
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        perm = rng.permutation(n)
        vecs, quality = vecs[perm], quality[perm]
        K = (quality[:, None] * vecs) @ (quality[:, None] * vecs).T
        K = (K + K.T) / 2
        planted = tuple(sorted(int(np.flatnonzero(perm == i)[0]) for i in range(m)))
        dets = sorted((np.linalg.det(K[np.ix_(s, s)]), s)
                      for s in itertools.combinations(range(n), m))
        best_det, best = dets[-1]
        runner = dets[-2][0] if len(dets) > 1 else 0.0
        if best == planted and best_det >= (1.0 + min_gap) * runner:
            return K, planted
    raise KernelError("could not plant a kernel with the requested gap")
