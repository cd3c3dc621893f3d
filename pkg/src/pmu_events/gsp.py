"""Spectral ordering of PMUs so that strongly correlated sensors sit side by side.

Positions ``d`` on a line are chosen to minimise the correlation-weighted spread
``1/2 sum_ij W_ij (d_i - d_j)^2`` subject to ``|d| = 1`` and ``d . 1 = 0``.
Since that spread equals ``d^T L d`` for the graph Laplacian ``L = D - W``, the
minimiser is the Laplacian eigenvector of the second-smallest eigenvalue, and
PMUs are sorted by its entries.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .core import N_CHANNELS, PqvfTensor
from .errors import AsymmetryError, DegenerateChannel, DimensionError, DisconnectedGraph, LengthMismatch

CONNECTED_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CorrelationGraph:
    weights: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class PmuOrdering:
    permutation: np.ndarray
    fiedler: np.ndarray
    lambda2: float

    @property
    def inverse(self) -> np.ndarray:
        return np.argsort(self.permutation)

    def to_json(self) -> dict:
        return {"permutation": [int(i) for i in self.permutation],
                "fiedler": [float(v) for v in self.fiedler],
                "lambda2": float(self.lambda2)}

    @classmethod
    def from_json(cls, d) -> "PmuOrdering":
        return cls(np.asarray(d["permutation"], dtype=np.int64),
                   np.asarray(d["fiedler"], dtype=np.float64), float(d["lambda2"]))

    @classmethod
    def identity(cls, n: int) -> "PmuOrdering":
        return cls(np.arange(n), np.full(n, np.nan), float("nan"))


def pairwise_correlation(tensors) -> np.ndarray:
    """Mean absolute Pearson correlation between PMUs over the four channels.

    Samples from all tensors are concatenated in time.  A channel with zero
    variance at either PMU of a pair is left out of that pair's average; a pair
    with no usable channel gets weight 0.
    """
    tensors = list(tensors)
    if not tensors:
        raise ValueError("need at least one tensor")
    n = tensors[0].data.shape[1]
    if any(t.data.shape[1] != n for t in tensors):
        raise DimensionError("tensors disagree on the number of PMUs")
    stacked = np.concatenate([np.asarray(t.data, dtype=np.float64) for t in tensors], axis=0)
    if stacked.shape[0] < 2:
        raise ValueError("need at least two time samples to correlate")
    total = np.zeros((n, n))
    count = np.zeros((n, n))
    for c in range(N_CHANNELS):
        x = stacked[:, :, c]
        x = x - x.mean(axis=0)
        norm = np.sqrt((x * x).sum(axis=0))
        ok = norm > 0
        if not ok.all():
            warnings.warn(f"channel {c}: {int((~ok).sum())} PMU(s) with zero variance excluded",
                          DegenerateChannel, stacklevel=2)
        safe = np.where(ok, norm, 1.0)
        r = np.abs((x.T @ x) / np.outer(safe, safe))
        valid = np.outer(ok, ok)
        total += np.where(valid, np.minimum(r, 1.0), 0.0)
        count += valid
    W = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    return W


def build_graph(W) -> CorrelationGraph:
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"weight matrix must be square, got {W.shape}")
    if np.max(np.abs(W - W.T), initial=0.0) > 1e-12:
        raise AsymmetryError("weight matrix is not symmetric")
    if np.any(W < 0) or not np.all(np.isfinite(W)):
        raise ValueError("weights must be finite and nonnegative")
    if np.any(np.diag(W) != 0):
        raise ValueError("weight matrix must have a zero diagonal")
    deg = W.sum(axis=1)
    D = np.diag(deg)
    L = D - W
    for a in (W, D, L):
        a.setflags(write=False)
    return CorrelationGraph(W, D, L)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def fiedler_order(graph: CorrelationGraph) -> PmuOrdering:
    n = graph.n
    if n < 2:
        raise DimensionError("need at least two PMUs to order")
    vals, vecs = np.linalg.eigh(graph.laplacian)
    lam2 = float(vals[1])
    if lam2 <= CONNECTED_TOL:
        k, labels = connected_components(graph.weights > 0, directed=False)
        comps = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(k)]
        raise DisconnectedGraph(f"graph has {k} connected components; order them separately", comps)
    d = vecs[:, 1].copy()
    # eigh already returns d orthogonal to the constant vector; remove roundoff
    d -= d.mean()
    d /= np.linalg.norm(d)
    d = _canonical_sign(d)
    # ties (to 1e-12) resolve by ascending PMU index
    perm = np.argsort(np.round(d, 12), kind="stable")
    return PmuOrdering(perm, d, lam2)


def sort_pmus(tensors) -> tuple[PmuOrdering, np.ndarray]:
    """Correlation, graph, eigenvector, sort: returns the ordering and the weight matrix."""
    W = pairwise_correlation(tensors)
    return fiedler_order(build_graph(W)), W


def apply_order(tensor: PqvfTensor, ordering) -> PqvfTensor:
    perm = np.asarray(getattr(ordering, "permutation", ordering))
    if perm.shape != (tensor.n_pmus,):
        raise LengthMismatch(f"ordering has {perm.size} entries for {tensor.n_pmus} PMUs")
    if not np.array_equal(np.sort(perm), np.arange(tensor.n_pmus)):
        raise ValueError("ordering is not a permutation")
    return tensor.replace(data=tensor.data[:, perm, :],
                          pmu_ids=tuple(tensor.pmu_ids[i] for i in perm))


def permute_weights(W, ordering) -> np.ndarray:
    perm = np.asarray(getattr(ordering, "permutation", ordering))
    return np.asarray(W)[np.ix_(perm, perm)]
