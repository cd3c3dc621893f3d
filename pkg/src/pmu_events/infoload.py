"""Mutual-information estimation and the information-loaded training loss.

The estimator network ``g`` scores pairs ``(x, z)``.  Its batch estimate of
I(X; Z) in nats is the f-divergence lower bound

    mean_i g(x1_i, z1_i)  -  mean_i exp(g(x1_i, z2_i) - 1)

where ``(x1_i, z1_i)`` are joint pairs and ``z2_i`` comes from an independent
batch, so ``(x1_i, z2_i)`` follows the product of marginals.  The second term
is *subtracted*: that is what makes the expression a lower bound (some
published write-ups print a ``+`` there, which would not be a bound).

The classifier minimises ``CE - beta * I_hat``; the estimator separately
maximises ``I_hat`` over its own parameters.

Diagnostics report the information-loss bound
``2 (delta * I(X;Z) + h2(delta)) + eps`` in bits, where ``delta`` is the
conditional total variation between true and estimated class posteriors.
The optimal representation, the estimated-optimal representation and the
encoder complexity budget that appear in that theory have no runtime
counterpart here; only the computable terms are implemented.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import BatchMismatch, DomainError, OracleUnavailable, ShapeError

EXP_CLAMP = 20.0
CE_CLAMP = 1e-12


@dataclass(frozen=True)
class MieNet:
    """Compression net for x, then a two-layer head over ``[compressed x, z]``."""

    compression: tuple
    x_width: int = 10
    z_width: int = 10
    hidden: int = 200

    @property
    def head(self) -> tuple:
        return (nn.Dense(self.x_width + self.z_width, self.hidden), nn.ReLU(), nn.Dense(self.hidden, 1))

    @classmethod
    def for_snapshots(cls, in_ch: int = 4, channels=(8, 16, 32), x_width: int = 10,
                      z_width: int = 10, hidden: int = 200) -> "MieNet":
        layers = []
        c_in = in_ch
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, 2, 1), nn.ReLU()]
            c_in = c
        layers += [nn.GlobalAvgPool(), nn.Dense(c_in, x_width)]
        return cls(tuple(layers), x_width, z_width, hidden)

    @classmethod
    def for_vectors(cls, x_dim: int, z_dim: int, x_width: int = 10, hidden: int = 200) -> "MieNet":
        return cls((nn.Dense(x_dim, x_width),), x_width, z_dim, hidden)

    def init_params(self, rng, dtype=np.float32) -> dict:
        p = nn.init_params(self.compression, rng, dtype, prefix="mie.c.")
        p.update(nn.init_params(self.head, rng, dtype, prefix="mie.h."))
        return p

    def to_json(self) -> dict:
        return {"compression": nn.net_to_json(self.compression), "x_width": self.x_width,
                "z_width": self.z_width, "hidden": self.hidden}

    @classmethod
    def from_json(cls, d) -> "MieNet":
        return cls(tuple(nn.net_from_json(d["compression"])), d["x_width"], d["z_width"], d["hidden"])


@dataclass(frozen=True)
class MiBatchEstimate:
    value: float
    batch_size: int
    joint_mean: float
    marginal_mean: float


@dataclass(frozen=True)
class InfoDiagnostics:
    delta: float
    h2_delta: float
    bound_rhs: float
    epsilon_term: float


def _scores(mie: MieNet, params, x1, z1, z2):
    B = len(x1)
    if len(z1) != B or len(z2) != B:
        raise BatchMismatch(f"batch sizes differ: x1={B}, z1={len(z1)}, z2={len(z2)}")
    cx, ccache = nn.forward(mie.compression, x1, params, "mie.c.")
    pairs = np.concatenate([np.concatenate([cx, z1], axis=1), np.concatenate([cx, z2], axis=1)])
    g, hcache = nn.forward(mie.head, pairs, params, "mie.h.")
    return g[:, 0], ccache, hcache


def mi_estimate(mie: MieNet, params, x1, z1, z2) -> MiBatchEstimate:
    B = len(x1)
    g, _, _ = _scores(mie, params, x1, z1, z2)
    joint = float(np.mean(g[:B], dtype=np.float64))
    marginal = float(np.mean(np.exp(np.minimum(g[B:], EXP_CLAMP).astype(np.float64) - 1.0)))
    return MiBatchEstimate(joint - marginal, B, joint, marginal)


def mi_estimate_with_grads(mie: MieNet, params, x1, z1, z2):
    """Estimate plus gradients of its value w.r.t. the estimator parameters, z1 and z2.

    Returns ``(estimate, theta_grads, dz1, dz2)``.
    """
    B = len(x1)
    g, ccache, hcache = _scores(mie, params, x1, z1, z2)
    gj, gm = g[:B], g[B:]
    em = np.exp(np.minimum(gm, EXP_CLAMP) - 1.0)
    joint = float(np.mean(gj, dtype=np.float64))
    marginal = float(np.mean(em, dtype=np.float64))
    dg = np.empty_like(g)
    dg[:B] = 1.0 / B
    dg[B:] = np.where(gm <= EXP_CLAMP, -em / B, 0.0)
    grads, dpairs = nn.backward(mie.head, hcache, dg[:, None], params)
    w = mie.x_width
    dcx = dpairs[:B, :w] + dpairs[B:, :w]
    cgrads, _ = nn.backward(mie.compression, ccache, dcx, params)
    grads.update(cgrads)
    return MiBatchEstimate(joint - marginal, B, joint, marginal), grads, dpairs[:B, w:], dpairs[B:, w:]


def info_loss_total(ce: float, mi: float, beta: float) -> float:
    return ce - beta * mi


def mie_objective(estimate: MiBatchEstimate) -> float:
    """Minimisation target for the estimator parameters only."""
    return -estimate.value


def cross_entropy(probs, labels) -> float:
    """Batch-summed ``-log p[label]`` with probabilities clamped at 1e-12."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} do not align")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise ValueError("label out of range")
    p = probs[np.arange(len(labels)), labels].astype(np.float64)
    return float(-np.log(np.maximum(p, CE_CLAMP)).sum())


def cross_entropy_grad(probs, labels) -> np.ndarray:
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    p = probs[rows, labels]
    g = np.zeros_like(probs)
    g[rows, labels] = np.where(p >= CE_CLAMP, -1.0 / np.maximum(p, CE_CLAMP), 0.0)
    return g


def binary_entropy(p: float) -> float:
    """Binary entropy in bits, with ``0 log 0 = 0``."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p={p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def delta_tv(true_post, est_post, x_samples=None) -> float:
    """Half the mean L1 distance between true and estimated class posteriors.

    Posteriors are ``[S, K]`` arrays, or callables mapping ``x_samples`` to such
    arrays.
    """
    if true_post is None:
        raise OracleUnavailable("no true posterior available for these samples")
    if callable(true_post):
        true_post = true_post(x_samples)
    if callable(est_post):
        est_post = est_post(x_samples)
    P = np.atleast_2d(np.asarray(true_post, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(est_post, dtype=np.float64))
    if P.shape != Q.shape:
        raise ShapeError(f"posterior shapes differ: {P.shape} vs {Q.shape}")
    return float(min(1.0, max(0.0, 0.5 * np.abs(P - Q).sum(axis=1).mean())))


def info_loss_bound(delta: float, i_xz: float, epsilon: float) -> float:
    """``2 (delta * i_xz + h2(delta)) + epsilon``; ``i_xz`` in bits."""
    if not 0.0 <= delta <= 1.0:
        raise DomainError(f"delta={delta} outside [0, 1]")
    if i_xz < 0 or epsilon < 0:
        raise DomainError("i_xz and epsilon must be nonnegative")
    return 2.0 * (delta * i_xz + binary_entropy(delta)) + epsilon


def info_diagnostics(delta: float, i_xz_bits: float, epsilon: float = 0.0) -> InfoDiagnostics:
    return InfoDiagnostics(delta, binary_entropy(delta), info_loss_bound(delta, i_xz_bits, epsilon), epsilon)


def nats_to_bits(x: float) -> float:
    return x / np.log(2.0)


def fit_mie(mie: MieNet, x, z, steps: int = 3000, batch_size: int = 256, lr: float = 1e-3,
            seed: int = 0, n_eval_shuffles: int = 20, dtype=np.float64):
    """Train ``g`` on a fixed sample of pairs.

    Each step uses a joint batch and an independently drawn marginal batch.
    The full-sample bound is averaged over independent re-pairings of ``z``;
    since mutual information is nonnegative the reported estimate is that
    average clipped at 0.  Returns ``(params, estimate_nats, raw_bound, history)``.
    """
    x = np.asarray(x, dtype=dtype)
    z = np.asarray(z, dtype=dtype)
    if x.ndim == 1:
        x = x[:, None]
    if z.ndim == 1:
        z = z[:, None]
    n = len(x)
    ss = np.random.SeedSequence(seed).spawn(3)
    r_init, r_batch, r_eval = (np.random.default_rng(s) for s in ss)
    store = nn.ParamStore(mie.init_params(r_init, dtype))
    history = []
    for _ in range(steps):
        i1 = r_batch.integers(0, n, batch_size)
        i2 = r_batch.integers(0, n, batch_size)
        est, grads, _, _ = mi_estimate_with_grads(mie, store.params, x[i1], z[i1], z[i2])
        nn.adam_step(store, {k: -v for k, v in grads.items()}, lr)
        history.append(est.value)
    vals = []
    for _ in range(n_eval_shuffles):
        perm = r_eval.permutation(n)
        vals.append(mi_estimate(mie, store.params, x, z, z[perm]).value)
    raw = float(np.mean(vals))
    return store.params, max(0.0, raw), raw, history
