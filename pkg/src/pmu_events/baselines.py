"""PCA + KNN and PCA + RBF-SVM baselines on flattened snapshots."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrain, NonConvergence, RankDeficiency
from .metrics import EvalReport


@dataclass(frozen=True, eq=False)
class PcaResult:
    scores: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray
    rank: int

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, scores=None) -> np.ndarray:
        scores = self.scores if scores is None else scores
        return scores @ self.components + self.mean


def pca_project(X, n_components: int) -> PcaResult:
    """Project mean-centred rows onto the top principal directions.

    Directions come from the SVD of the centred data matrix; each one is signed
    so that its largest-magnitude loading is positive.  Directions beyond the
    numerical rank are returned as zeros.
    """
    X = np.asarray(X, dtype=np.float64)
    S, F = X.shape
    if not 1 <= n_components <= min(S, F):
        raise ValueError(f"n_components={n_components} must lie in [1, {min(S, F)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    tol = max(S, F) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    comps = Vt[:n_components].copy()
    for k in range(min(n_components, rank)):
        if comps[k, np.argmax(np.abs(comps[k]))] < 0:
            comps[k] = -comps[k]
    if n_components > rank:
        warnings.warn(f"data rank {rank} < {n_components} components; extra components zeroed",
                      RankDeficiency, stacklevel=2)
        comps[rank:] = 0.0
    var = np.zeros(n_components)
    m = min(n_components, rank)
    var[:m] = s[:m] ** 2 / max(S - 1, 1)
    scores = Xc @ comps.T
    return PcaResult(scores, comps, mean, var, rank)


def knn_classify(train_scores, train_labels, test_scores, K: int = 1, chunk: int = 256) -> np.ndarray:
    """Euclidean K-NN majority vote.

    Equal distances favour the lower training index; tied votes favour the
    smaller class id.
    """
    A = np.asarray(train_scores, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    B = np.asarray(test_scores, dtype=np.float64)
    if len(A) == 0:
        raise EmptyTrain("no training points")
    if not 1 <= K <= len(A):
        raise ValueError(f"K={K} must lie in [1, {len(A)}]")
    n_classes = int(y.max()) + 1
    out = np.empty(len(B), dtype=np.int64)
    for s in range(0, len(B), chunk):
        blk = B[s:s + chunk]
        d2 = ((blk[:, None, :] - A[None, :, :]) ** 2).sum(axis=2)
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :K]
        for r, idx in enumerate(nearest):
            out[s + r] = int(np.argmax(np.bincount(y[idx], minlength=n_classes)))
    return out


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def default_gamma(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


def smo_solve(K, y, C: float = 1.0, tol: float = 1e-3, max_iter: int | None = None):
    """Soft-margin SVM dual by SMO with maximal-violating-pair selection.

    Minimises ``1/2 a^T Q a - sum(a)`` with ``Q_ij = y_i y_j K_ij``,
    ``0 <= a <= C`` and ``y . a = 0``.  Returns ``(alpha, rho, converged)``;
    the decision function is ``sum_i a_i y_i K(x_i, x) - rho``.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    Q = K * np.outer(y, y)
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max_iter or max(100_000, 100 * n)
    converged = False
    for _ in range(max_iter):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] < tol:
            converged = True
            break
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2 * Q[i, j], 1e-12)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2 * Q[i, j], 1e-12)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        G += Q[i] * (alpha[i] - ai) + Q[j] * (alpha[j] - aj)
    else:
        warnings.warn(f"SMO stopped after {max_iter} iterations without meeting tol={tol}",
                      NonConvergence, stacklevel=2)
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        ub = yG[up].min() if up.any() else np.inf
        lb = yG[low].max() if low.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else 0.0
    return alpha, rho, converged


@dataclass(frozen=True, eq=False)
class OvrSvm:
    X: np.ndarray
    classes: tuple
    coefs: np.ndarray  # [n_classes, n_train] = alpha * y
    rhos: np.ndarray
    gamma: float

    def decision_function(self, X) -> np.ndarray:
        Kx = rbf_kernel(X, self.X, self.gamma)
        return Kx @ self.coefs.T - self.rhos

    def predict(self, X) -> np.ndarray:
        d = self.decision_function(X)
        return np.asarray(self.classes)[np.argmax(d, axis=1)]


def svm_fit(train_scores, train_labels, C: float = 1.0, gamma: float | None = None,
            tol: float = 1e-3, max_iter: int | None = None) -> OvrSvm:
    X = np.asarray(train_scores, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    classes = tuple(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise ValueError("need at least two classes to train an SVM")
    gamma = default_gamma(X) if gamma is None else gamma
    K = rbf_kernel(X, X, gamma)
    coefs, rhos = [], []
    for c in classes:
        yc = np.where(y == c, 1.0, -1.0)
        alpha, rho, _ = smo_solve(K, yc, C, tol, max_iter)
        coefs.append(alpha * yc)
        rhos.append(rho)
    return OvrSvm(X, classes, np.array(coefs), np.array(rhos), float(gamma))


def svm_classify(train_scores, train_labels, test_scores, C: float = 1.0,
                 gamma: float | None = None, **kw) -> np.ndarray:
    """One-vs-rest RBF SVMs; the prediction is the class with the largest decision value."""
    return svm_fit(train_scores, train_labels, C, gamma, **kw).predict(test_scores)


def flatten(snapshots) -> np.ndarray:
    return np.stack([np.asarray(s.data, dtype=np.float64).ravel() for s in snapshots])


def run_baseline(method: str, train_snapshots, test_snapshots, n_pc: int = 50, K: int = 1,
                 C: float = 1.0, gamma: float | None = None) -> EvalReport:
    """Fit PCA on the (already scaled) training snapshots, then KNN or SVM."""
    t0 = time.perf_counter()
    Xtr, ytr = flatten(train_snapshots), np.array([int(s.label) for s in train_snapshots])
    Xte, yte = flatten(test_snapshots), np.array([int(s.label) for s in test_snapshots])
    n_pc = min(n_pc, *Xtr.shape)
    pca = pca_project(Xtr, n_pc)
    if method == "knn":
        model = None
    elif method == "svm":
        model = svm_fit(pca.scores, ytr, C, gamma)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    t_train = time.perf_counter() - t0
    t1 = time.perf_counter()
    Ste = pca.transform(Xte)
    pred = knn_classify(pca.scores, ytr, Ste, K) if method == "knn" else model.predict(Ste)
    t_test = (time.perf_counter() - t1) / max(len(Xte), 1)
    name = f"pca+{method}"
    params = {"n_pc": n_pc, "K": K} if method == "knn" else {"n_pc": n_pc, "C": C, "gamma": model.gamma}
    rep = EvalReport.from_predictions(name, pred, yte,
                                      timings={"train_s": t_train, "test_per_sample_s": t_test})
    rep.config_hash = _hash_params(params)
    return rep


def _hash_params(params) -> str:
    import hashlib
    import json
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:16]
