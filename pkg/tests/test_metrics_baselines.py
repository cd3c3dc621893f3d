import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.svm import SVC

from pmu_events.baselines import (default_gamma, knn_classify, pca_project, rbf_kernel, run_baseline,
                                  smo_solve, svm_classify, svm_fit)
from pmu_events.core import make_snapshot
from pmu_events.errors import EmptyInput, EmptyTrain, RankDeficiency
from pmu_events.metrics import f1_scores


def test_f1_examples():
    y = np.repeat(np.arange(4), 5)
    r = f1_scores(np.zeros(20, int), y)
    assert r["per_class"][0] == pytest.approx(0.4) and np.all(r["per_class"][1:] == 0)
    assert r["macro"] == pytest.approx(0.1)
    assert np.all(f1_scores(y, y)["per_class"] == 1.0)
    r = f1_scores(np.array([0, 1, 1]), np.array([0, 1, 0]))
    assert r["absent"] == [2, 3] and r["per_class"][2] == 0.0
    assert np.array_equal(r["confusion"].sum(axis=1), [2, 1, 0, 0])
    with pytest.raises(EmptyInput):
        f1_scores([], [])


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=80))
def test_f1_bounded_and_rows_are_class_counts(pairs):
    y, p = np.array(pairs).T
    r = f1_scores(p, y)
    assert np.all((r["per_class"] >= 0) & (r["per_class"] <= 1))
    assert np.array_equal(r["confusion"].sum(axis=1), np.bincount(y, minlength=4))


def test_pca_examples(rng):
    t = rng.standard_normal(200)
    line = np.stack([t, 3 * t + 1], axis=1)
    res = pca_project(line, 1)
    assert res.explained_variance[0] / line.var(axis=0, ddof=1).sum() >= 0.99999
    X = rng.standard_normal((30, 5)) @ rng.standard_normal((5, 5))
    full = pca_project(X, 5)
    assert np.allclose(full.reconstruct(), X, atol=1e-8)
    v = full.scores.var(axis=0)
    assert np.all(np.diff(v) <= 1e-12)
    for c in full.components:
        assert c[np.argmax(np.abs(c))] > 0
    assert np.allclose(full.transform(X), full.scores)
    with pytest.raises(ValueError):
        pca_project(X, 6)
    with pytest.warns(RankDeficiency):
        r = pca_project(line, 2)
    assert r.rank == 1 and np.all(r.components[1] == 0)


def test_pca_matches_covariance_eigenvectors(rng):
    X = rng.standard_normal((100, 4)) * [3, 2, 1, 0.5]
    res = pca_project(X, 4)
    vals, vecs = np.linalg.eigh(np.cov(X.T))
    order = np.argsort(vals)[::-1]
    assert np.allclose(res.explained_variance, vals[order])
    for k in range(4):
        assert abs(abs(res.components[k] @ vecs[:, order[k]]) - 1) <= 1e-8


def test_knn_rules(rng):
    A = rng.standard_normal((12, 3))
    y = np.repeat([0, 1, 2], 4)
    assert np.array_equal(knn_classify(A, y, A, 1), y)
    assert np.all(knn_classify(A, y, rng.standard_normal((5, 3)), K=12) == 0)
    # equal distances: the lower training index wins
    dup = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert knn_classify(dup, [3, 1], [[0.0, 0.0]], 1)[0] == 3
    # two votes each: the smaller class id wins
    assert knn_classify([[0.0], [1.0], [-1.0], [2.0]], [2, 1, 1, 2], [[0.5]], 4)[0] == 1
    with pytest.raises(EmptyTrain):
        knn_classify(np.zeros((0, 2)), [], [[0, 0]])
    with pytest.raises(ValueError):
        knn_classify(A, y, A, 13)


def test_svm_separable(rng):
    X = np.concatenate([rng.normal(-2, 0.3, (20, 2)), rng.normal(2, 0.3, (20, 2))])
    y = np.repeat([0, 1], 20)
    assert np.array_equal(svm_classify(X, y, X, C=1.0, gamma=0.5), y)


def test_svm_prototypes(rng):
    # symmetric prototypes make every one-vs-rest machine share (a, b, rho), so
    # decision_c = (a + b) K(x, p_c) - const and the argmax is the nearest prototype
    ang = 2 * np.pi * np.arange(3) / 3
    protos = 3 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    model = svm_fit(protos, [0, 1, 2], C=10.0, gamma=0.05)
    test = rng.uniform(-8, 8, (300, 2))
    d2 = ((test[:, None] - protos[None]) ** 2).sum(-1)
    gap = np.diff(np.sort(d2, axis=1)[:, :2], axis=1)[:, 0]
    clear = gap > 1e-3
    assert np.array_equal(model.predict(test)[clear], np.argmin(d2, axis=1)[clear])


def test_smo_matches_reference_solver(rng):
    X = rng.standard_normal((60, 3))
    y = np.where(X[:, 0] + 0.5 * rng.standard_normal(60) > 0, 1.0, -1.0)
    gamma = 0.3
    K = rbf_kernel(X, X, gamma)
    alpha, rho, ok = smo_solve(K, y, C=1.0, tol=1e-6)
    ref = SVC(C=1.0, kernel="rbf", gamma=gamma, tol=1e-6).fit(X, y)
    T = rng.standard_normal((40, 3))
    ours = rbf_kernel(T, X, gamma) @ (alpha * y) - rho
    assert ok
    assert np.allclose(ours, ref.decision_function(T), atol=1e-3)
    assert np.all((alpha >= 0) & (alpha <= 1.0)) and abs(alpha @ y) <= 1e-9


def test_default_gamma():
    X = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert default_gamma(X) == pytest.approx(1 / (2 * 1.0))


def snaps(rng, n, shift):
    return [make_snapshot(rng.standard_normal((6, 3, 4)) + shift * (i % 4), i % 4, f"s{i}", 0)
            for i in range(n)]


def test_baseline_reports_share_schema(rng):
    tr, te = snaps(rng, 40, 1.0), snaps(rng, 20, 1.0)
    k = run_baseline("knn", tr, te, n_pc=5)
    s = run_baseline("svm", tr, te, n_pc=5)
    assert set(k.to_json()) == set(s.to_json())
    assert k.method == "pca+knn" and s.method == "pca+svm"
    assert set(k.timings) == {"train_s", "test_per_sample_s"}
    assert run_baseline("knn", tr, tr, n_pc=5).macro_f1 == 1.0
    back = json.loads(k.dumps())
    assert back["schema"] == "eval-report/1" and "timings" not in back
