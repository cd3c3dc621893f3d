import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from pmu_events.augment import (AugmentPolicy, check_disjoint, kfold_indices, rebalance_counts,
                                sample_all, sample_snapshots, split_dataset)
from pmu_events.core import EventClass, build_tensor
from pmu_events.errors import ClassTooSmall, WindowTooLong

N_, L_, G_, O_ = EventClass


def tensor(label, T=600, tid="t", rng=None):
    rng = rng or np.random.default_rng(0)
    return build_tensor(rng.standard_normal((T, 3, 4)), 30.0, label, tensor_id=tid)


def corpus(per_class, T=60):
    rng = np.random.default_rng(0)
    return [tensor(c, T, f"{c.name}-{i}", rng) for c in EventClass for i in range(per_class)]


def test_reference_rebalance():
    out = rebalance_counts({N_: 120, L_: 825, G_: 84, O_: 118}, AugmentPolicy())
    assert out == {N_: 720, L_: 825, G_: 756, O_: 708}
    assert max(out.values()) / min(out.values()) <= 1.2
    assert set(rebalance_counts({c: 0 for c in EventClass}, AugmentPolicy()).values()) == {0}
    ident = AugmentPolicy(per_class_samples={c: 1 for c in EventClass})
    assert rebalance_counts({c: 10 for c in EventClass}, ident) == {c: 10 for c in EventClass}


def test_sample_counts_and_offsets():
    snaps = sample_snapshots(tensor(G_), AugmentPolicy(), seed=1)
    assert len(snaps) == 9
    assert all(s.data.shape == (360, 3, 4) and 0 <= s.offset_index <= 240 for s in snaps)
    t = tensor(L_)
    s = sample_snapshots(t, AugmentPolicy(window_s=20.0), 0)[0]
    assert s.offset_index == 0 and np.array_equal(s.data, t.data)
    with pytest.raises(WindowTooLong):
        sample_snapshots(t, AugmentPolicy(window_s=21.0), 0)


def test_offsets_uniform():
    pol = AugmentPolicy(per_class_samples={L_: 10_000})
    offs = np.array([s.offset_index for s in sample_snapshots(tensor(L_), pol, 7)])
    hist = np.histogram(offs, bins=10, range=(0, 241))[0]
    # exact expected bin masses for the discrete uniform on {0..240}
    edges = np.linspace(0, 241, 11)
    expected = np.array([np.sum((np.arange(241) >= a) & (np.arange(241) < b))
                         for a, b in zip(edges[:-1], edges[1:])]) / 241 * len(offs)
    assert chisquare(hist, expected).pvalue > 0.01


def test_sample_all_deterministic():
    ts = corpus(2)
    a = sample_all(ts, AugmentPolicy(window_s=1.0), 5)
    b = sample_all(ts, AugmentPolicy(window_s=1.0), 5)
    assert [s.offset_index for s in a] == [s.offset_index for s in b]
    assert len(a) == 2 * (6 + 1 + 9 + 6)


def test_stratified_split():
    ts = corpus(10)
    tr, te = split_dataset(ts, 0.2, seed=0)
    for c in EventClass:
        assert sum(t.label is c for t in tr) == 8 and sum(t.label is c for t in te) == 2
    tr2, te2 = split_dataset(ts, 0.2, seed=0)
    assert [t.tensor_id for t in te] == [t.tensor_id for t in te2]
    with pytest.raises(ClassTooSmall):
        split_dataset(corpus(1), 0.2)
    with pytest.raises(ValueError):
        split_dataset(ts, 1.0)


@given(st.integers(2, 6), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_never_leaks(per_class, frac, seed):
    ts = corpus(per_class, T=40)
    tr, te = split_dataset(ts, frac, seed)
    pol = AugmentPolicy(window_s=1.0)
    assert check_disjoint(sample_all(tr, pol, seed), sample_all(te, pol, seed + 1))
    assert len(tr) + len(te) == len(ts)


def test_kfold_partition():
    ts = corpus(5)
    folds = kfold_indices(ts, 5, seed=0)
    allidx = np.concatenate(folds)
    assert sorted(allidx) == list(range(len(ts)))
    for f in folds:
        assert sorted(ts[i].label for i in f) == list(EventClass)
    with pytest.raises(ValueError):
        kfold_indices(ts, 1)
    with pytest.raises(ClassTooSmall):
        kfold_indices(ts, 6)
