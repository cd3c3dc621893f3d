"""Class-rebalancing snapshot sampling and leakage-free splits.

Splits and folds are always formed over parent tensors, before any snapshot
is drawn, so no parent contributes snapshots to both sides.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import EventClass, PqvfTensor, Snapshot, make_snapshot
from .errors import ClassTooSmall, WindowTooLong

DEFAULT_SAMPLES = {EventClass.NonEvent: 6, EventClass.LineEvent: 1,
                 EventClass.GeneratorEvent: 9, EventClass.OscillationEvent: 6}


@dataclass(frozen=True)
class AugmentPolicy:
    window_s: float = 12.0
    per_class_samples: Mapping = field(default_factory=lambda: dict(DEFAULT_SAMPLES))

    def __post_init__(self):
        samples = {EventClass.parse(k): int(v) for k, v in self.per_class_samples.items()}
        if any(v < 1 for v in samples.values()):
            raise ValueError("every class needs at least one sample per tensor")
        if self.window_s <= 0:
            raise ValueError("window must be positive")
        object.__setattr__(self, "per_class_samples", samples)

    def window_len(self, rate: float) -> int:
        return int(round(self.window_s * rate))

    def to_json(self) -> dict:
        return {"window_s": self.window_s,
                "per_class_samples": {c.name: v for c, v in self.per_class_samples.items()}}


def sample_snapshots(tensor: PqvfTensor, policy: AugmentPolicy, seed) -> list:
    """``per_class_samples[label]`` windows with offsets uniform on ``{0..T-T_s}``."""
    T_s = policy.window_len(tensor.sample_rate_hz)
    if T_s > tensor.n_times:
        raise WindowTooLong(f"{T_s}-sample window exceeds {tensor.n_times}-sample tensor")
    k = policy.per_class_samples[tensor.label]
    rng = np.random.default_rng(seed)
    offsets = rng.integers(0, tensor.n_times - T_s + 1, size=k)
    return [make_snapshot(tensor.data[o:o + T_s], tensor.label, tensor.tensor_id, int(o))
            for o in offsets]


def sample_all(tensors: Sequence[PqvfTensor], policy: AugmentPolicy, seed) -> list:
    """Snapshots from every tensor; each parent draws from its own child seed."""
    seeds = np.random.SeedSequence(seed).spawn(len(tensors))
    out = []
    for t, s in zip(tensors, seeds):
        out.extend(sample_snapshots(t, policy, s))
    return out


def rebalance_counts(class_sizes: Mapping, policy: AugmentPolicy) -> dict:
    return {EventClass.parse(c): int(n) * policy.per_class_samples[EventClass.parse(c)]
            for c, n in class_sizes.items()}


def _by_class(tensors):
    groups = {}
    for i, t in enumerate(tensors):
        groups.setdefault(t.label, []).append(i)
    return groups


def split_dataset(tensors: Sequence[PqvfTensor], test_fraction: float = 0.2, seed=0):
    """Stratified parent-level split; returns ``(train, test)`` lists of tensors."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in sorted(_by_class(tensors)):
        idx = _by_class(tensors)[cls]
        if len(idx) < 2:
            raise ClassTooSmall(f"class {cls.name} has {len(idx)} tensor(s); need at least 2")
        idx = list(rng.permutation(idx))
        n_test = min(len(idx) - 1, max(1, int(round(len(idx) * test_fraction))))
        test_idx += idx[:n_test]
        train_idx += idx[n_test:]
    return [tensors[i] for i in sorted(train_idx)], [tensors[i] for i in sorted(test_idx)]


def kfold_indices(tensors: Sequence[PqvfTensor], folds: int, seed=0) -> list:
    """Stratified parent-level folds; returns one array of tensor indices per fold."""
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng(seed)
    out = [[] for _ in range(folds)]
    groups = _by_class(tensors)
    for cls in sorted(groups):
        idx = groups[cls]
        if len(idx) < folds:
            raise ClassTooSmall(f"class {cls.name} has {len(idx)} tensors for {folds} folds")
        for j, i in enumerate(rng.permutation(idx)):
            out[j % folds].append(int(i))
    return [np.array(sorted(f)) for f in out]


def source_ids(snapshots: Sequence[Snapshot]) -> set:
    return {s.source_id for s in snapshots}


def check_disjoint(train: Sequence[Snapshot], test: Sequence[Snapshot]) -> bool:
    return not (source_ids(train) & source_ids(test))
