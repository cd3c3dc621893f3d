"""Snapshot sampling, class rebalancing and leakage-free splits."""
from collections import Counter

from pmu_events import synth
from pmu_events.augment import (AugmentPolicy, check_disjoint, kfold_indices, rebalance_counts,
                                sample_all, split_dataset)
from pmu_events.core import EventClass

sizes = {"NonEvent": 144, "LineEvent": 55, "GeneratorEvent": 27, "OscillationEvent": 59}
print("rebalanced snapshot counts:", {c.name: n for c, n in rebalance_counts(sizes, AugmentPolicy()).items()})

grid = synth.gen_grid(6, 0.3, seed=0)
counts = {"NonEvent": 5, "LineEvent": 10, "GeneratorEvent": 5, "OscillationEvent": 5}
tensors = synth.gen_dataset(grid, counts, window_s=8.0, seed=4)
train, test = split_dataset(tensors, test_fraction=0.2, seed=0)
policy = AugmentPolicy(window_s=4.0, per_class_samples={"NonEvent": 4, "LineEvent": 2,
                                                        "GeneratorEvent": 4, "OscillationEvent": 4})
tr, te = sample_all(train, policy, seed=1), sample_all(test, policy, seed=2)
print("train snapshots per class:", {EventClass(k).name: v for k, v in
                                     sorted(Counter(int(s.label) for s in tr).items())})
print("offsets of first line tensor:", [s.offset_index for s in tr if s.label == EventClass.LineEvent][:2])
print("train/test parents disjoint:", check_disjoint(tr, te))
print("fold sizes:", [len(f) for f in kfold_indices(tensors, folds=5, seed=0)])
