"""PCA followed by nearest-neighbour or SVM classification."""
from pmu_events import synth
from pmu_events.augment import AugmentPolicy, sample_all, split_dataset
from pmu_events.baselines import run_baseline
from pmu_events.core import EventClass, compute_scaling_stats, zscore_scale

grid = synth.gen_grid(8, 0.3, seed=0)
counts = {"NonEvent": 6, "LineEvent": 8, "GeneratorEvent": 6, "OscillationEvent": 6}
tensors = synth.gen_dataset(grid, counts, window_s=8.0, seed=7, noise_sigma=0.05)
train, test = split_dataset(tensors, 0.25, seed=0)
policy = AugmentPolicy(4.0, {c.name: 3 for c in EventClass})
tr, te = sample_all(train, policy, 1), sample_all(test, policy, 2)
stats = compute_scaling_stats(tr)
tr = [zscore_scale(s, stats) for s in tr]
te = [zscore_scale(s, stats) for s in te]
for method in ("knn", "svm"):
    r = run_baseline(method, tr, te, n_pc=20)
    print(f"{r.method:8s} macro F1={r.macro_f1:.3f} per class={[round(v, 2) for v in r.per_class_f1.values()]}")
