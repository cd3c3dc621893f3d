"""Training the classifier under the four ablations on a small synthetic set.

Sixty tensors and a few epochs keep this under a minute, so the scores are far
below what the desk profile reaches; see the acceptance suite for that run.
"""
from pmu_events import synth
from pmu_events.augment import split_dataset
from pmu_events.core import EventClass
from pmu_events.train import TrainConfig, run_ablation

grid = synth.gen_grid(8, 0.3, seed=0)
counts = {c.name: 15 for c in EventClass}
tensors = synth.gen_dataset(grid, counts, window_s=8.0, seed=5, noise_sigma=0.05)
train, test = split_dataset(tensors, 0.25, seed=0)

cfg = TrainConfig(epochs=15, window_s=3.0, per_class_samples={c.name: 6 for c in EventClass},
                  encoder={"stem_channels": 4, "stage_channels": (8, 8), "blocks_per_stage": 1},
                  mie_channels=(4, 8), mie_hidden=32, seeds=1)
reports = run_ablation(train, test, cfg)
for name, reps in reports.items():
    r = reps[0]
    print(f"{name:9s} macro F1={r.macro_f1:.3f} accuracy={r.accuracy:.3f} no_leakage={r.no_leakage}")
