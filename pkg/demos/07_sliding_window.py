"""How quickly an event becomes recognizable after it starts."""
from pmu_events import synth
from pmu_events.augment import split_dataset
from pmu_events.core import EventClass
from pmu_events.train import TrainConfig, f1_at, sliding_window_eval, train_on_tensors

grid = synth.gen_grid(8, 0.3, seed=0)
counts = {"NonEvent": 6, "LineEvent": 8, "GeneratorEvent": 8, "OscillationEvent": 6}
tensors = synth.gen_dataset(grid, counts, window_s=8.0, seed=6, noise_sigma=0.05)
train, test = split_dataset(tensors, 0.25, seed=0)

cfg = TrainConfig(epochs=40, window_s=3.0, per_class_samples={c.name: 6 for c in EventClass},
                  encoder={"stem_channels": 4, "stage_channels": (8, 8), "blocks_per_stage": 1},
                  seeds=1)
bundle = train_on_tensors(train, cfg, "gsp", seed=0).bundle
series = sliding_window_eval(bundle, test, window_s=3.0, step_s=0.25)
for t in (0.5, 1.0, 2.0, 3.0):
    print(f"t={t:.2f}s line F1={f1_at(series, t, 'LineEvent'):.2f} "
          f"generator F1={f1_at(series, t, 'GeneratorEvent'):.2f}")
