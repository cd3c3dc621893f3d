"""Learned representations projected to two dimensions and written as CSV."""
import tempfile
from pathlib import Path

import numpy as np

from pmu_events import synth
from pmu_events.core import EventClass
from pmu_events.train import TrainConfig, export_representations, prepare_eval_data, train_on_tensors

grid = synth.gen_grid(8, 0.3, seed=0)
counts = {"NonEvent": 6, "LineEvent": 6, "GeneratorEvent": 6, "OscillationEvent": 6}
tensors = synth.gen_dataset(grid, counts, window_s=8.0, seed=8, noise_sigma=0.05)
cfg = TrainConfig(epochs=4, window_s=4.0, per_class_samples={c.name: 2 for c in EventClass},
                  encoder={"stem_channels": 4, "stage_channels": (8, 8), "blocks_per_stage": 1},
                  mie_channels=(4, 8), mie_hidden=32, seeds=1)
bundle = train_on_tensors(tensors, cfg, "gsp-info", seed=0).bundle
data = prepare_eval_data(tensors, bundle.ordering, bundle.stats, cfg, 1)
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "repr.csv"
    coords, labels, _ = export_representations(bundle, data, path)
    print(path.read_text().splitlines()[0])
for c in EventClass:
    print(f"{c.name:17s} centroid={np.round(coords[labels == int(c)].mean(axis=0), 3).tolist()}")
