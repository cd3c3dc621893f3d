import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from pmu_events import nn, synth
from pmu_events.augment import split_dataset
from pmu_events.classifier import EstimatorSpec, init_classifier
from pmu_events.core import EventClass, build_tensor
from pmu_events.errors import DivergenceError, UnsupportedConfig, WindowExceedsTensor
from pmu_events.infoload import cross_entropy_grad
from pmu_events.metrics import confusion_matrix, f1_scores
from pmu_events.train import (REPR_HEADER, Ablation, ModelBundle, PreparedData, TrainConfig,
                              _seed_streams, evaluate, export_representations, kfold_beta_sweep,
                              prepare_eval_data, prepare_training_data, select_beta,
                              sliding_grid, sliding_window_eval, train, train_on_tensors)

SMALL_ENC = {"stem_channels": 4, "stage_channels": (4, 8), "blocks_per_stage": 1}
ONE_EACH = {c.name: 1 for c in EventClass}


def small_config(**kw):
    base = dict(epochs=1, batch_size=16, window_s=2.0, per_class_samples=ONE_EACH, encoder=SMALL_ENC,
                mie_channels=(4, 8), mie_hidden=16, seeds=1, folds=2)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tensors():
    grid = synth.gen_grid(6, 0.3, 0)
    counts = {"NonEvent": 4, "LineEvent": 4, "GeneratorEvent": 4, "OscillationEvent": 4}
    return synth.gen_dataset(grid, counts, 4.0, seed=1, noise_sigma=0.02)


def ce_only_reference(data, config, seed, steps):
    """Plain CE training written out independently of :func:`train`."""
    enc = config.encoder_spec(data.X.shape[2], data.rate)
    est = EstimatorSpec()
    r_init, r_batch, _, _ = _seed_streams(seed)
    store = nn.ParamStore(init_classifier(enc, est, r_init, np.dtype(config.dtype)))
    traj = []
    perm = r_batch.permutation(len(data.X))
    for s in range(steps):
        idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
        z, c1 = nn.forward(enc.layers(), data.X[idx], store.params, "enc.")
        p, c2 = nn.forward(est.layers(), z, store.params, "est.")
        g, dz = nn.backward(est.layers(), c2, cross_entropy_grad(p, data.y[idx]), store.params)
        g.update(nn.backward(enc.layers(), c1, dz, store.params)[0])
        nn.adam_step(store, g, config.lr)
        traj.append({k: v.copy() for k, v in store.params.items()})
    return traj


def test_ablation_identity(tensors):
    cfg = small_config(per_class_samples={c.name: 3 for c in EventClass}, dtype="float64")
    data = prepare_training_data(tensors, cfg, sorting=False, seed=0)
    assert len(data.X) == 48  # three full batches in one epoch
    assert np.array_equal(data.ordering.permutation, np.arange(6))
    ref = ce_only_reference(data, cfg, 0, 3)
    base = train(data, cfg, "baseline", seed=0)
    zero_beta = train(data, replace(cfg, beta=0.0), "info", seed=0)
    assert base.n_steps == 3
    for k, v in ref[-1].items():
        assert np.array_equal(base.bundle.params[k], v)
        assert np.array_equal(zero_beta.bundle.params[k], v)


def test_partial_batch_is_one_step(tensors):
    cfg = small_config()
    data = prepare_training_data(tensors[:8], cfg, sorting=False, seed=0)
    assert len(data.X) == 8
    assert train(data, cfg, "gsp-info", seed=0).n_steps == 1


def test_easy_profile_trains(tensors):
    # a 3 s window on 4 s tensors always contains the midpoint onset
    cfg = small_config(epochs=30, window_s=3.0, per_class_samples={c.name: 2 for c in EventClass},
                       batch_size=8)
    data = prepare_training_data(tensors, cfg, sorting=True, seed=0)
    res = train(data, cfg, "gsp", seed=0)
    assert np.mean(res.bundle.predict(data.X) == data.y) >= 0.95


def test_diagnostics_and_determinism(tensors, tmp_path):
    cfg = small_config(epochs=2)
    tr, te = split_dataset(tensors, 0.25, seed=0)
    data = prepare_training_data(tr, cfg, sorting=True, seed=0)
    ev = prepare_eval_data(te, data.ordering, data.stats, cfg, seed=5)
    oracle = np.eye(4)[ev.y]
    a = train(data, cfg, "gsp-info", eval_data=ev, oracle_posteriors=oracle,
              diagnostics_path=tmp_path / "d.jsonl", seed=3)
    b = train(data, cfg, "gsp-info", eval_data=ev, oracle_posteriors=oracle, seed=3)
    lines = [json.loads(x) for x in (tmp_path / "d.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [1, 2]
    assert {"ce", "mi_nats", "loss", "delta", "bound_rhs", "eval_acc"} <= set(lines[0])
    assert a.history == b.history
    pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    a.bundle.save(pa)
    b.bundle.save(pb)
    assert pa.read_bytes() == pb.read_bytes()
    ra = evaluate(a.bundle, ev, data.source_ids, a.history)
    rb = evaluate(b.bundle, ev, data.source_ids, b.history)
    assert ra.dumps() == rb.dumps() and ra.no_leakage is True


def test_bundle_round_trip_and_raw_invariance(tensors, tmp_path):
    cfg = small_config()
    res = train_on_tensors(tensors, cfg, "gsp-info", seed=0)
    bundle = res.bundle
    assert not np.array_equal(bundle.ordering.permutation, np.arange(6))
    bundle.save(tmp_path / "m.ckpt")
    back = ModelBundle.load(tmp_path / "m.ckpt")
    assert back.model_version == bundle.model_version and back.config_hash == bundle.config_hash
    assert back.mie_params.keys() == bundle.mie_params.keys()
    t = tensors[5]
    raw = np.asarray(t.data[:60])
    perm = bundle.ordering.permutation
    sorted_scaled = ((raw[:, perm].astype(np.float64) - bundle.stats.mean)
                     / (bundle.stats.std + 1e-8)).astype(np.float32)
    a = bundle.predict_raw(raw)
    b = bundle.predict_proba(sorted_scaled[None])
    assert a.tobytes() == b.tobytes()
    assert back.predict_raw(raw).tobytes() == a.tobytes()


def test_divergence_raises(tensors):
    cfg = small_config()
    data = prepare_training_data(tensors[:8], cfg, sorting=False, seed=0)
    X = data.X.copy()
    X[0, 0, 0, 0] = np.nan
    bad = PreparedData(X, data.y, data.source_ids, data.ordering, data.stats, data.rate)
    with pytest.raises(DivergenceError) as e:
        train(bad, cfg, "baseline", seed=0)
    assert e.value.diagnostics["epoch"] == 1


def test_f1_matches_naive_oracle(rng):
    for _ in range(30):
        n = int(rng.integers(1, 60))
        y, p = rng.integers(0, 4, n), rng.integers(0, 4, n)
        C = np.zeros((4, 4), int)
        for a, b in zip(y, p):
            C[a, b] += 1
        assert np.array_equal(confusion_matrix(p, y), C)
        res = f1_scores(p, y)
        for c in range(4):
            tp = C[c, c]
            prec = tp / C[:, c].sum() if C[:, c].sum() else 0.0
            rec = tp / C[c].sum() if C[c].sum() else 0.0
            f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
            assert res["per_class"][c] == pytest.approx(f1, abs=1e-15)
        assert res["macro"] == pytest.approx(np.mean(res["per_class"]), abs=1e-15)


def test_sliding_grid_arithmetic():
    t = build_tensor(np.zeros((600, 2, 4)), 30.0, "LineEvent", event_start_index=300)
    g = sliding_grid(t)
    assert np.allclose(g / 30.0, np.round(np.arange(0.5, 10.0 + 1e-9, 0.1), 1))
    assert g[0] == 15 and g[-1] == 300


def test_sliding_window_eval_shape(tensors):
    cfg = small_config(window_s=3.0)
    bundle = train_on_tensors(tensors, cfg, "gsp", seed=0).bundle
    series = sliding_window_eval(bundle, tensors, window_s=3.0)
    # 4 s tensors with the event at 2 s: elapsed 0.5 .. 2.0 s
    assert series["t"][0] == 0.5 and series["t"][-1] == 2.0 and len(series["t"]) == 16
    assert all(0 <= v <= 1 for v in series["mean"])
    # a 3 s window ending 0.5 s after a 2 s onset starts before the tensor
    with pytest.raises(WindowExceedsTensor):
        sliding_window_eval(bundle, tensors, window_s=3.0, pad=None)


def test_beta_sweep_rules(tensors):
    assert select_beta({0.1: 0.5, 0.05: 0.5, 1.0: 0.4}) == 0.05
    cfg = small_config()
    res = kfold_beta_sweep(tensors, [0.3], cfg)
    assert res.best_beta == 0.3 and len(res.fold_scores[0.3]) == 2
    with pytest.raises(ValueError):
        kfold_beta_sweep(tensors, [0.1], replace(cfg, folds=1))
    with pytest.raises(UnsupportedConfig):
        TrainConfig(folds=0)


def test_export_representations(tensors, tmp_path):
    cfg = small_config()
    res = train_on_tensors(tensors, cfg, "baseline", seed=0)
    data = prepare_eval_data(tensors, res.bundle.ordering, res.bundle.stats, cfg, 1)
    coords, labels, sids = export_representations(res.bundle, data, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == REPR_HEADER and len(rows) == len(data.X) + 1
    assert coords.shape == (len(data.X), 2)
    empty = PreparedData(data.X[:0], data.y[:0], (), data.ordering, data.stats, data.rate)
    export_representations(res.bundle, empty, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().strip() == ",".join(REPR_HEADER)


def test_ablation_names():
    assert Ablation.parse("gsp+info") == Ablation(True, True)
    assert Ablation.parse("baseline").name == "baseline"
    with pytest.raises(UnsupportedConfig):
        Ablation.parse("nope")
