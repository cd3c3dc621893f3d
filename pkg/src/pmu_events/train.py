"""Training with the information-loaded objective, evaluation and model bundles.

One optimisation step (info on):

1. draw the labelled batch ``x1`` from the epoch permutation and an
   independent batch ``x2`` from a separate random stream;
2. encode both, ``z1 = enc(x1)``, ``z2 = enc(x2)``;
3. estimate ``I_hat`` with the MI estimator and take one Adam ascent step on
   its parameters;
4. take one Adam step on encoder + estimator for ``CE - beta * I_hat``, where
   ``CE`` is the batch-summed cross entropy and the MI term reaches the encoder
   through both ``z1`` and ``z2``.

With info off no ``x2`` is drawn and no estimator exists, so the step is plain
cross-entropy training.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .augment import DEFAULT_SAMPLES, AugmentPolicy, kfold_indices, sample_all
from .baselines import pca_project
from .classifier import EncoderSpec, EstimatorSpec, classify, encode, init_classifier
from .core import N_CHANNELS, EventClass, PqvfTensor, ScalingStats, compute_scaling_stats, zscore_scale
from .errors import DivergenceError, UnsupportedConfig, WindowExceedsTensor
from .gsp import PmuOrdering, apply_order, sort_pmus
from .infoload import (MieNet, cross_entropy, cross_entropy_grad, delta_tv, info_loss_bound,
                       mi_estimate_with_grads, nats_to_bits)
from .metrics import EvalReport, f1_scores

BETA_GRID = (0.01, 0.05, 0.1, 0.6, 1.0)
BUNDLE_VERSION = "pmu-bundle/1"
# narrower and coarser than the default encoder; ~3x cheaper per step
DESK_ENCODER = {"stem_channels": 8, "stage_channels": (8, 16, 32), "stem_stride": (2, 1)}


@dataclass(frozen=True)
class Ablation:
    sorting: bool
    info: bool

    NAMES = {"baseline": (False, False), "info": (False, True),
             "gsp": (True, False), "gsp-info": (True, True)}

    @classmethod
    def parse(cls, name) -> "Ablation":
        if isinstance(name, Ablation):
            return name
        key = str(name).lower().replace("+", "-").replace("_", "-")
        if key not in cls.NAMES:
            raise UnsupportedConfig(f"unknown ablation {name!r}; choose from {sorted(cls.NAMES)}")
        return cls(*cls.NAMES[key])

    @property
    def name(self) -> str:
        return {v: k for k, v in self.NAMES.items()}[(self.sorting, self.info)]


ALL_ABLATIONS = tuple(Ablation.parse(n) for n in ("baseline", "info", "gsp", "gsp-info"))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    beta: float = 0.1
    seed: int = 0
    folds: int = 10
    seeds: int = 3
    window_s: float = 12.0
    per_class_samples: dict = field(default_factory=lambda: {c.name: v for c, v in DEFAULT_SAMPLES.items()})
    encoder: dict = field(default_factory=dict)
    mie_channels: tuple = (8, 16, 32)
    mie_hidden: int = 200
    mie_lr: float = 1e-3
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "folds", "seeds", "mie_hidden"):
            if int(getattr(self, name)) < 1:
                raise UnsupportedConfig(f"{name} must be positive")
        if self.lr <= 0 or self.mie_lr <= 0 or self.window_s <= 0:
            raise UnsupportedConfig("learning rates and window must be positive")
        if self.beta < 0:
            raise UnsupportedConfig("beta must be nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise UnsupportedConfig(f"dtype {self.dtype!r} not supported")
        bad = set(self.encoder) - {"stem_channels", "stage_channels", "blocks_per_stage", "stem_stride"}
        if bad:
            raise UnsupportedConfig(f"unknown encoder keys {sorted(bad)}")
        samples = {EventClass.parse(k).name: int(v) for k, v in self.per_class_samples.items()}
        object.__setattr__(self, "per_class_samples", samples)
        object.__setattr__(self, "mie_channels", tuple(int(c) for c in self.mie_channels))
        enc = {k: (tuple(v) if isinstance(v, (list, tuple)) else v) for k, v in self.encoder.items()}
        object.__setattr__(self, "encoder", enc)

    @property
    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(self.window_s, self.per_class_samples)

    def encoder_spec(self, n_pmus: int, rate: float) -> EncoderSpec:
        return EncoderSpec(input_dims=(self.policy.window_len(rate), n_pmus, N_CHANNELS), **self.encoder)

    def to_json(self) -> dict:
        d = asdict(self)
        d["mie_channels"] = list(self.mie_channels)
        d["encoder"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.encoder.items()}
        return d

    @classmethod
    def from_json(cls, d) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise UnsupportedConfig(f"unknown train config keys {sorted(bad)}")
        return cls(**d)

    def hash(self, *extra) -> str:
        blob = json.dumps([self.to_json(), *extra], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- data preparation ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PreparedData:
    X: np.ndarray          # [S, T_s, N, 4], sorted and scaled
    y: np.ndarray
    source_ids: tuple
    ordering: PmuOrdering
    stats: ScalingStats
    rate: float

    @property
    def snapshots(self):
        from .core import Snapshot
        return [Snapshot(x, EventClass(int(c)), s, 0) for x, c, s in zip(self.X, self.y, self.source_ids)]


def _stack(snaps, dtype):
    X = np.stack([np.asarray(s.data) for s in snaps]).astype(dtype, copy=False)
    y = np.array([int(s.label) for s in snaps], dtype=np.int64)
    return X, y, tuple(s.source_id for s in snaps)


def prepare_training_data(tensors: Sequence[PqvfTensor], config: TrainConfig, sorting: bool,
                          seed=None) -> PreparedData:
    """Order PMUs (from the training tensors only), draw snapshots and z-score them."""
    seed = config.seed if seed is None else seed
    n = tensors[0].n_pmus
    ordering = sort_pmus(tensors)[0] if sorting else PmuOrdering.identity(n)
    ordered = [apply_order(t, ordering) for t in tensors]
    snaps = sample_all(ordered, config.policy, seed)
    stats = compute_scaling_stats(snaps)
    X, y, sids = _stack([zscore_scale(s, stats) for s in snaps], config.dtype)
    return PreparedData(X, y, sids, ordering, stats, tensors[0].sample_rate_hz)


def prepare_eval_data(tensors: Sequence[PqvfTensor], ordering: PmuOrdering, stats: ScalingStats,
                      config: TrainConfig, seed) -> PreparedData:
    """Held-out snapshots under the training ordering and scaling."""
    ordered = [apply_order(t, ordering) for t in tensors]
    snaps = sample_all(ordered, config.policy, seed)
    X, y, sids = _stack([zscore_scale(s, stats) for s in snaps], config.dtype)
    return PreparedData(X, y, sids, ordering, stats, tensors[0].sample_rate_hz)


# -- model bundle -------------------------------------------------------------

@dataclass(eq=False)
class ModelBundle:
    encoder: EncoderSpec
    estimator: EstimatorSpec
    params: dict
    ordering: PmuOrdering
    stats: ScalingStats
    config: TrainConfig
    ablation: Ablation
    rate: float = 30.0
    mie: MieNet | None = None
    mie_params: dict | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.hash(self.ablation.name)

    @property
    def model_version(self) -> str:
        digest = hashlib.sha256()
        for k in sorted(self.params):
            digest.update(k.encode())
            digest.update(np.ascontiguousarray(self.params[k]).tobytes())
        return f"{self.ablation.name}-{digest.hexdigest()[:12]}"

    def architecture(self) -> dict:
        return {"encoder": self.encoder.to_json(), "estimator": asdict(self.estimator),
                "mie": self.mie.to_json() if self.mie else None}

    def represent(self, X, chunk: int = 64) -> np.ndarray:
        """Representations of already sorted and scaled snapshots."""
        X = np.asarray(X)
        if len(X) == 0:
            return np.zeros((0, self.encoder.rep_width))
        return np.concatenate([encode(X[s:s + chunk], self.params, self.encoder)
                               for s in range(0, len(X), chunk)])

    def predict_proba(self, X, chunk: int = 64) -> np.ndarray:
        """Class probabilities for already sorted and scaled snapshots."""
        z = self.represent(X, chunk)
        return classify(z, self.params, self.estimator) if len(z) else np.zeros((0, self.estimator.n_classes))

    def predict(self, X, chunk: int = 64) -> np.ndarray:
        return np.argmax(self.predict_proba(X, chunk), axis=1)

    def prepare_raw(self, windows) -> np.ndarray:
        """Raw-order windows ``[B, T_s, N, 4]`` -> sorted, scaled network input."""
        W = np.asarray(windows, dtype=np.float64)
        if W.ndim == 3:
            W = W[None]
        W = W[:, :, self.ordering.permutation, :]
        from .core import SCALE_EPS
        return ((W - self.stats.mean) / (self.stats.std + SCALE_EPS)).astype(self.config.dtype)

    def predict_raw(self, windows) -> np.ndarray:
        return self.predict_proba(self.prepare_raw(windows))

    def metadata(self) -> dict:
        return {
            "bundle_version": BUNDLE_VERSION, "architecture": self.architecture(),
            "ordering": self.ordering.to_json(), "scaling_stats": self.stats.to_json(),
            "config": self.config.to_json(), "ablation": self.ablation.name, "rate": self.rate,
            "config_hash": self.config_hash, "provenance": self.provenance,
        }

    def save(self, path) -> Path:
        params = dict(self.params)
        if self.mie_params:
            params.update(self.mie_params)
        return nn.save_checkpoint(path, params, self.metadata())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        params, meta = nn.load_checkpoint(path)
        if meta.get("bundle_version") != BUNDLE_VERSION:
            from .errors import VersionError
            raise VersionError(f"unsupported bundle version {meta.get('bundle_version')!r}")
        arch = meta["architecture"]
        mie = MieNet.from_json(arch["mie"]) if arch["mie"] else None
        mie_params = {k: v for k, v in params.items() if k.startswith("mie.")} or None
        return cls(
            encoder=EncoderSpec.from_json(arch["encoder"]),
            estimator=EstimatorSpec(**arch["estimator"]),
            params={k: v for k, v in params.items() if not k.startswith("mie.")},
            ordering=PmuOrdering.from_json(meta["ordering"]),
            stats=ScalingStats.from_json(meta["scaling_stats"]),
            config=TrainConfig.from_json(meta["config"]), ablation=Ablation.parse(meta["ablation"]),
            rate=meta["rate"], mie=mie, mie_params=mie_params, provenance=meta.get("provenance", {}),
        )


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    bundle: ModelBundle
    history: list
    train_seconds: float
    n_steps: int


def _seed_streams(seed):
    init, batch, marginal, mie = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(batch),
            np.random.default_rng(marginal), np.random.default_rng(mie))


def train(data: PreparedData, config: TrainConfig, ablation="gsp-info", *, eval_data=None,
          oracle_posteriors=None, diagnostics_path=None, seed=None, callback=None) -> TrainResult:
    """Train encoder + estimator on prepared snapshots.

    ``eval_data`` (a :class:`PreparedData`) adds a per-epoch held-out accuracy;
    ``oracle_posteriors`` (true class posteriors for ``eval_data``) adds the
    conditional total variation and the information-loss bound.  Per-epoch
    diagnostics are appended as JSON lines to ``diagnostics_path`` if given.
    """
    ablation = Ablation.parse(ablation)
    seed = config.seed if seed is None else seed
    dtype = np.dtype(config.dtype)
    X, y = data.X, data.y
    S = len(X)
    enc = config.encoder_spec(X.shape[2], data.rate)
    est = EstimatorSpec(enc.rep_width)
    enc_layers, est_layers = enc.layers(), est.layers()
    r_init, r_batch, r_marg, r_mie = _seed_streams(seed)
    store = nn.ParamStore(init_classifier(enc, est, r_init, dtype))
    mie = mstore = None
    if ablation.info:
        mie = MieNet.for_snapshots(N_CHANNELS, config.mie_channels, enc.rep_width, enc.rep_width,
                                   config.mie_hidden)
        mstore = nn.ParamStore(mie.init_params(r_mie, dtype))
    beta = config.beta if ablation.info else 0.0
    B = config.batch_size
    history, n_steps = [], 0
    diag_file = open(diagnostics_path, "w") if diagnostics_path else None
    t0 = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            perm = r_batch.permutation(S)
            ce_sum = mi_sum = 0.0
            n_mi = correct = 0
            for start in range(0, S, B):
                idx = perm[start:start + B]
                x1, y1 = X[idx], y[idx]
                z1, c1 = nn.forward(enc_layers, x1, store.params, "enc.")
                p, cp = nn.forward(est_layers, z1, store.params, "est.")
                ce = cross_entropy(p, y1)
                correct += int(np.sum(np.argmax(p, axis=1) == y1))
                grads, dz1 = nn.backward(est_layers, cp, cross_entropy_grad(p, y1), store.params)
                mi = 0.0
                if ablation.info:
                    i2 = r_marg.integers(0, S, len(idx))
                    z2, c2 = nn.forward(enc_layers, X[i2], store.params, "enc.")
                    mest, mgrads, dmi1, dmi2 = mi_estimate_with_grads(mie, mstore.params, x1, z1, z2)
                    mi = mest.value
                    nn.adam_step(mstore, {k: -v for k, v in mgrads.items()}, config.mie_lr)
                    if beta:
                        dz1 = dz1 - beta * dmi1
                        g2, _ = nn.backward(enc_layers, c2, (-beta * dmi2).astype(dtype), store.params)
                    else:
                        g2 = {}
                    g1, _ = nn.backward(enc_layers, c1, dz1.astype(dtype, copy=False), store.params)
                    for k, v in g2.items():
                        g1[k] = g1[k] + v
                    mi_sum += mi
                    n_mi += 1
                else:
                    g1, _ = nn.backward(enc_layers, c1, dz1, store.params)
                grads.update(g1)
                loss = ce - beta * mi
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"loss became non-finite at epoch {epoch}, step {n_steps + 1}",
                        {"epoch": epoch, "step": n_steps + 1, "ce": ce, "mi_nats": mi})
                nn.adam_step(store, grads, config.lr)
                n_steps += 1
                ce_sum += ce
            rec = {"epoch": epoch, "ce": ce_sum / S, "mi_nats": mi_sum / n_mi if n_mi else None,
                   "loss": (ce_sum - beta * mi_sum) / S, "train_acc": correct / S}
            if eval_data is not None:
                bundle = _bundle(enc, est, store, data, config, ablation, mie, mstore)
                probs = bundle.predict_proba(eval_data.X)
                rec["eval_acc"] = float(np.mean(np.argmax(probs, axis=1) == eval_data.y))
                if oracle_posteriors is not None:
                    d = delta_tv(oracle_posteriors, probs)
                    rec["delta"] = d
                    i_bits = nats_to_bits(max(0.0, rec["mi_nats"] or 0.0))
                    rec["bound_rhs"] = info_loss_bound(d, i_bits, 0.0)
            history.append(rec)
            if diag_file:
                diag_file.write(json.dumps(rec, sort_keys=True) + "\n")
            if callback:
                callback(rec)
    finally:
        if diag_file:
            diag_file.close()
    bundle = _bundle(enc, est, store, data, config, ablation, mie, mstore)
    return TrainResult(bundle, history, time.perf_counter() - t0, n_steps)


def _bundle(enc, est, store, data, config, ablation, mie, mstore) -> ModelBundle:
    return ModelBundle(enc, est, {k: v.copy() for k, v in store.params.items()}, data.ordering,
                       data.stats, config, ablation, data.rate, mie,
                       {k: v.copy() for k, v in mstore.params.items()} if mstore else None)


def train_on_tensors(tensors, config: TrainConfig, ablation="gsp-info", seed=None, **kw) -> TrainResult:
    ablation = Ablation.parse(ablation)
    data = prepare_training_data(tensors, config, ablation.sorting, seed)
    return train(data, config, ablation, seed=seed, **kw)


# -- evaluation ---------------------------------------------------------------

def evaluate(bundle: ModelBundle, test: PreparedData, train_source_ids=None,
             history=None, method: str | None = None) -> EvalReport:
    t0 = time.perf_counter()
    pred = bundle.predict(test.X)
    per_sample = (time.perf_counter() - t0) / max(len(test.X), 1)
    no_leak = None
    if train_source_ids is not None:
        no_leak = not (set(train_source_ids) & set(test.source_ids))
    curve = [{k: r[k] for k in ("epoch", "train_acc", "eval_acc") if k in r} for r in history or []]
    return EvalReport.from_predictions(
        method or bundle.ablation.name, pred, test.y, accuracy_curve=curve, no_leakage=no_leak,
        config_hash=bundle.config_hash, timings={"test_per_sample_s": per_sample})


@dataclass
class BetaSweepResult:
    scores: dict
    fold_scores: dict
    best_beta: float

    def to_json(self) -> dict:
        return {"scores": {repr(b): s for b, s in self.scores.items()},
                "fold_scores": {repr(b): s for b, s in self.fold_scores.items()},
                "best_beta": self.best_beta}


def select_beta(scores: dict) -> float:
    """Highest mean score; ties go to the smaller beta."""
    best = None
    for b in sorted(scores):
        if best is None or scores[b] > scores[best]:
            best = b
    return best


def kfold_beta_sweep(tensors, betas=BETA_GRID, config: TrainConfig | None = None,
                     ablation="gsp-info", callback=None) -> BetaSweepResult:
    """Mean validation macro-F1 over parent-level folds for each beta."""
    config = config or TrainConfig()
    betas = [float(b) for b in betas]
    if not betas:
        raise ValueError("need at least one beta")
    folds = kfold_indices(tensors, config.folds, config.seed)
    fold_scores = {b: [] for b in betas}
    for b in betas:
        cfg = replace(config, beta=b)
        for k, val_idx in enumerate(folds):
            held = set(val_idx.tolist())
            tr = [t for i, t in enumerate(tensors) if i not in held]
            va = [tensors[i] for i in val_idx]
            res = train_on_tensors(tr, cfg, ablation, seed=config.seed + k)
            vdata = prepare_eval_data(va, res.bundle.ordering, res.bundle.stats, cfg, config.seed + 1000 + k)
            f1 = f1_scores(res.bundle.predict(vdata.X), vdata.y)["macro"]
            fold_scores[b].append(f1)
            if callback:
                callback({"beta": b, "fold": k, "macro_f1": f1})
    scores = {b: float(np.mean(v)) for b, v in fold_scores.items()}
    return BetaSweepResult(scores, fold_scores, select_beta(scores))


def sliding_grid(tensor: PqvfTensor, window_s=12.0, start_offset_s=0.5, step_s=0.1):
    """Elapsed-time sample offsets whose window right edge fits in the tensor."""
    rate = tensor.sample_rate_hz
    if tensor.event_start_index is None:
        raise WindowExceedsTensor(f"{tensor.tensor_id}: no event start to anchor the window")
    start, step = int(round(start_offset_s * rate)), int(round(step_s * rate))
    if step < 1:
        raise ValueError("step shorter than one sample")
    last = tensor.n_times - tensor.event_start_index
    return np.arange(start, last + 1, step)


def sliding_window_eval(bundle: ModelBundle, tensors, window_s: float = 12.0,
                        start_offset_s: float = 0.5, step_s: float = 0.1, pad: str | None = "edge") -> dict:
    """Per-class F1 as a function of time elapsed since the event start.

    For elapsed time ``t`` the window covers the ``window_s`` seconds ending at
    ``event_start + t``.  Only line and generator events take part.  When the
    window would begin before the first sample, ``pad="edge"`` repeats the
    first sample; ``pad=None`` raises :class:`WindowExceedsTensor`.
    """
    kept = [t for t in tensors if t.label in (EventClass.LineEvent, EventClass.GeneratorEvent)]
    if not kept:
        raise ValueError("no line or generator events to evaluate")
    rate = kept[0].sample_rate_hz
    T_s = int(round(window_s * rate))
    grids = [sliding_grid(t, window_s, start_offset_s, step_s) for t in kept]
    n_common = min(len(g) for g in grids)
    if n_common == 0:
        raise WindowExceedsTensor("no elapsed time fits every tensor")
    offsets = grids[0][:n_common]
    labels = np.array([int(t.label) for t in kept])
    series = {"t": [], EventClass.LineEvent.name: [], EventClass.GeneratorEvent.name: [], "mean": []}
    for off in offsets:
        wins = []
        for t in kept:
            end = t.event_start_index + int(off)
            lo = end - T_s
            if lo < 0:
                if pad != "edge":
                    raise WindowExceedsTensor(f"{t.tensor_id}: window starts {-lo} samples early")
                w = np.concatenate([np.repeat(t.data[:1], -lo, axis=0), t.data[:end]])
            else:
                w = t.data[lo:end]
            wins.append(w)
        probs = bundle.predict_raw(np.stack(wins))
        f1 = f1_scores(np.argmax(probs, axis=1), labels)["per_class"]
        line, gen = float(f1[EventClass.LineEvent]), float(f1[EventClass.GeneratorEvent])
        series["t"].append(round(off / rate, 6))
        series[EventClass.LineEvent.name].append(line)
        series[EventClass.GeneratorEvent.name].append(gen)
        series["mean"].append((line + gen) / 2)
    return series


def f1_at(series: dict, t: float, key: str = "mean") -> float:
    ts = np.asarray(series["t"])
    return float(series[key][int(np.argmin(np.abs(ts - t)))])


REPR_HEADER = ("x", "y", "class", "source_id")


def export_representations(bundle: ModelBundle, data: PreparedData, path=None):
    """Encode snapshots, project onto two principal components, optionally write CSV.

    Returns ``(coords [S, 2], labels, source_ids)``.
    """
    S = len(data.X)
    if S >= 2:
        z = bundle.represent(data.X).astype(np.float64)
        coords = pca_project(z, 2).scores
    else:
        coords = np.zeros((S, 2))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPR_HEADER)
            for (a, b), c, s in zip(coords, data.y, data.source_ids):
                w.writerow([repr(float(a)), repr(float(b)), EventClass(int(c)).name, s])
    return coords, data.y.copy(), list(data.source_ids)


def run_ablation(train_tensors, test_tensors, config: TrainConfig, ablations=ALL_ABLATIONS,
                 seeds=None, callback=None) -> dict:
    """Train/evaluate each ablation over several seeds; returns name -> list of reports."""
    seeds = list(range(config.seed, config.seed + config.seeds)) if seeds is None else list(seeds)
    out = {}
    for ab in ablations:
        ab = Ablation.parse(ab)
        reports = []
        for s in seeds:
            res = train_on_tensors(train_tensors, config, ab, seed=s)
            test = prepare_eval_data(test_tensors, res.bundle.ordering, res.bundle.stats, config, s + 10_000)
            rep = evaluate(res.bundle, test, prepare_source_ids(train_tensors), res.history)
            rep.timings["train_s"] = res.train_seconds
            reports.append(rep)
            if callback:
                callback(ab.name, s, rep, res)
        out[ab.name] = reports
    return out


def prepare_source_ids(tensors) -> set:
    return {t.tensor_id for t in tensors}
