"""``pmu-events`` command line: synth, preprocess, sort, augment, train, eval,
classify, baseline, repr-export and beta-sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.  Failures print a human-readable line followed by a
one-line JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment as aug
from . import gsp, ingest, synth
from .baselines import run_baseline
from .config import PROFILES, TRAIN_PROFILES, RunConfig, load_run_config, write_resolved
from .core import EventClass, compute_scaling_stats, load_tensor, save_tensor, zscore_scale
from .errors import (DataError, DivergenceError, PmuEventsError, ProvenanceError,
                     UnsupportedConfig, VersionError)
from .train import (BETA_GRID, Ablation, ModelBundle, evaluate, export_representations,
                    kfold_beta_sweep, prepare_eval_data, prepare_training_data, sliding_window_eval,
                    train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- dataset directories ------------------------------------------------------

def dataset_hash(data_dir) -> str:
    """Digest of the manifest and every tensor file it lists."""
    data_dir = Path(data_dir)
    manifest = _manifest(data_dir)
    h = hashlib.sha256()
    for e in sorted(manifest["tensors"], key=lambda e: e["file"]):
        h.update(e["file"].encode())
        h.update((data_dir / e["file"]).read_bytes())
    return h.hexdigest()[:16]


def _manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"{data_dir}: no manifest.json")
    return json.loads(path.read_text())


def load_dataset(data_dir) -> list:
    data_dir = Path(data_dir)
    return [load_tensor(data_dir / e["file"]) for e in _manifest(data_dir)["tensors"]]


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)
    else:
        profile = getattr(args, "profile", None) or "desk"
        cfg = RunConfig(profile=profile, train=TRAIN_PROFILES[profile], synth=PROFILES[profile])
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "ablation", None):
        cfg = replace(cfg, ablation=Ablation.parse(args.ablation).name)
    synth_kw = {k: getattr(args, a) for k, a in _SYNTH_FLAGS.items() if getattr(args, a, None) is not None}
    if synth_kw:
        cfg = replace(cfg, synth=replace(cfg.synth, **synth_kw))
    return cfg


# synth profile field -> argparse attribute
_SYNTH_FLAGS = {"n_pmus": "n_pmus", "class_counts": "counts", "window_s": "window_s",
                "rate": "rate_hz", "noise_sigma": "noise"}


def _parse_counts(text: str) -> dict:
    """``NonEvent=6,LineEvent=12,...`` -> mapping; unspecified classes get 0."""
    counts = {c.name: 0 for c in EventClass}
    for item in filter(None, (x.strip() for x in text.split(","))):
        name, _, n = item.partition("=")
        try:
            counts[EventClass.parse(name.strip()).name] = int(n)
        except ValueError:
            raise UsageError(f"bad class count {item!r}; expected Name=int") from None
    return counts


def _data_dir(args, cfg) -> Path:
    d = getattr(args, "data", None) or cfg.paths.get("data")
    if not d:
        raise UsageError("no data directory: pass --data or set [paths].data")
    return Path(d)


def _out_dir(args, cfg) -> Path:
    d = getattr(args, "out", None) or cfg.paths.get("out")
    if not d:
        raise UsageError("no output location: pass --out or set [paths].out")
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _split(tensors, cfg):
    return aug.split_dataset(tensors, cfg.test_fraction, cfg.derived_seed("split"))


# -- subcommands --------------------------------------------------------------

def cmd_synth(args):
    cfg = _config(args)
    p = cfg.synth
    grid = synth.gen_grid(p.n_pmus, p.length_scale, cfg.derived_seed("grid"))
    tensors = synth.gen_dataset(grid, p.class_counts, p.window_s, cfg.derived_seed("data"), p.rate,
                                p.noise_sigma, p.magnitude_range)
    # a generated dataset belongs where later stages read data from
    out = args.out or cfg.paths.get("data")
    if not out:
        raise UsageError("no output location: pass --out or set [paths].data")
    out = Path(out)
    synth.write_dataset(tensors, out, {"config_hash": cfg.hash, "synth": p.to_json(),
                                       "grid_positions": grid.positions.tolist()})
    write_resolved(cfg, out)
    print(f"wrote {len(tensors)} tensors to {out}")


def cmd_preprocess(args):
    records = ingest.read_records_csv(args.input)
    tensor, mask = ingest.run_quality_pipeline(
        records, args.rate, rank=args.rank, label=args.label, event_start_index=args.event_start,
        tensor_id=args.tensor_id or Path(args.input).stem)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(tensor, out)
    report = {"tensor": out.name, "n_times": tensor.n_times, "pmu_ids": list(tensor.pmu_ids),
              "na_pmus": [tensor.pmu_ids[i] for i in mask.na_pmus],
              "missing_per_pmu": mask.missing.any(axis=2).sum(axis=0).tolist()}
    _write_json(out.with_suffix(".quality.json"), report)
    print(f"wrote {out}")


def cmd_sort(args):
    cfg = _config(args)
    tensors = load_dataset(args.input)
    ordering, W = gsp.sort_pmus(tensors)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {**ordering.to_json(), "pmu_ids": list(tensors[0].pmu_ids),
                      "data_hash": dataset_hash(args.input), "config_hash": cfg.hash})
    if args.weights_out:
        prefix = Path(args.weights_out)
        np.savetxt(f"{prefix}_before.csv", W, delimiter=",", fmt="%.17g")
        np.savetxt(f"{prefix}_after.csv", gsp.permute_weights(W, ordering), delimiter=",", fmt="%.17g")
    print(f"lambda2={ordering.lambda2:.6g}; wrote {out}")


def cmd_augment(args):
    """Snapshot manifest: parent files plus offsets, so no sample data is copied."""
    cfg = _config(args)
    entries = _manifest(args.input)["tensors"]
    tensors = load_dataset(args.input)
    ordering = None
    if args.ordering:
        ordering = gsp.PmuOrdering.from_json(json.loads(Path(args.ordering).read_text()))
        tensors = [gsp.apply_order(t, ordering) for t in tensors]
    policy = cfg.train.policy
    seeds = np.random.SeedSequence(cfg.derived_seed("augment")).spawn(len(tensors))
    snaps, rows = [], []
    for e, t, sd in zip(entries, tensors, seeds):
        drawn = aug.sample_snapshots(t, policy, sd)
        snaps += drawn
        rows += [{"file": e["file"], "tensor_id": s.source_id, "label": s.label.name,
                  "offset": s.offset_index} for s in drawn]
    stats = compute_scaling_stats(snaps) if args.scale else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    counts = {c.name: sum(s.label == c for s in snaps) for c in EventClass}
    _write_json(out, {
        "kind": "snapshot-set", "version": 1, "source_dir": str(Path(args.input).resolve()),
        "window_len": policy.window_len(tensors[0].sample_rate_hz), "policy": policy.to_json(),
        "ordering": ordering.to_json() if ordering else None,
        "scaling_stats": stats.to_json() if stats else None, "class_counts": counts,
        "snapshots": rows, "config_hash": cfg.hash})
    if args.npz:
        data = [zscore_scale(s, stats).data if stats else s.data for s in snaps]
        np.savez(args.npz, data=np.stack(data), labels=np.array([int(s.label) for s in snaps]))
    print(f"wrote {len(snaps)} snapshot references to {out}")


def cmd_train(args):
    cfg = _config(args)
    data_dir = _data_dir(args, cfg)
    out = _out_dir(args, cfg)
    tensors = load_dataset(data_dir)
    tr, te = _split(tensors, cfg)
    ab = Ablation.parse(cfg.ablation)
    data = prepare_training_data(tr, cfg.train, ab.sorting, cfg.seed)
    held = prepare_eval_data(te, data.ordering, data.stats, cfg.train, cfg.derived_seed("eval"))
    res = train(data, cfg.train, ab, eval_data=held, diagnostics_path=out / "diagnostics.jsonl",
                seed=cfg.seed)
    bundle = res.bundle
    bundle.provenance = {
        "data_hash": dataset_hash(data_dir), "config_hash": cfg.hash,
        "train_ids": [t.tensor_id for t in tr], "test_ids": [t.tensor_id for t in te],
        "accuracy_curve": [{k: r[k] for k in ("epoch", "train_acc", "eval_acc")} for r in res.history],
    }
    bundle.save(out / "model.ckpt")
    write_resolved(cfg, out)
    _write_json(out / "train_timings.json", {"train_s": res.train_seconds, "steps": res.n_steps})
    last = res.history[-1]
    print(f"{ab.name}: {res.n_steps} steps, train_acc={last['train_acc']:.3f}, "
          f"held-out acc={last['eval_acc']:.3f}; wrote {out / 'model.ckpt'}")


def _check_provenance(bundle: ModelBundle, data_dir, tensors, cfg):
    prov = bundle.provenance
    if not prov:
        raise ProvenanceError("checkpoint carries no provenance record")
    if prov["data_hash"] != dataset_hash(data_dir):
        raise ProvenanceError("dataset differs from the one the model was trained on")
    by_id = {t.tensor_id: t for t in tensors}
    try:
        tr = [by_id[i] for i in prov["train_ids"]]
        te = [by_id[i] for i in prov["test_ids"]]
    except KeyError as exc:
        raise ProvenanceError(f"tensor {exc} recorded at training time is missing") from None
    redo = prepare_training_data(tr, bundle.config, bundle.ablation.sorting, bundle.config.seed)
    if not np.array_equal(redo.ordering.permutation, bundle.ordering.permutation):
        raise ProvenanceError("PMU ordering does not match the checkpoint")
    if not (np.array_equal(redo.stats.mean, bundle.stats.mean)
            and np.array_equal(redo.stats.std, bundle.stats.std)):
        raise ProvenanceError("scaling statistics do not match the checkpoint")
    return tr, te


def cmd_eval(args):
    bundle = ModelBundle.load(args.model)
    data_dir = Path(args.data)
    tensors = load_dataset(data_dir)
    tr, te = _check_provenance(bundle, data_dir, tensors, None)
    cfg = _config(args) if args.config else None
    seed = cfg.derived_seed("eval") if cfg else _eval_seed(bundle)
    test = prepare_eval_data(te, bundle.ordering, bundle.stats, bundle.config, seed)
    rep = evaluate(bundle, test, {t.tensor_id for t in tr})
    rep.accuracy_curve = bundle.provenance.get("accuracy_curve", [])
    rep.config_hash = bundle.provenance.get("config_hash", bundle.config_hash)
    sw_tensors = [t for t in te if t.label in (EventClass.LineEvent, EventClass.GeneratorEvent)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if sw_tensors and not args.no_sliding:
        try:
            rep.sliding_window = sliding_window_eval(bundle, sw_tensors, bundle.config.window_s)
        except DataError as exc:
            warnings.warn(f"sliding-window evaluation skipped: {exc}")
    (out / "report.json").write_text(rep.dumps() + "\n")
    _write_json(out / "report_timings.json", rep.timings)
    with open(out / "accuracy_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_acc", "eval_acc"])
        for r in rep.accuracy_curve:
            w.writerow([r["epoch"], r["train_acc"], r.get("eval_acc", "")])
    if rep.sliding_window:
        sw = rep.sliding_window
        with open(out / "sliding_window.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            keys = ["t", "LineEvent", "GeneratorEvent", "mean"]
            w.writerow(keys)
            w.writerows(zip(*(sw[k] for k in keys)))
    print(f"macro F1={rep.macro_f1:.4f} accuracy={rep.accuracy:.4f}; wrote {out / 'report.json'}")


def _eval_seed(bundle) -> int:
    cfg = RunConfig(seed=bundle.config.seed)
    return cfg.derived_seed("eval")


def cmd_classify(args):
    bundle = ModelBundle.load(args.model)
    src = Path(args.input)
    if src.suffix.lower() == ".csv":
        tensor, _ = ingest.run_quality_pipeline(ingest.read_records_csv(src), bundle.rate)
    else:
        tensor = load_tensor(src)
    T_s = bundle.encoder.input_dims[0]
    if tensor.n_pmus != bundle.encoder.input_dims[1]:
        raise DataError(f"model expects {bundle.encoder.input_dims[1]} PMUs, got {tensor.n_pmus}")
    end = tensor.n_times if args.end is None else int(round(args.end * tensor.sample_rate_hz))
    if end - T_s < 0 or end > tensor.n_times:
        raise DataError(f"a {T_s}-sample window ending at sample {end} does not fit the tensor")
    probs = bundle.predict_raw(tensor.data[end - T_s:end])[0]
    result = {"class": EventClass(int(np.argmax(probs))).name,
              "probabilities": {c.name: float(probs[c]) for c in EventClass},
              "model_version": bundle.model_version}
    print(json.dumps(result, sort_keys=True))


def cmd_baseline(args):
    cfg = _config(args)
    data_dir = _data_dir(args, cfg)
    tensors = load_dataset(data_dir)
    tr, te = _split(tensors, cfg)
    data = prepare_training_data(tr, cfg.train, False, cfg.seed)
    test = prepare_eval_data(te, data.ordering, data.stats, cfg.train, cfg.derived_seed("eval"))
    out = _out_dir(args, cfg)
    methods = ["knn", "svm"] if args.method == "both" else [args.method]
    for m in methods:
        rep = run_baseline(m, data.snapshots, test.snapshots, n_pc=args.n_pc, K=args.k, C=args.C,
                           gamma=args.gamma)
        rep.no_leakage = aug.check_disjoint(data.snapshots, test.snapshots)
        (out / f"baseline_{m}.json").write_text(rep.dumps() + "\n")
        _write_json(out / f"baseline_{m}_timings.json", rep.timings)
        print(f"{rep.method}: macro F1={rep.macro_f1:.4f}")
    write_resolved(cfg, out)


def cmd_repr_export(args):
    bundle = ModelBundle.load(args.model)
    tensors = load_dataset(args.data)
    if args.subset != "all":
        ids = set(bundle.provenance.get(f"{args.subset}_ids", []))
        tensors = [t for t in tensors if t.tensor_id in ids]
    data = prepare_eval_data(tensors, bundle.ordering, bundle.stats, bundle.config,
                             _eval_seed(bundle)) if tensors else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if data is None:
        out.write_text("x,y,class,source_id\n")
        print("no snapshots; wrote header only")
        return
    export_representations(bundle, data, out)
    print(f"wrote {len(data.X)} rows to {out}")


def cmd_beta_sweep(args):
    cfg = _config(args)
    if args.folds is not None:
        cfg = replace(cfg, train=replace(cfg.train, folds=args.folds))
    tensors = load_dataset(_data_dir(args, cfg))
    tr, _ = _split(tensors, cfg)
    betas = [float(b) for b in args.betas.split(",")] if args.betas else list(BETA_GRID)
    res = kfold_beta_sweep(tr, betas, cfg.train, cfg.ablation,
                           callback=lambda r: print(json.dumps(r), file=sys.stderr))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {**res.to_json(), "config_hash": cfg.hash})
    print(f"best beta={res.best_beta}")


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pmu-events", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="TOML or JSON run configuration")
        sp.add_argument("--profile", choices=sorted(PROFILES), help="built-in profile when no --config")
        sp.add_argument("--seed", type=int, help="single seed for every random stage")
        if data:
            sp.add_argument("--data", help="dataset directory with manifest.json")
        if out:
            sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    common(sp, data=False)
    sp.add_argument("--n-pmus", type=int)
    sp.add_argument("--counts", type=_parse_counts, help="e.g. NonEvent=6,LineEvent=12")
    sp.add_argument("--window-s", type=float, help="tensor length in seconds")
    sp.add_argument("--rate", dest="rate_hz", type=float, help="sample rate in Hz")
    sp.add_argument("--noise", type=float, help="ambient noise sigma")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("preprocess", help="PMU record CSV -> quality-checked tensor")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True, help="output .pqvf file")
    sp.add_argument("--rate", type=float, default=30.0)
    sp.add_argument("--rank", type=int, default=3)
    sp.add_argument("--label")
    sp.add_argument("--event-start", type=int)
    sp.add_argument("--tensor-id")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("sort", help="Fiedler ordering of PMUs")
    sp.add_argument("--in", dest="input", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="ordering JSON")
    sp.add_argument("--weights-out", help="prefix for before/after weight matrix CSVs")
    common(sp, data=False, out=False)
    sp.set_defaults(func=cmd_sort)

    sp = sub.add_parser("augment", help="draw class-rebalanced snapshots")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True, help="snapshot manifest JSON")
    sp.add_argument("--ordering", help="ordering JSON to apply first")
    sp.add_argument("--scale", action="store_true", help="record z-score stats from these snapshots")
    sp.add_argument("--npz", help="also materialize the snapshot arrays here")
    common(sp, data=False, out=False)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.add_argument("--ablation", choices=sorted(Ablation.NAMES))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on its held-out tensors")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--config")
    sp.add_argument("--no-sliding", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("classify", help="classify one tensor or record CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--end", type=float, help="window right edge in seconds (default: tensor end)")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("baseline", help="PCA+KNN / PCA+SVM baselines")
    common(sp)
    sp.add_argument("--method", choices=["knn", "svm", "both"], default="both")
    sp.add_argument("--n-pc", type=int, default=50)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--gamma", type=float)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("repr-export", help="2-PC projection of learned representations")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="output CSV")
    sp.add_argument("--subset", choices=["test", "train", "all"], default="test")
    sp.set_defaults(func=cmd_repr_export)

    sp = sub.add_parser("beta-sweep", help="k-fold cross-validation over beta")
    common(sp, out=False)
    sp.add_argument("--out", required=True, help="output JSON")
    sp.add_argument("--betas", help="comma-separated list (default: 0.01,0.05,0.1,0.6,1)")
    sp.add_argument("--folds", type=int)
    sp.add_argument("--ablation", choices=sorted(Ablation.NAMES))
    sp.set_defaults(func=cmd_beta_sweep)
    return p


def _fail(code: int, exc: BaseException) -> int:
    msg = str(exc) or type(exc).__name__
    print(f"error: {msg}", file=sys.stderr)
    print(json.dumps({"error": type(exc).__name__, "message": msg, "exit_code": code},
                     sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            raise UsageError("missing subcommand")
        args.func(args)
    except (UsageError, UnsupportedConfig) as exc:
        return _fail(EXIT_USAGE, exc)
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, exc)
    except (DataError, VersionError, PmuEventsError, OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
