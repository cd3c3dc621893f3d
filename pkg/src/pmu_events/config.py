"""Run configuration documents (TOML or JSON) for the command-line tools."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import EventClass
from .errors import UnsupportedConfig
from .train import DESK_ENCODER, Ablation, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SynthProfile:
    n_pmus: int = 16
    length_scale: float = 0.3
    class_counts: dict = field(default_factory=lambda: {
        "NonEvent": 25, "LineEvent": 150, "GeneratorEvent": 17, "OscillationEvent": 25})
    window_s: float = 20.0
    rate: float = 30.0
    noise_sigma: float = 0.1
    magnitude_range: tuple = (0.5, 1.5)

    def __post_init__(self):
        counts = {EventClass.parse(k).name: int(v) for k, v in self.class_counts.items()}
        object.__setattr__(self, "class_counts", counts)
        object.__setattr__(self, "magnitude_range", tuple(float(v) for v in self.magnitude_range))

    def to_json(self) -> dict:
        d = asdict(self)
        d["magnitude_range"] = list(self.magnitude_range)
        return d


PROFILES = {
    # ~600 snapshots under the default augmentation policy
    "desk": SynthProfile(),
    "tiny": SynthProfile(n_pmus=8, class_counts={"NonEvent": 6, "LineEvent": 12,
                                                 "GeneratorEvent": 4, "OscillationEvent": 6},
                         window_s=16.0),
}

TRAIN_PROFILES = {
    "desk": TrainConfig(epochs=12, encoder=DESK_ENCODER),
    "tiny": TrainConfig(epochs=3, encoder=DESK_ENCODER, folds=2, seeds=1),
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    ablation: str = "gsp-info"
    test_fraction: float = 0.2
    profile: str = "desk"
    train: TrainConfig = field(default_factory=lambda: TRAIN_PROFILES["desk"])
    synth: SynthProfile = field(default_factory=lambda: PROFILES["desk"])
    paths: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        Ablation.parse(self.ablation)
        if not 0 < self.test_fraction < 1:
            raise UnsupportedConfig("test_fraction must lie in (0, 1)")

    def to_json(self) -> dict:
        return {"schema_version": self.schema_version, "seed": self.seed, "ablation": self.ablation,
                "test_fraction": self.test_fraction, "profile": self.profile,
                "train": self.train.to_json(), "synth": self.synth.to_json(), "paths": dict(self.paths)}

    @property
    def hash(self) -> str:
        """Digest of everything except paths, which do not affect results."""
        d = self.to_json()
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed), train=replace(self.train, seed=int(seed)))

    def derived_seed(self, tag: str) -> int:
        """Independent stream for one pipeline stage, all flowing from ``seed``."""
        key = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")
        return int(np.random.SeedSequence([self.seed, key]).generate_state(1)[0])


_TOP = {"schema_version", "seed", "ablation", "test_fraction", "profile", "train", "synth", "paths"}
_PATHS = {"data", "out"}


def _check_keys(d, allowed, where):
    bad = set(d) - set(allowed)
    if bad:
        raise UnsupportedConfig(f"unknown key(s) in {where}: {sorted(bad)}")


def run_config_from_dict(d: dict) -> RunConfig:
    _check_keys(d, _TOP, "run config")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise UnsupportedConfig(f"config schema_version {version} unsupported (expected {SCHEMA_VERSION})")
    profile = d.get("profile", "desk")
    if profile not in PROFILES:
        raise UnsupportedConfig(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    train = d.get("train", {})
    _check_keys(train, TrainConfig.__dataclass_fields__, "[train]")
    synth = d.get("synth", {})
    _check_keys(synth, SynthProfile.__dataclass_fields__, "[synth]")
    paths = d.get("paths", {})
    _check_keys(paths, _PATHS, "[paths]")
    seed = int(d.get("seed", 0))
    tcfg = replace(TRAIN_PROFILES[profile], **{"seed": seed, **train})
    scfg = replace(PROFILES[profile], **synth)
    return RunConfig(seed=seed, ablation=d.get("ablation", "gsp-info"),
                     test_fraction=float(d.get("test_fraction", 0.2)), profile=profile,
                     train=tcfg, synth=scfg, paths=dict(paths), schema_version=version)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        d = json.loads(text)
    else:
        try:
            d = tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise UnsupportedConfig(f"{path}: {exc}") from None
    return run_config_from_dict(d)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    path.write_text(json.dumps({**cfg.to_json(), "config_hash": cfg.hash}, indent=2, sort_keys=True))
    return path
