"""Synthetic labelled PQ|V|f tensors with known structure.

Ambient noise is Gaussian, spatially correlated through an exponential kernel
over random PMU positions and AR(1) in time.  Event signatures are simple
phenomenological shapes added on top:

* line event: simultaneous steps in P, Q and |V|, scaled by the mode shape
  ``k_i = exp(-dist(i, epicenter) / length_scale)``;
* generator event: a system-wide frequency dip
  ``-A (1 - exp(-t/tau1)) exp(-t/tau2)`` in one of two regimes, ``slow``
  (long decline) or ``sharp`` (fast drop and quick rebound);
* oscillation: a damped sinusoid on P, Q and f with the same mode shape,
  spanning the whole window.

Because the noise law is known exactly, :func:`true_posterior` can evaluate
the Bayes posterior over classes for fixed signatures.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .core import N_CHANNELS, ChannelKind, EventClass, PqvfTensor, build_tensor, save_tensor
from .errors import UnsupportedConfig

AR_COEF = 0.99
JITTER = 1e-9
NOMINAL_V = 1.0
NOMINAL_F = 60.0
# per-channel multiplier applied to noise_sigma: P, Q in p.u., |V| in p.u., f in Hz
NOISE_SCALE = np.array([1.0, 1.0, 0.1, 0.01])

REFERENCE_COUNTS = {EventClass.NonEvent: 120, EventClass.LineEvent: 825,
                    EventClass.GeneratorEvent: 84, EventClass.OscillationEvent: 118}

GENERATOR_REGIMES = {
    "slow": {"tau1": 2.0, "tau2": 30.0},
    "sharp": {"tau1": 0.1, "tau2": 0.6},
}
LINE_Q_RATIO = 0.5
LINE_V_RATIO = -0.02
GEN_F_DEPTH = 0.08  # Hz per unit magnitude
OSC_Q_RATIO = 0.5
OSC_F_RATIO = 0.01  # Hz per unit magnitude


@dataclass(frozen=True, eq=False)
class SynthGrid:
    n_pmus: int
    positions: np.ndarray
    coupling: np.ndarray
    length_scale: float
    base_p: np.ndarray
    base_q: np.ndarray

    @property
    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(-1))

    def mode_shape(self, epicenter: int) -> np.ndarray:
        """Kernel column without jitter, so the epicenter entry is exactly 1."""
        return np.exp(-self.distances[:, epicenter] / self.length_scale)

    def pmu_ids(self):
        return tuple(f"PMU{i:03d}" for i in range(self.n_pmus))


@dataclass(frozen=True)
class EventSpec:
    event_class: EventClass
    epicenter: int = 0
    magnitude: float = 1.0
    onset_s: float = 0.0
    params: Mapping = field(default_factory=dict)


def gen_grid(n: int, length_scale: float, seed: int) -> SynthGrid:
    if n < 2:
        raise ValueError("need at least two PMUs")
    if length_scale <= 0:
        raise ValueError("length scale must be positive")
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 1.0, size=(n, 2))
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    K = np.exp(-dist / length_scale) + JITTER * np.eye(n)
    base_p = rng.uniform(0.5, 1.5, size=n)
    base_q = rng.uniform(0.1, 0.4, size=n)
    for a in (pos, K, base_p, base_q):
        a.setflags(write=False)
    return SynthGrid(n, pos, K, float(length_scale), base_p, base_q)


def nominal(grid: SynthGrid) -> np.ndarray:
    """``[N, 4]`` operating point around which every tensor fluctuates."""
    return np.stack([grid.base_p, grid.base_q, np.full(grid.n_pmus, NOMINAL_V),
                     np.full(grid.n_pmus, NOMINAL_F)], axis=1)


def signature(grid: SynthGrid, spec: EventSpec, T: int, rate: float) -> np.ndarray:
    """Deterministic ``[T, N, 4]`` event offset added to nominal plus noise."""
    out = np.zeros((T, grid.n_pmus, N_CHANNELS))
    cls = EventClass.parse(spec.event_class)
    if cls is EventClass.NonEvent:
        return out
    k = grid.mode_shape(spec.epicenter)
    m = spec.magnitude
    t = np.arange(T) / rate
    if cls is EventClass.LineEvent:
        on = (t >= spec.onset_s).astype(float)[:, None]
        out[:, :, ChannelKind.P] = on * (m * k)
        out[:, :, ChannelKind.Q] = on * (LINE_Q_RATIO * m * k)
        out[:, :, ChannelKind.Vmag] = on * (LINE_V_RATIO * m * k)
    elif cls is EventClass.GeneratorEvent:
        p = spec.params
        regime = GENERATOR_REGIMES[p.get("regime", "sharp")]
        tau1, tau2 = p.get("tau1", regime["tau1"]), p.get("tau2", regime["tau2"])
        out[:, :, ChannelKind.Freq] = generator_dip(t - spec.onset_s, GEN_F_DEPTH * m, tau1, tau2)[:, None]
    elif cls is EventClass.OscillationEvent:
        p = spec.params
        f0, damp, phase = p.get("freq_hz", 0.5), p.get("damping", 0.05), p.get("phase", 0.0)
        ts = t - spec.onset_s
        wave = np.exp(-damp * ts) * np.sin(2 * np.pi * f0 * ts + phase)
        wave_f = np.exp(-damp * ts) * np.cos(2 * np.pi * f0 * ts + phase)
        out[:, :, ChannelKind.P] = m * wave[:, None] * k
        out[:, :, ChannelKind.Q] = OSC_Q_RATIO * m * wave[:, None] * k
        out[:, :, ChannelKind.Freq] = OSC_F_RATIO * m * wave_f[:, None] * k
    return out


def generator_dip(t, amplitude, tau1, tau2):
    """``-A (1 - e^{-t/tau1}) e^{-t/tau2}`` for ``t >= 0``, zero before onset."""
    t = np.asarray(t, dtype=np.float64)
    tp = np.maximum(t, 0.0)
    return np.where(t >= 0, -amplitude * (1 - np.exp(-tp / tau1)) * np.exp(-tp / tau2), 0.0)


def noise_field(grid: SynthGrid, T: int, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) field with spatial covariance ``noise_sigma^2 * scale_c^2 * K``."""
    if noise_sigma == 0:
        return np.zeros((T, grid.n_pmus, N_CHANNELS))
    chol = np.linalg.cholesky(grid.coupling)
    eps = rng.standard_normal((T, N_CHANNELS, grid.n_pmus))
    e = eps @ chol.T  # [T, C, N]
    s = np.sqrt(1 - AR_COEF ** 2)
    zi = (1 - s) * e[0]
    x, _ = lfilter([s], [1.0, -AR_COEF], e, axis=0, zi=zi[None])
    x = x.transpose(0, 2, 1)
    return x * (noise_sigma * NOISE_SCALE)


def event_start_index(spec: EventSpec, rate: float):
    cls = EventClass.parse(spec.event_class)
    if cls is EventClass.NonEvent:
        return None
    if cls is EventClass.OscillationEvent:
        return 0
    return int(round(spec.onset_s * rate))


def gen_event_tensor(grid: SynthGrid, spec: EventSpec, T: int, rate: float = 30.0,
                     noise_sigma: float = 0.05, seed: int = 0, tensor_id: str = "") -> PqvfTensor:
    if T < rate:
        raise ValueError("window must span at least one second")
    rng = np.random.default_rng(seed)
    data = nominal(grid)[None] + noise_field(grid, T, noise_sigma, rng) + signature(grid, spec, T, rate)
    meta = {"epicenter": int(spec.epicenter), "magnitude": float(spec.magnitude),
            **{k: v for k, v in spec.params.items()}}
    return build_tensor(data.astype(np.float32), rate, spec.event_class,
                        event_start_index=event_start_index(spec, rate),
                        pmu_ids=grid.pmu_ids(), tensor_id=tensor_id, meta=meta)


def random_spec(cls: EventClass, grid: SynthGrid, window_s: float, rng: np.random.Generator,
                magnitude_range=(0.5, 1.5)) -> EventSpec:
    cls = EventClass.parse(cls)
    epicenter = int(rng.integers(grid.n_pmus))
    magnitude = float(rng.uniform(*magnitude_range))
    params = {}
    onset = 0.0
    if cls in (EventClass.LineEvent, EventClass.GeneratorEvent):
        onset = window_s / 2
    if cls is EventClass.GeneratorEvent:
        params["regime"] = "slow" if rng.random() < 0.5 else "sharp"
    elif cls is EventClass.OscillationEvent:
        params = {"freq_hz": float(rng.uniform(0.2, 2.0)),
                  "damping": float(rng.uniform(0.0, 0.1)),
                  "phase": float(rng.uniform(0, 2 * np.pi))}
    return EventSpec(cls, epicenter, magnitude, onset, params)


def gen_dataset(grid: SynthGrid, class_counts: Mapping, window_s: float = 20.0, seed: int = 0,
                rate: float = 30.0, noise_sigma: float = 0.05, magnitude_range=(0.5, 1.5),
                id_prefix: str = "syn") -> list:
    """Independent tensors for each class; line/generator onsets sit at the window midpoint."""
    T = int(round(window_s * rate))
    counts = {EventClass.parse(k): int(v) for k, v in class_counts.items()}
    if any(v < 0 for v in counts.values()):
        raise ValueError("class counts must be nonnegative")
    total = sum(counts.values())
    children = np.random.SeedSequence(seed).spawn(total)
    out = []
    i = 0
    for cls in EventClass:
        for _ in range(counts.get(cls, 0)):
            rng = np.random.default_rng(children[i])
            spec = random_spec(cls, grid, window_s, rng, magnitude_range)
            noise_seed = int(rng.integers(2 ** 63))
            out.append(gen_event_tensor(grid, spec, T, rate, noise_sigma, noise_seed,
                                        tensor_id=f"{id_prefix}-{i:05d}"))
            i += 1
    return out


def write_dataset(tensors, out_dir, extra: Mapping | None = None) -> Path:
    """One ``.pqvf`` file per tensor plus ``manifest.json`` listing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in tensors:
        name = f"{t.tensor_id or len(entries)}.pqvf"
        save_tensor(t, out_dir / name)
        entries.append({"file": name, "tensor_id": t.tensor_id,
                        "label": t.label.name if t.label is not None else None})
    manifest = {"kind": "tensor-set", "version": 1, "tensors": entries, **(extra or {})}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# -- exact posterior --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PosteriorModel:
    """Generative configuration with fixed per-class signatures and class priors."""

    grid: SynthGrid
    specs: Mapping
    priors: Mapping
    n_times: int
    rate: float = 30.0
    noise_sigma: float = 0.05

    def sample(self, rng: np.random.Generator):
        classes = list(self.priors)
        p = np.array([self.priors[c] for c in classes], dtype=float)
        c = classes[int(rng.choice(len(classes), p=p / p.sum()))]
        t = gen_event_tensor(self.grid, self.specs[c], self.n_times, self.rate, self.noise_sigma,
                             int(rng.integers(2 ** 63)))
        return c, t


def _ar1_whiten(r: np.ndarray) -> np.ndarray:
    u = np.empty_like(r)
    u[0] = r[0]
    u[1:] = (r[1:] - AR_COEF * r[:-1]) / np.sqrt(1 - AR_COEF ** 2)
    return u


def log_likelihoods(model: PosteriorModel, tensor) -> dict:
    """Gaussian log-likelihood of ``tensor`` under each class, up to a shared constant."""
    x = np.asarray(getattr(tensor, "data", tensor), dtype=np.float64)
    T = x.shape[0]
    chol = np.linalg.cholesky(model.grid.coupling)
    base = nominal(model.grid)[None]
    out = {}
    for c, spec in model.specs.items():
        r = x - base - signature(model.grid, spec, T, model.rate)
        u = _ar1_whiten(r) / (model.noise_sigma * NOISE_SCALE)
        # solve chol @ w = u over the PMU axis for every (t, channel)
        w = np.linalg.solve(chol, u.transpose(1, 0, 2).reshape(model.grid.n_pmus, -1))
        out[c] = -0.5 * float((w * w).sum())
    return out


def true_posterior(model: PosteriorModel, tensor) -> dict:
    """Bayes posterior ``P(class | tensor)`` under the generative model."""
    classes = list(model.priors)
    if any(c not in model.specs for c in classes):
        raise UnsupportedConfig("every class with prior mass needs a fixed signature spec")
    prior = np.array([model.priors[c] for c in classes], dtype=float)
    prior = prior / prior.sum()
    x = np.asarray(getattr(tensor, "data", tensor), dtype=np.float64)
    if model.noise_sigma == 0:
        T = x.shape[0]
        base = nominal(model.grid)[None]
        match = np.array([np.allclose(x, base + signature(model.grid, model.specs[c], T, model.rate),
                                      rtol=0, atol=1e-4) for c in classes], dtype=float)
        if not match.any():
            raise UnsupportedConfig("noiseless tensor matches no class signature")
        post = prior * match
    else:
        ll = log_likelihoods(model, x)
        logp = np.log(np.where(prior > 0, prior, 1e-300)) + np.array([ll[c] for c in classes])
        logp -= logp.max()
        post = np.exp(logp)
    post = post / post.sum()
    return {EventClass.parse(c): float(p) for c, p in zip(classes, post)}
