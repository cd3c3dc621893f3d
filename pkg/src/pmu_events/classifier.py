"""Encoder (residual conv net -> 10-d representation) and softmax estimator.

Convolutions run over the (time, PMU) plane with P, Q, |V|, f as input
channels, so neighbouring PMUs on the input axis share kernels.  That is why
the PMU ordering matters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .core import N_CHANNELS, N_CLASSES
from .errors import ShapeError

ENC = "enc."
EST = "est."


@dataclass(frozen=True)
class EncoderSpec:
    input_dims: tuple = (360, 16, N_CHANNELS)
    stem_channels: int = 16
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: int = 2
    rep_width: int = 10
    stem_stride: tuple = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "stage_channels", tuple(int(v) for v in self.stage_channels))
        object.__setattr__(self, "stem_stride", nn._pair(self.stem_stride))

    def layers(self) -> list:
        c_in = self.input_dims[2]
        net = [nn.Conv2d(c_in, self.stem_channels, 3, self.stem_stride, 1)]
        c = self.stem_channels
        for width in self.stage_channels:
            for b in range(self.blocks_per_stage):
                if b == 0:
                    net.append(nn.ResidualBlock(
                        (nn.Conv2d(c, width, 3, 2, 1), nn.Conv2d(width, width, 3, 1, 1)),
                        nn.Conv2d(c, width, 1, 2, 0)))
                else:
                    net.append(nn.ResidualBlock(
                        (nn.Conv2d(width, width, 3, 1, 1), nn.Conv2d(width, width, 3, 1, 1))))
                c = width
        net += [nn.ReLU(), nn.GlobalAvgPool(), nn.Dense(c, self.rep_width)]
        return net

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_json(cls, d) -> "EncoderSpec":
        return cls(**d)


@dataclass(frozen=True)
class EstimatorSpec:
    rep_width: int = 10
    n_classes: int = N_CLASSES

    def layers(self) -> list:
        return [nn.Dense(self.rep_width, self.n_classes), nn.Softmax()]


def init_classifier(enc: EncoderSpec, est: EstimatorSpec, rng, dtype=np.float32) -> dict:
    params = nn.init_params(enc.layers(), rng, dtype, ENC)
    params.update(nn.init_params(est.layers(), rng, dtype, EST))
    return params


def _check_batch(x, spec: EncoderSpec):
    if x.ndim != 4 or x.shape[1:] != spec.input_dims:
        raise ShapeError(f"expected [B, {', '.join(map(str, spec.input_dims))}], got {x.shape}")


def encode(x, params: dict, spec: EncoderSpec, return_cache: bool = False):
    """Snapshot batch ``[B, T_s, N, 4]`` (scaled, sorted) -> representations ``[B, rep_width]``."""
    x = np.asarray(x)
    _check_batch(x, spec)
    dtype = params[ENC + "0.w"].dtype
    z, cache = nn.forward(spec.layers(), x.astype(dtype, copy=False), params, ENC)
    return (z, cache) if return_cache else z


def classify(z, params: dict, spec: EstimatorSpec | None = None, return_cache: bool = False):
    spec = spec or EstimatorSpec()
    z = np.asarray(z)
    if z.ndim != 2 or z.shape[1] != spec.rep_width:
        raise ShapeError(f"representation must be [B, {spec.rep_width}], got {z.shape}")
    p, cache = nn.forward(spec.layers(), z, params, EST)
    return (p, cache) if return_cache else p
