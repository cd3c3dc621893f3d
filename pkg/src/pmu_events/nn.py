"""Minimal NHWC network engine with exact reverse-mode gradients.

A network is a plain list of layer specs.  Parameters live in a flat
``{name: array}`` dict so that the same dict can be handed to the optimizer,
checkpointed, or perturbed for finite-difference checks.  Names follow
``{prefix}{layer_index}.{w|b}``; residual blocks nest as
``{prefix}{i}.c{j}.w`` and ``{prefix}{i}.proj.w``.

Images are ``[batch, height, width, channels]``; for PMU snapshots height is
time and width is the PMU axis.

Checkpoint container::

    b"PMUCKPT1" | uint32 LE manifest length | manifest JSON | array blobs

The manifest lists every array with name, shape, little-endian dtype, byte
offset, size and CRC32, plus a CRC32 of the whole blob section and the
caller's metadata (architecture, ordering, scaling statistics, beta, seed).
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheMismatch, CorruptFile, ShapeError, VersionError

CHECKPOINT_MAGIC = b"PMUCKPT1"
CHECKPOINT_VERSION = 1


def _pair(v):
    if isinstance(v, int):
        return (v, v)
    return tuple(int(a) for a in v)


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: tuple = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))

    def out_hw(self, h, w):
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class ResidualBlock:
    """Pre-activation block: ``out = convs(x) + shortcut(x)``.

    Each inner conv is preceded by a ReLU and there is no activation after the
    sum, so a block whose inner weights are all zero is exactly its shortcut.
    """

    convs: tuple
    projection: Conv2d | None = None

    def __post_init__(self):
        object.__setattr__(self, "convs", tuple(self.convs))
        chain = self.convs
        for a, b in zip(chain, chain[1:]):
            if a.out_ch != b.in_ch:
                raise ShapeError(f"inner convs disagree on channels: {a.out_ch} -> {b.in_ch}")
        stride = tuple(int(np.prod([c.stride[k] for c in chain])) for k in (0, 1))
        if self.projection is None:
            if chain[0].in_ch != chain[-1].out_ch or stride != (1, 1):
                raise ShapeError("identity shortcut needs equal channels and unit stride")
        else:
            p = self.projection
            if p.in_ch != chain[0].in_ch or p.out_ch != chain[-1].out_ch:
                raise ShapeError("projection shortcut channels do not match the inner chain")


LAYER_TYPES = {cls.__name__: cls for cls in (Conv2d, Dense, ReLU, GlobalAvgPool, Softmax, ResidualBlock)}


def layer_to_json(layer) -> dict:
    if isinstance(layer, ResidualBlock):
        return {"type": "ResidualBlock", "convs": [layer_to_json(c) for c in layer.convs],
                "projection": None if layer.projection is None else layer_to_json(layer.projection)}
    d = asdict(layer)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return {"type": type(layer).__name__, **d}


def layer_from_json(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "ResidualBlock":
        proj = d["projection"]
        return ResidualBlock(tuple(layer_from_json(c) for c in d["convs"]),
                             None if proj is None else layer_from_json(proj))
    return LAYER_TYPES[kind](**d)


def net_to_json(net) -> list:
    return [layer_to_json(layer) for layer in net]


def net_from_json(items) -> list:
    return [layer_from_json(d) for d in items]


# -- initialization ---------------------------------------------------------

def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(net, rng: np.random.Generator, dtype=np.float32, prefix: str = "") -> dict:
    """He-normal weights, zero biases; the last conv of every residual block starts at zero."""
    params = {}

    def conv(name, c: Conv2d, zero=False):
        kh, kw = c.kernel
        shape = (kh, kw, c.in_ch, c.out_ch)
        params[name + ".w"] = (np.zeros(shape, dtype) if zero
                               else _he(rng, shape, kh * kw * c.in_ch, dtype))
        params[name + ".b"] = np.zeros(c.out_ch, dtype)

    for i, layer in enumerate(net):
        name = f"{prefix}{i}"
        if isinstance(layer, Conv2d):
            conv(name, layer)
        elif isinstance(layer, Dense):
            params[name + ".w"] = _he(rng, (layer.n_in, layer.n_out), layer.n_in, dtype)
            params[name + ".b"] = np.zeros(layer.n_out, dtype)
        elif isinstance(layer, ResidualBlock):
            last = len(layer.convs) - 1
            for j, c in enumerate(layer.convs):
                conv(f"{name}.c{j}", c, zero=(j == last))
            if layer.projection is not None:
                conv(f"{name}.proj", layer.projection)
    return params


def count_params(params: dict) -> int:
    return int(sum(a.size for a in params.values()))


# -- per-layer kernels ------------------------------------------------------

def _conv_forward(c: Conv2d, x, w, b):
    B, H, W, C = x.shape
    (kh, kw), (sh, sw), (ph, pw) = c.kernel, c.stride, c.padding
    Ho, Wo = c.out_hw(H, W)
    if (kh, kw) == (1, 1) and (ph, pw) == (0, 0):
        cols = np.ascontiguousarray(x[:, : sh * (Ho - 1) + 1 : sh, : sw * (Wo - 1) + 1 : sw, :])
    else:
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
        cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xp[:, i : i + sh * (Ho - 1) + 1 : sh,
                                            j : j + sw * (Wo - 1) + 1 : sw, :]
    cols = cols.reshape(B * Ho * Wo, kh * kw * C)
    out = cols @ w.reshape(kh * kw * C, c.out_ch) + b
    return out.reshape(B, Ho, Wo, c.out_ch), (x.shape, cols)


def _conv_backward(c: Conv2d, cache, g, w):
    (B, H, W, C), cols = cache
    (kh, kw), (sh, sw), (ph, pw) = c.kernel, c.stride, c.padding
    Ho, Wo = g.shape[1], g.shape[2]
    g2 = g.reshape(-1, c.out_ch)
    dw = (cols.T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    dcols = g2 @ w.reshape(kh * kw * C, c.out_ch).T
    if (kh, kw) == (1, 1) and (ph, pw) == (0, 0):
        dx = np.zeros((B, H, W, C), dtype=g.dtype)
        dx[:, : sh * (Ho - 1) + 1 : sh, : sw * (Wo - 1) + 1 : sw, :] = dcols.reshape(B, Ho, Wo, C)
        return dx, dw, db
    dcols = dcols.reshape(B, Ho, Wo, kh, kw, C)
    dxp = np.zeros((B, H + 2 * ph, W + 2 * pw, C), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw, :] += dcols[:, :, :, i, j, :]
    return dxp[:, ph : ph + H, pw : pw + W, :], dw, db


def _softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax(x):
    return _softmax(np.asarray(x))


def _check_input(layer, x, idx):
    if isinstance(layer, (Conv2d, ResidualBlock)):
        in_ch = layer.in_ch if isinstance(layer, Conv2d) else layer.convs[0].in_ch
        if x.ndim != 4 or x.shape[3] != in_ch:
            raise ShapeError(f"{type(layer).__name__} expects [B,H,W,{in_ch}], got {x.shape}", idx)
    elif isinstance(layer, Dense):
        if x.ndim != 2 or x.shape[1] != layer.n_in:
            raise ShapeError(f"Dense expects [B,{layer.n_in}], got {x.shape}", idx)
    elif isinstance(layer, GlobalAvgPool):
        if x.ndim != 4:
            raise ShapeError(f"GlobalAvgPool expects a 4-axis input, got {x.shape}", idx)
    elif isinstance(layer, Softmax):
        if x.ndim != 2:
            raise ShapeError(f"Softmax expects [B,K], got {x.shape}", idx)


@dataclass
class Cache:
    net: tuple
    prefix: str
    entries: list = field(default_factory=list)


def forward(net, x, params: dict, prefix: str = ""):
    """Run ``x`` through ``net``; returns ``(output, cache)``."""
    net = tuple(net)
    cache = Cache(net, prefix)
    for i, layer in enumerate(net):
        _check_input(layer, x, i)
        name = f"{prefix}{i}"
        if isinstance(layer, Conv2d):
            x, c = _conv_forward(layer, x, params[name + ".w"], params[name + ".b"])
        elif isinstance(layer, Dense):
            c = x
            x = x @ params[name + ".w"] + params[name + ".b"]
        elif isinstance(layer, ReLU):
            c = x > 0
            x = x * c
        elif isinstance(layer, GlobalAvgPool):
            c = x.shape
            x = x.mean(axis=(1, 2))
        elif isinstance(layer, Softmax):
            x = _softmax(x)
            c = x
        elif isinstance(layer, ResidualBlock):
            inner = []
            h = x
            for j, conv in enumerate(layer.convs):
                mask = h > 0
                h, cc = _conv_forward(conv, h * mask, params[f"{name}.c{j}.w"], params[f"{name}.c{j}.b"])
                inner.append((mask, cc))
            if layer.projection is not None:
                s, pc = _conv_forward(layer.projection, x, params[f"{name}.proj.w"], params[f"{name}.proj.b"])
            else:
                s, pc = x, None
            if s.shape != h.shape:
                raise ShapeError(f"residual branch {h.shape} vs shortcut {s.shape}", i)
            x = h + s
            c = (inner, pc)
        else:
            raise TypeError(f"unknown layer {layer!r}")
        cache.entries.append(c)
    return x, cache


def backward(net, cache: Cache, grad_out, params: dict):
    """Reverse pass; returns ``(param_grads, input_grad)``."""
    net = tuple(net)
    if cache.net != net or len(cache.entries) != len(net):
        raise CacheMismatch("cache was produced by a different network")
    prefix = cache.prefix
    grads = {}
    g = grad_out
    for i in range(len(net) - 1, -1, -1):
        layer, c = net[i], cache.entries[i]
        name = f"{prefix}{i}"
        if isinstance(layer, Conv2d):
            g, grads[name + ".w"], grads[name + ".b"] = _conv_backward(layer, c, g, params[name + ".w"])
        elif isinstance(layer, Dense):
            grads[name + ".w"] = c.T @ g
            grads[name + ".b"] = g.sum(axis=0)
            g = g @ params[name + ".w"].T
        elif isinstance(layer, ReLU):
            g = g * c
        elif isinstance(layer, GlobalAvgPool):
            B, H, W, C = c
            g = np.broadcast_to((g / (H * W))[:, None, None, :], c).copy()
        elif isinstance(layer, Softmax):
            g = c * (g - (g * c).sum(axis=1, keepdims=True))
        elif isinstance(layer, ResidualBlock):
            inner, pc = c
            if layer.projection is not None:
                gs, grads[f"{name}.proj.w"], grads[f"{name}.proj.b"] = _conv_backward(
                    layer.projection, pc, g, params[f"{name}.proj.w"])
            else:
                gs = g
            h = g
            for j in range(len(layer.convs) - 1, -1, -1):
                mask, cc = inner[j]
                h, grads[f"{name}.c{j}.w"], grads[f"{name}.c{j}.b"] = _conv_backward(
                    layer.convs[j], cc, h, params[f"{name}.c{j}.w"])
                h = h * mask
            g = h + gs
    return grads, g


# -- optimizer --------------------------------------------------------------

class ParamStore:
    """Named parameters plus per-parameter Adam moments and step counts."""

    def __init__(self, params: dict):
        self.params = {k: np.array(v, copy=True) for k, v in params.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.steps = {k: 0 for k in self.params}

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return sorted(self.params)


def adam_step(store: ParamStore, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """Bias-corrected Adam update, applied in place to every parameter named in ``grads``."""
    for name in sorted(grads):
        g = grads[name]
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        store.steps[name] += 1
        t = store.steps[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return store


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: dict, metadata: dict) -> Path:
    if isinstance(params, ParamStore):
        params = params.params
    arrays, blobs, offset = [], [], 0
    for name in sorted(params):
        a = np.asarray(params[name])
        dt = a.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        arrays.append({"name": name, "shape": list(a.shape), "dtype": dt.str,
                       "offset": offset, "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    manifest = {"format_version": CHECKPOINT_VERSION, "metadata": metadata,
                "arrays": arrays, "payload_crc32": zlib.crc32(payload)}
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(mbytes)) + mbytes + payload)
    return path


def load_checkpoint(path, expected_architecture=None):
    """Returns ``(params, metadata)``.

    If ``expected_architecture`` is given it must equal
    ``metadata["architecture"]``, otherwise :class:`VersionError` is raised.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:8] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint")
    (mlen,) = struct.unpack("<I", blob[8:12])
    try:
        manifest = json.loads(blob[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptFile(f"{path}: truncated or unreadable manifest") from None
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint format {manifest.get('format_version')} unsupported")
    payload = blob[12 + mlen:]
    total = sum(a["nbytes"] for a in manifest["arrays"])
    if len(payload) != total or zlib.crc32(payload) != manifest["payload_crc32"]:
        raise CorruptFile(f"{path}: payload truncated or checksum mismatch")
    params = {}
    for a in manifest["arrays"]:
        raw = payload[a["offset"]: a["offset"] + a["nbytes"]]
        if zlib.crc32(raw) != a["crc32"]:
            raise CorruptFile(f"{path}: checksum mismatch in {a['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(a["dtype"])).reshape(a["shape"])
        params[a["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    metadata = manifest["metadata"]
    if expected_architecture is not None and metadata.get("architecture") != expected_architecture:
        raise VersionError("checkpoint architecture does not match the requested one")
    return params, metadata
