"""Domain types shared by every stage of the pipeline.

Tensors are stored as ``[time, pmu, channel]`` arrays with the channel axis in
the fixed order P, Q, |V|, f.  All containers are frozen after construction and
their arrays are marked read-only, so they can be shared freely.

Container file layout (``.pqvf``)::

    offset  size  content
    0       8     magic b"PQVFTNSR"
    8       4     header length H, uint32 little-endian
    12      H     UTF-8 JSON header (dims, dtype, sample_rate_hz, pmu_ids,
                  label, event_start_index, tensor_id, meta, version,
                  payload_crc32)
    12+H    4*T*N*4  float32 little-endian payload, C order over [T, N, 4]
"""
from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CorruptFile, DimensionError, StatsMismatch, VersionError

SCALE_EPS = 1e-8
CONTAINER_MAGIC = b"PQVFTNSR"
CONTAINER_VERSION = 1


class EventClass(enum.IntEnum):
    NonEvent = 0
    LineEvent = 1
    GeneratorEvent = 2
    OscillationEvent = 3

    @classmethod
    def parse(cls, value) -> "EventClass":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            if value.isdigit():
                return cls(int(value))
            if value not in cls.__members__:
                raise ValueError(f"unknown event class {value!r}")
            return cls[value]
        return cls(int(value))


class ChannelKind(enum.IntEnum):
    P = 0
    Q = 1
    Vmag = 2
    Freq = 3

    @property
    def unit(self) -> str:
        return {0: "p.u. (power)", 1: "p.u. (power)", 2: "p.u.", 3: "Hz"}[int(self)]


N_CHANNELS = len(ChannelKind)
N_CLASSES = len(EventClass)


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PqvfTensor:
    data: np.ndarray
    sample_rate_hz: float
    label: EventClass | None = None
    event_start_index: int | None = None
    pmu_ids: tuple = ()
    tensor_id: str = ""
    meta: Mapping = field(default_factory=dict)
    pending_imputation: bool = False

    @property
    def n_times(self) -> int:
        return self.data.shape[0]

    @property
    def n_pmus(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_times / self.sample_rate_hz

    def replace(self, **changes) -> "PqvfTensor":
        kw = dict(
            data=self.data, sample_rate_hz=self.sample_rate_hz, label=self.label,
            event_start_index=self.event_start_index, pmu_ids=self.pmu_ids,
            tensor_id=self.tensor_id, meta=self.meta,
            pending_imputation=self.pending_imputation,
        )
        kw.update(changes)
        return build_tensor(kw.pop("data"), kw.pop("sample_rate_hz"), kw.pop("label"), **kw)


@dataclass(frozen=True, eq=False)
class Snapshot:
    data: np.ndarray
    label: EventClass
    source_id: str
    offset_index: int


@dataclass(frozen=True, eq=False)
class ScalingStats:
    """Per-(PMU, channel) mean and standard deviation, both shaped ``[N, 4]``."""

    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d: Mapping) -> "ScalingStats":
        return cls(_frozen_array(np.asarray(d["mean"], dtype=np.float64)),
                   _frozen_array(np.asarray(d["std"], dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class Dataset:
    snapshots: tuple
    scaling_stats: ScalingStats | None = None

    @property
    def class_counts(self) -> dict:
        counts = {c: 0 for c in EventClass}
        for s in self.snapshots:
            counts[s.label] += 1
        return counts

    def __len__(self):
        return len(self.snapshots)


def build_tensor(raw, rate: float, label=None, *, event_start_index=None, pmu_ids=None,
                 tensor_id: str = "", meta: Mapping | None = None,
                 pending_imputation: bool = False) -> PqvfTensor:
    """Validate a raw ``[T, N, 4]`` array and wrap it as a :class:`PqvfTensor`.

    Float32 input keeps its dtype (it is what the container stores); anything
    else is converted to float64.  Non-finite values are accepted only when
    ``pending_imputation`` is set.
    """
    data = np.asarray(raw)
    if data.dtype != np.float32:
        data = data.astype(np.float64)
    if data.ndim != 3:
        raise DimensionError(f"expected a 3-axis [T, N, 4] array, got shape {data.shape}")
    T, N, C = data.shape
    if C != N_CHANNELS:
        raise DimensionError(f"channel axis must have length 4, got {C}")
    if T < 1 or N < 2:
        raise DimensionError(f"need T >= 1 and N >= 2, got T={T}, N={N}")
    if not (rate > 0 and np.isfinite(rate)):
        raise ValueError(f"sample rate must be positive, got {rate}")
    if not pending_imputation and not np.all(np.isfinite(data)):
        raise ValueError("tensor contains NaN/Inf; pass pending_imputation=True to defer")
    if pmu_ids is None:
        pmu_ids = tuple(f"PMU{i:03d}" for i in range(N))
    pmu_ids = tuple(str(p) for p in pmu_ids)
    if len(pmu_ids) != N:
        raise DimensionError(f"{len(pmu_ids)} pmu_ids for {N} PMUs")
    if label is not None:
        label = EventClass.parse(label)
    if event_start_index is not None:
        event_start_index = int(event_start_index)
    return PqvfTensor(
        data=_frozen_array(data), sample_rate_hz=float(rate), label=label,
        event_start_index=event_start_index, pmu_ids=pmu_ids, tensor_id=str(tensor_id),
        meta=dict(meta or {}), pending_imputation=bool(pending_imputation),
    )


def make_snapshot(data, label, source_id: str, offset_index: int) -> Snapshot:
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != N_CHANNELS:
        raise DimensionError(f"snapshot must be [T_s, N, 4], got {data.shape}")
    return Snapshot(_frozen_array(data), EventClass.parse(label), str(source_id), int(offset_index))


def compute_scaling_stats(snapshots: Sequence[Snapshot]) -> ScalingStats:
    """Mean and std per (PMU, channel), pooled over every snapshot and time step."""
    if not snapshots:
        raise ValueError("no snapshots to compute scaling statistics from")
    stacked = np.concatenate([np.asarray(s.data, dtype=np.float64) for s in snapshots], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    # exact mean on constant channels keeps their scaled values at exactly 0
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    const = lo == hi
    mean[const] = lo[const]
    std[const] = 0.0
    return ScalingStats(_frozen_array(mean), _frozen_array(std))


def zscore_scale(snapshot: Snapshot, stats: ScalingStats) -> Snapshot:
    data = np.asarray(snapshot.data)
    N = data.shape[1]
    if stats.mean.shape != (N, N_CHANNELS) or stats.std.shape != (N, N_CHANNELS):
        raise StatsMismatch(
            f"stats shaped {stats.mean.shape} do not match snapshot with {N} PMUs")
    scaled = (data.astype(np.float64) - stats.mean) / (stats.std + SCALE_EPS)
    return Snapshot(_frozen_array(scaled.astype(data.dtype, copy=False)), snapshot.label,
                    snapshot.source_id, snapshot.offset_index)


# -- container format -------------------------------------------------------

def tensor_to_bytes(tensor: PqvfTensor) -> bytes:
    payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    header = {
        "version": CONTAINER_VERSION,
        "dims": list(tensor.data.shape),
        "dtype": "<f4",
        "sample_rate_hz": tensor.sample_rate_hz,
        "pmu_ids": list(tensor.pmu_ids),
        "label": tensor.label.name if tensor.label is not None else None,
        "event_start_index": tensor.event_start_index,
        "tensor_id": tensor.tensor_id,
        "meta": dict(tensor.meta),
        "pending_imputation": tensor.pending_imputation,
        "payload_crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return CONTAINER_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload


def tensor_from_bytes(blob: bytes) -> PqvfTensor:
    if len(blob) < 12 or blob[:8] != CONTAINER_MAGIC:
        raise CorruptFile("not a PQVF tensor container")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable header: {exc}") from None
    if header.get("version") != CONTAINER_VERSION:
        raise VersionError(f"unsupported container version {header.get('version')}")
    T, N, C = header["dims"]
    payload = blob[12 + hlen:]
    if len(payload) != T * N * C * 4:
        raise CorruptFile(f"payload has {len(payload)} bytes, expected {T * N * C * 4}")
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CorruptFile("payload checksum mismatch")
    data = np.frombuffer(payload, dtype="<f4").reshape(T, N, C).astype(np.float32)
    return build_tensor(
        data, header["sample_rate_hz"], header["label"],
        event_start_index=header["event_start_index"], pmu_ids=header["pmu_ids"],
        tensor_id=header["tensor_id"], meta=header.get("meta", {}),
        pending_imputation=header.get("pending_imputation", False),
    )


def save_tensor(tensor: PqvfTensor, path) -> Path:
    path = Path(path)
    path.write_bytes(tensor_to_bytes(tensor))
    return path


def load_tensor(path) -> PqvfTensor:
    return tensor_from_bytes(Path(path).read_bytes())
