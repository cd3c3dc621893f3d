"""Raw PMU record parsing and data-quality processing.

The pipeline order is fixed: status check, range thresholding, conversion to
P/Q/|V|/f on a common time grid (bad readings become mask entries), marking of
NA PMUs, low-rank imputation of the remaining gaps, then donor filling of NA
PMUs.  Observed values are never modified by any stage.

Input CSV columns::

    ts_us,pmu_id,vmag_pu,vang_deg,imag_ka,iang_deg,freq_hz,status

``ts_us`` is integer microseconds UTC; ``status`` is decimal or ``0x`` hex.
"""
from __future__ import annotations

import csv
import enum
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import N_CHANNELS, ChannelKind, PqvfTensor, build_tensor
from .errors import AlignmentError, ConvergenceWarning, NoDonorError, RankError

CSV_HEADER = ["ts_us", "pmu_id", "vmag_pu", "vang_deg", "imag_ka", "iang_deg", "freq_hz", "status"]

# closed intervals of plausible readings; values on the boundary are kept
VALID_RANGES = {
    "vmag": (0.0, 1.5),
    "vang": (-180.0, 180.0),
    "imag": (0.0, 10.0),
    "iang": (-180.0, 180.0),
    "freq": (59.0, 61.0),
}

# which output channels a bad raw field contaminates
_FIELD_CHANNELS = {
    "vmag": (ChannelKind.P, ChannelKind.Q, ChannelKind.Vmag),
    "vang": (ChannelKind.P, ChannelKind.Q),
    "imag": (ChannelKind.P, ChannelKind.Q),
    "iang": (ChannelKind.P, ChannelKind.Q),
    "freq": (ChannelKind.Freq,),
}


class Status(enum.IntEnum):
    Good = 0b00
    NoData = 0b01
    TestMode = 0b10
    PmuError = 0b11


@dataclass(frozen=True)
class PmuRecord:
    timestamp: int
    pmu_id: str
    vmag: float
    vang: float
    imag: float
    iang: float
    freq: float
    status: int = 0


@dataclass(frozen=True, eq=False)
class QualityMask:
    """``missing[t, n, c]`` is True where a value must be replaced."""

    missing: np.ndarray
    na_pmus: frozenset = frozenset()

    @property
    def any_missing(self) -> np.ndarray:
        return self.missing.any(axis=2)


def decode_status(status: int) -> Status:
    return Status(int(status) & 0b11)


def threshold_filter(record: PmuRecord) -> list:
    flagged = []
    for name, (lo, hi) in VALID_RANGES.items():
        v = getattr(record, name)
        if not (lo <= v <= hi):
            flagged.append(name)
    return flagged


def _parse_status(text: str) -> int:
    text = text.strip()
    return int(text, 16) if text.lower().startswith("0x") else int(text)


def parse_records(text_or_lines) -> list:
    if isinstance(text_or_lines, str):
        text_or_lines = io.StringIO(text_or_lines)
    reader = csv.DictReader(text_or_lines)
    missing = set(CSV_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"CSV is missing columns: {sorted(missing)}")
    out = []
    for row in reader:
        out.append(PmuRecord(
            timestamp=int(row["ts_us"]), pmu_id=row["pmu_id"].strip(),
            vmag=float(row["vmag_pu"]), vang=float(row["vang_deg"]),
            imag=float(row["imag_ka"]), iang=float(row["iang_deg"]),
            freq=float(row["freq_hz"]), status=_parse_status(row["status"]),
        ))
    return out


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        return parse_records(fh)


def write_records_csv(records: Iterable[PmuRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.timestamp, r.pmu_id, repr(r.vmag), repr(r.vang), repr(r.imag),
                        repr(r.iang), repr(r.freq), f"0x{r.status:04x}"])
    return path


def phasor_to_pqvf(records: Sequence[PmuRecord], rate: float = 30.0, *, pmu_ids=None,
                   t0_us: int | None = None, n_times: int | None = None,
                   label=None, event_start_index=None, tensor_id: str = ""):
    """Place records on a common grid and convert phasors to P, Q, |V|, f.

    Returns ``(tensor, mask)``; the tensor holds NaN wherever ``mask`` is set
    and is flagged as pending imputation.  Grid slots without a record are
    missing.  A timestamp more than a quarter sample away from its grid slot,
    or a repeated slot for one PMU, raises :class:`AlignmentError`.
    """
    if not records:
        raise AlignmentError("no records")
    if pmu_ids is None:
        pmu_ids = sorted({r.pmu_id for r in records})
    col = {p: i for i, p in enumerate(pmu_ids)}
    ts = np.array([r.timestamp for r in records], dtype=np.int64)
    if t0_us is None:
        t0_us = int(ts.min())
    pos = (ts - t0_us) * rate / 1e6
    idx = np.rint(pos).astype(np.int64)
    if np.any(np.abs(pos - idx) > 0.25) or np.any(idx < 0):
        raise AlignmentError("timestamps do not fall on the common sampling grid")
    if n_times is None:
        n_times = int(idx.max()) + 1
    N = len(pmu_ids)
    data = np.full((n_times, N, N_CHANNELS), np.nan)
    missing = np.ones((n_times, N, N_CHANNELS), dtype=bool)
    seen = np.zeros((n_times, N), dtype=bool)
    for r, t in zip(records, idx):
        if r.pmu_id not in col or t >= n_times:
            continue
        n = col[r.pmu_id]
        if seen[t, n]:
            raise AlignmentError(f"PMU {r.pmu_id}: repeated reading in grid slot {t}")
        seen[t, n] = True
        if decode_status(r.status) is not Status.Good:
            continue
        bad = set()
        for name in threshold_filter(r):
            bad.update(_FIELD_CHANNELS[name])
        dth = np.deg2rad(r.vang - r.iang)
        s = r.vmag * r.imag
        vals = (s * np.cos(dth), s * np.sin(dth), r.vmag, r.freq)
        for c in ChannelKind:
            if c not in bad:
                data[t, n, c] = vals[c]
                missing[t, n, c] = False
    tensor = build_tensor(data, rate, label, event_start_index=event_start_index,
                          pmu_ids=pmu_ids, tensor_id=tensor_id, pending_imputation=True)
    return tensor, QualityMask(missing, frozenset())


def _longest_run(flags: np.ndarray) -> int:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best


def mark_na(mask: QualityMask, rate: float) -> QualityMask:
    """Flag PMUs whose longest run of missing samples exceeds one second."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    limit = int(round(rate))
    any_missing = mask.any_missing
    na = set(mask.na_pmus)
    for n in range(any_missing.shape[1]):
        if _longest_run(any_missing[:, n]) > limit:
            na.add(n)
    missing = mask.missing.copy()
    for n in na:
        missing[:, n, :] = True
    return QualityMask(missing, frozenset(na))


def _interp_init(M: np.ndarray, missing: np.ndarray) -> np.ndarray:
    X = M.copy()
    t = np.arange(M.shape[0])
    for n in range(M.shape[1]):
        miss = missing[:, n]
        if miss.any():
            obs = ~miss
            X[miss, n] = np.interp(t[miss], t[obs], M[obs, n])
    return X


def complete_matrix(M, missing, rank: int = 3, max_iter: int = 50, tol: float = 1e-6,
                    callback=None):
    """Iterative truncated-SVD completion of a ``[T, N]`` matrix.

    Missing entries start from per-column linear interpolation (nearest value
    at the edges) and are then repeatedly overwritten by the rank-``rank``
    reconstruction.  ``callback(iteration, X)`` is called after every sweep.
    Returns ``(X, n_iter, converged)``.
    """
    M = np.asarray(M, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    T, N = M.shape
    if rank < 1 or rank >= min(T, N):
        raise RankError(f"rank {rank} must satisfy 1 <= rank < min(T, N) = {min(T, N)}")
    frac = missing.mean(axis=0)
    if np.any(frac >= 0.5):
        raise ValueError("every column must have less than 50% missing entries")
    if not missing.any():
        return M.copy(), 0, True
    X = _interp_init(M, missing)
    for it in range(1, max_iter + 1):
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        low = (U[:, :rank] * s[:rank]) @ Vt[:rank]
        X_new = np.where(missing, low, M)
        denom = np.linalg.norm(X) or 1.0
        change = np.linalg.norm(X_new - X) / denom
        X = X_new
        if callback is not None:
            callback(it, X)
        if change < tol:
            return X, it, True
    return X, max_iter, False


def impute_subspace(tensor: PqvfTensor, mask: QualityMask, rank: int = 3, max_iter: int = 50,
                    tol: float = 1e-6) -> PqvfTensor:
    """Fill masked entries of non-NA PMUs channel by channel with :func:`complete_matrix`."""
    data = np.array(tensor.data, dtype=np.float64)
    keep = np.array([n for n in range(tensor.n_pmus) if n not in mask.na_pmus])
    if keep.size == 0:
        return tensor
    not_converged = []
    for c in ChannelKind:
        miss = mask.missing[:, keep, c]
        if not miss.any():
            continue
        M = np.where(miss, 0.0, data[:, keep, c])
        X, _, ok = complete_matrix(M, miss, rank, max_iter, tol)
        data[:, keep, c] = np.where(miss, X, data[:, keep, c])
        if not ok:
            not_converged.append(c.name)
    if not_converged:
        warnings.warn(f"imputation hit max_iter={max_iter} on channels {not_converged}",
                      ConvergenceWarning, stacklevel=2)
    return tensor.replace(data=data, pending_imputation=not np.all(np.isfinite(data)))


def clean_period_correlation(data, mask: QualityMask) -> np.ndarray:
    """Mean |Pearson r| over channels, using only time steps where both PMUs are observed."""
    data = np.asarray(data, dtype=np.float64)
    T, N, _ = data.shape
    ok_t = ~mask.any_missing
    W = np.zeros((N, N))
    for i in range(N):
        for j in range(i + 1, N):
            both = ok_t[:, i] & ok_t[:, j]
            vals = []
            for c in range(N_CHANNELS):
                a, b = data[both, i, c], data[both, j, c]
                if a.size > 1 and a.std() > 0 and b.std() > 0:
                    vals.append(abs(np.corrcoef(a, b)[0, 1]))
            W[i, j] = W[j, i] = float(np.mean(vals)) if vals else 0.0
    return W


def fill_na_pmus(tensor: PqvfTensor, mask: QualityMask, reference_corr) -> PqvfTensor:
    """Copy every NA PMU's channels from its most-correlated non-NA PMU (ties -> lowest index)."""
    if not mask.na_pmus:
        return tensor
    N = tensor.n_pmus
    donors = [n for n in range(N) if n not in mask.na_pmus]
    if not donors:
        raise NoDonorError("every PMU is NA; nothing to copy from")
    R = np.abs(np.asarray(reference_corr, dtype=np.float64))
    data = np.array(tensor.data, dtype=np.float64)
    for n in sorted(mask.na_pmus):
        scores = R[n, donors]
        donor = donors[int(np.argmax(scores))]
        data[:, n, :] = data[:, donor, :]
    return tensor.replace(data=data, pending_imputation=not np.all(np.isfinite(data)))


def run_quality_pipeline(records: Sequence[PmuRecord], rate: float = 30.0, *, reference_corr=None,
                         rank: int = 3, max_iter: int = 50, tol: float = 1e-6, **grid_kw):
    """Full quality pipeline; returns ``(clean tensor, final mask)``.

    When ``reference_corr`` is omitted, donor correlations are estimated from
    the time steps of this window where both PMUs were observed.
    """
    tensor, mask = phasor_to_pqvf(records, rate, **grid_kw)
    mask = mark_na(mask, rate)
    if reference_corr is None and mask.na_pmus:
        reference_corr = clean_period_correlation(tensor.data, phasor_mask_only(mask, tensor))
    tensor = impute_subspace(tensor, mask, rank, max_iter, tol)
    tensor = fill_na_pmus(tensor, mask, reference_corr)
    return tensor, mask


def phasor_mask_only(mask: QualityMask, tensor: PqvfTensor) -> QualityMask:
    """Mask of values that are actually absent in ``tensor`` (ignores NA widening)."""
    return QualityMask(~np.isfinite(np.asarray(tensor.data)), mask.na_pmus)
