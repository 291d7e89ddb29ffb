"""Input/output datasets: container, normalization, metrics, file IO.

CSV layout: header ``t,u1,...,y1,...[,w1,...]`` with one row per sample
and 17-significant-digit decimals; a JSON sidecar (``<file>.json``)
carries the sampling time plus whatever metadata the writer attaches.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _jsonio
from .exceptions import DataFormatError, DimensionMismatchError


@dataclass(frozen=True)
class NormRecord:
    """Per-channel standardization statistics for inputs and outputs."""

    u_mean: np.ndarray
    u_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    def __post_init__(self):
        for name in ("u_mean", "u_scale", "y_mean", "y_scale"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            object.__setattr__(self, name, v)
        if self.u_mean.shape != self.u_scale.shape:
            raise DimensionMismatchError("u_scale", self.u_mean.shape, self.u_scale.shape)
        if self.y_mean.shape != self.y_scale.shape:
            raise DimensionMismatchError("y_scale", self.y_mean.shape, self.y_scale.shape)
        if np.any(self.u_scale <= 0) or np.any(self.y_scale <= 0):
            raise ValueError("normalization scales must be positive")

    def to_dict(self):
        return {"u_mean": self.u_mean, "u_scale": self.u_scale,
                "y_mean": self.y_mean, "y_scale": self.y_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["u_mean"], dtype=np.float64),
                   np.array(d["u_scale"], dtype=np.float64),
                   np.array(d["y_mean"], dtype=np.float64),
                   np.array(d["y_scale"], dtype=np.float64))


@dataclass(frozen=True)
class Dataset:
    """Sampled input/output trajectories.

    Fields
    ------
    u : (T, n_u) array
    y : (T, n_y) array
    ts : sampling time in seconds
    w : optional (T, n_y) noise-free output
    norm : NormRecord applied to produce this dataset, or None for raw
        physical-unit data.
    """

    u: np.ndarray
    y: np.ndarray
    ts: float
    w: np.ndarray | None = None
    norm: NormRecord | None = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if u.shape[0] != y.shape[0]:
            raise DimensionMismatchError("y rows", u.shape[0], y.shape[0])
        if self.w is not None:
            w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
            if w.shape != y.shape:
                raise DimensionMismatchError("w", y.shape, w.shape)
            object.__setattr__(self, "w", w)
        if not self.ts > 0:
            raise ValueError("ts must be positive")

    @property
    def n_samples(self):
        return self.u.shape[0]

    @property
    def n_u(self):
        return self.u.shape[1]

    @property
    def n_y(self):
        return self.y.shape[1]

    @property
    def t(self):
        return np.arange(self.n_samples) * self.ts


def normalize(dataset):
    """Standardize every channel to zero mean and unit variance.

    Uses this dataset's own statistics; the returned record can be
    re-applied to other datasets (e.g. train statistics on test data).

    Returns
    -------
    (normalized Dataset, NormRecord)
    """
    u_std = dataset.u.std(axis=0)
    y_std = dataset.y.std(axis=0)
    if np.any(u_std == 0):
        raise ValueError("constant input channel cannot be normalized")
    if np.any(y_std == 0):
        raise ValueError("constant output channel cannot be normalized")
    rec = NormRecord(dataset.u.mean(axis=0), u_std, dataset.y.mean(axis=0), y_std)
    return apply_record(dataset, rec), rec


def apply_record(dataset, rec):
    """Standardize a dataset with a previously computed NormRecord."""
    if rec.u_mean.shape[0] != dataset.n_u:
        raise DimensionMismatchError("u channels", rec.u_mean.shape[0], dataset.n_u)
    if rec.y_mean.shape[0] != dataset.n_y:
        raise DimensionMismatchError("y channels", rec.y_mean.shape[0], dataset.n_y)
    u = (dataset.u - rec.u_mean) / rec.u_scale
    y = (dataset.y - rec.y_mean) / rec.y_scale
    w = None if dataset.w is None else (dataset.w - rec.y_mean) / rec.y_scale
    return Dataset(u, y, dataset.ts, w, rec)


def denormalize(dataset):
    """Invert the dataset's normalization record."""
    rec = dataset.norm
    if rec is None:
        return dataset
    u = dataset.u * rec.u_scale + rec.u_mean
    y = dataset.y * rec.y_scale + rec.y_mean
    w = None if dataset.w is None else dataset.w * rec.y_scale + rec.y_mean
    return Dataset(u, y, dataset.ts, w, None)


def bfr(y_true, y_pred):
    """Best fit rate in percent.

    100 (1 - sqrt(sum_k ||y_k - yhat_k||^2 / sum_k ||y_k - y_mean||^2))
    with vector 2-norms across channels and y_mean the per-channel
    sample mean of ``y_true``.  100 for a perfect fit, 0 for predicting
    the mean, negative for anything worse.
    """
    y_true = np.atleast_2d(np.asarray(y_true, dtype=np.float64))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=np.float64))
    if y_true.shape != y_pred.shape:
        raise DimensionMismatchError("y_pred", y_true.shape, y_pred.shape)
    if y_true.shape[0] < 2:
        raise ValueError("bfr needs at least two samples")
    num = np.sum((y_true - y_pred) ** 2)
    den = np.sum((y_true - y_true.mean(axis=0)) ** 2)
    if den == 0:
        raise ValueError("bfr undefined for a constant reference signal")
    return (1.0 - np.sqrt(num / den)) * 100.0


def _sidecar(path):
    return os.fspath(path) + ".json"


def write_dataset(dataset, path, meta=None):
    """Write a dataset as CSV plus JSON sidecar.

    ``meta`` entries are stored verbatim in the sidecar next to the
    sampling time and normalization record.
    """
    path = os.fspath(path)
    cols = (["t"]
            + [f"u{i + 1}" for i in range(dataset.n_u)]
            + [f"y{i + 1}" for i in range(dataset.n_y)]
            + ([f"w{i + 1}" for i in range(dataset.n_y)] if dataset.w is not None else []))
    t = dataset.t
    rows = [dataset.u, dataset.y] + ([dataset.w] if dataset.w is not None else [])
    table = np.column_stack([t] + rows)
    lines = [",".join(cols)]
    for row in table:
        lines.append(",".join(format(v, ".17g") for v in row))
    tmp = path + ".tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    os.replace(tmp, path)
    sidecar = {
        "ts": dataset.ts,
        "normalization": None if dataset.norm is None else dataset.norm.to_dict(),
    }
    if meta:
        sidecar.update(meta)
    _jsonio.dump(sidecar, _sidecar(path))


def read_dataset(path):
    """Read a dataset written by ``write_dataset``.

    Returns
    -------
    (Dataset, sidecar dict) — the sidecar dict is empty when no sidecar
    file exists, in which case ts is inferred from the time column.
    """
    path = os.fspath(path)
    with open(path, "r", newline=None) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError("empty dataset file")
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header[0] != "t":
        raise DataFormatError("first column must be 't'", line_number=1)

    def _count(prefix):
        n = 0
        while f"{prefix}{n + 1}" in header:
            n += 1
        return n

    n_u, n_y, n_w = _count("u"), _count("y"), _count("w")
    if n_u == 0:
        raise DataFormatError("missing column 'u1'", line_number=1)
    if n_y == 0:
        raise DataFormatError("missing column 'y1'", line_number=1)
    expected = (["t"] + [f"u{i + 1}" for i in range(n_u)]
                + [f"y{i + 1}" for i in range(n_y)]
                + [f"w{i + 1}" for i in range(n_w)])
    if header != expected:
        raise DataFormatError(f"unexpected header {header!r}", line_number=1)
    if n_w not in (0, n_y):
        raise DataFormatError("w columns must match y columns", line_number=1)

    n_cols = len(header)
    data = np.empty((len(lines) - 1, n_cols))
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise DataFormatError(
                f"expected {n_cols} cells, found {len(cells)}", line_number=i)
        try:
            data[i - 2] = [float(c) for c in cells]
        except ValueError as exc:
            raise DataFormatError(f"non-numeric cell ({exc})", line_number=i) from None
    if data.shape[0] == 0:
        raise DataFormatError("dataset has no samples")

    meta = {}
    if os.path.exists(_sidecar(path)):
        meta = _jsonio.load(_sidecar(path))
    if "ts" in meta:
        ts = float(meta["ts"])
    elif data.shape[0] > 1:
        ts = float(data[1, 0] - data[0, 0])
    else:
        ts = 1.0
    norm = None
    if meta.get("normalization") is not None:
        norm = NormRecord.from_dict(meta["normalization"])
    u = data[:, 1:1 + n_u]
    y = data[:, 1 + n_u:1 + n_u + n_y]
    w = data[:, 1 + n_u + n_y:] if n_w else None
    return Dataset(u, y, ts, w, norm), meta
