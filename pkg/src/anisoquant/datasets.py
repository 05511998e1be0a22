"""Datasets: validation, fvecs/ivecs I/O, normalization, synthetic data, diagnostics."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, MalformedFile, ValidationError, ZeroNormDatapoint

__all__ = [
    "Dataset",
    "DiagnosticsReport",
    "as_dataset",
    "read_fvecs",
    "write_fvecs",
    "read_ivecs",
    "write_ivecs",
    "unit_normalize",
    "generate_synthetic",
    "diagnose",
]


@dataclass(frozen=True)
class Dataset:
    """An ``n x d`` matrix of datapoints with cached row norms.

    Rows are validated on construction: non-finite values and zero rows are
    rejected. ``values`` is stored read-only.
    """

    values: np.ndarray
    norms: np.ndarray = field(repr=False)
    normalized: bool = False

    @classmethod
    def from_array(cls, values, normalized: bool | None = None) -> "Dataset":
        arr = np.array(values, dtype=float, ndmin=2, copy=True)
        if arr.ndim != 2:
            raise ValidationError(f"dataset must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise ValidationError("dataset contains NaN or Inf")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0):
            raise ZeroNormDatapoint(f"{int(np.sum(norms == 0))} zero-norm rows")
        if normalized is None:
            normalized = bool(arr.shape[0]) and bool(np.all(np.abs(norms - 1.0) <= 1e-6))
        arr.setflags(write=False)
        norms.setflags(write=False)
        return cls(arr, norms, bool(normalized))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "Dataset":
        return Dataset.from_array(self.values[index], self.normalized)

    def digest(self) -> str:
        """SHA-256 of the float32 row-major payload plus shape."""
        h = hashlib.sha256()
        h.update(np.asarray(self.values.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.values, dtype="<f4").tobytes())
        return h.hexdigest()


def as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset.from_array(data)


# ---------------------------------------------------------------------------
# fvecs / ivecs


def _read_vecs(path, dtype) -> np.ndarray:
    raw = np.fromfile(os.fspath(path), dtype="<i4")
    if raw.size == 0:
        return np.zeros((0, 0), dtype=dtype)
    d = int(raw[0])
    if d <= 0:
        raise MalformedFile(f"{path}: invalid dimension header {d}")
    if raw.size % (d + 1):
        raise MalformedFile(f"{path}: truncated record (size {raw.size * 4} bytes, d={d})")
    rows = raw.reshape(-1, d + 1)
    if np.any(rows[:, 0] != d):
        raise MalformedFile(f"{path}: inconsistent dimension headers")
    return rows[:, 1:].copy().view(dtype)


def _write_vecs(path, arr: np.ndarray, dtype) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValidationError("expected a 2-D array")
    n, d = arr.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = np.ascontiguousarray(arr, dtype=dtype).view("<i4")
    with open(path, "wb") as f:
        f.write(out.tobytes())


def read_fvecs(path, validate: bool = True) -> Dataset | np.ndarray:
    """Read an fvecs file (per row: int32 ``d`` then ``d`` float32, little-endian).

    Returns a :class:`Dataset`, or the raw float32 array if ``validate`` is
    false. An empty file yields an empty dataset.
    """
    arr = _read_vecs(path, "<f4")
    if not validate:
        return arr
    if arr.size == 0:
        return Dataset(np.zeros((0, arr.shape[1])), np.zeros(0), False)
    return Dataset.from_array(arr)


def write_fvecs(data, path) -> None:
    values = data.values if isinstance(data, Dataset) else np.asarray(data)
    _write_vecs(path, values, "<f4")


def read_ivecs(path) -> np.ndarray:
    return _read_vecs(path, "<i4").astype(np.int64)


def write_ivecs(arr, path) -> None:
    _write_vecs(path, np.asarray(arr), "<i4")


# ---------------------------------------------------------------------------
# transforms and generators


def unit_normalize(data) -> Dataset:
    ds = as_dataset(data)
    if ds.normalized:
        return ds
    return Dataset.from_array(ds.values / ds.norms[:, None], normalized=True)


def generate_synthetic(
    kind: str,
    n: int,
    d: int,
    seed: int,
    *,
    centers: int = 32,
    spread: float = 0.5,
    normalize: bool = True,
) -> Dataset:
    """Seeded synthetic data.

    ``kind="uniform_sphere"`` draws directions uniformly on the unit sphere.
    ``kind="gaussian_mixture"`` draws ``centers`` standard-normal centers
    scaled to unit norm and adds isotropic noise of per-coordinate standard
    deviation ``spread / sqrt(d)``; rows are unit-normalized when
    ``normalize`` is set.
    """
    if n < 1 or d < 2:
        raise ValidationError("need n >= 1 and d >= 2")
    rng = np.random.default_rng(seed)
    if kind == "uniform_sphere":
        x = rng.standard_normal((n, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return Dataset.from_array(x, normalized=True)
    if kind == "gaussian_mixture":
        if centers < 1 or spread < 0:
            raise ValidationError("need centers >= 1 and spread >= 0")
        mu = rng.standard_normal((centers, d))
        mu /= np.linalg.norm(mu, axis=1, keepdims=True)
        labels = rng.integers(0, centers, size=n)
        x = mu[labels] + rng.standard_normal((n, d)) * (spread / np.sqrt(d))
        if normalize:
            x /= np.linalg.norm(x, axis=1, keepdims=True)
        return Dataset.from_array(x, normalized=normalize)
    raise ValidationError(f"unknown synthetic kind {kind!r}")


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class DiagnosticsReport:
    per_dimension_variance: np.ndarray
    max_abs_offdiagonal_correlation: float
    variance_ratio: float

    def as_dict(self) -> dict:
        return {
            "per_dimension_variance": [float(v) for v in self.per_dimension_variance],
            "max_abs_offdiagonal_correlation": self.max_abs_offdiagonal_correlation,
            "variance_ratio": self.variance_ratio,
        }


def diagnose(data) -> DiagnosticsReport:
    """Per-dimension sample variance and the strongest cross-dimension correlation."""
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if values.shape[0] < 2:
        raise InsufficientData("diagnostics need at least two datapoints")
    var = values.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.corrcoef(values, rowvar=False)
    corr = np.atleast_2d(corr)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    off = off[np.isfinite(off)]
    max_corr = float(np.abs(off).max()) if off.size else 0.0
    ratio = float(var.max() / var.min()) if var.min() > 0 else float("inf")
    return DiagnosticsReport(var, max_corr, ratio)
