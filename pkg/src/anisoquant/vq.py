"""Anisotropic vector quantization.

Training alternates an exhaustive assignment step (each datapoint goes to
the codeword of least anisotropic loss) and a closed-form codeword update
per partition, in the manner of Lloyd's algorithm. With
``h_parallel == h_perpendicular`` the procedure is exactly k-means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .datasets import Dataset, as_dataset
from .errors import DimensionMismatch, EmptyDataset, SingularSystem, ValidationError, ZeroNormDatapoint
from .geometry import AnisotropicWeights

__all__ = [
    "Codebook",
    "TrainConfig",
    "VqAssignment",
    "QuantizedDataset",
    "assign_point",
    "assign_all",
    "assignment_losses",
    "update_codeword",
    "train_avq",
    "vq_quantize",
    "initial_indices",
]

log = logging.getLogger(__name__)

# elements per (chunk x k x d) difference tensor
_CHUNK_ELEMENTS = 1 << 22

EMPTY_POLICIES = ("reseed", "keep")


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.codewords, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValidationError(f"codebook must be k x d with k >= 1, got {c.shape}")
        if not np.isfinite(c).all():
            raise ValidationError("codebook contains non-finite entries")
        object.__setattr__(self, "codewords", c)

    @property
    def k(self) -> int:
        return self.codewords.shape[0]

    @property
    def d(self) -> int:
        return self.codewords.shape[1]

    def as_product(self):
        from .pq import ProductCodebook

        return ProductCodebook(self.codewords[None, :, :])


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 100
    relative_tolerance: float = 1e-6
    seed: int = 0
    empty_partition_policy: str = "reseed"
    # None: 1e-10 * mean(h_perpendicular) for vq; exact (no ridge) for pq
    ridge: float | None = None
    # coordinate-descent sweeps per pq assignment step; 0 means until fixed point
    sweeps: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.relative_tolerance < 0:
            raise ValidationError("relative_tolerance must be >= 0")
        if self.empty_partition_policy not in EMPTY_POLICIES:
            raise ValidationError(f"empty_partition_policy must be one of {EMPTY_POLICIES}")
        if self.ridge is not None and self.ridge < 0:
            raise ValidationError("ridge must be non-negative")
        if self.sweeps < 0:
            raise ValidationError("sweeps must be >= 0")


@dataclass
class VqAssignment:
    assignments: np.ndarray
    loss_history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.loss_history)


@dataclass(frozen=True)
class QuantizedDataset:
    """Code indices, shape ``(n, M)``, plus the codebook that decodes them."""

    codes: np.ndarray
    codebook: object

    def reconstruct(self) -> np.ndarray:
        from .pq import reconstruct_all

        book = self.codebook.as_product() if isinstance(self.codebook, Codebook) else self.codebook
        return reconstruct_all(self.codes, book)


def _codewords(codebook) -> np.ndarray:
    return codebook.codewords if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=float)


def assignment_losses(X: np.ndarray, C: np.ndarray, h_par: np.ndarray, h_perp: np.ndarray, sq=None) -> np.ndarray:
    """Loss of every (datapoint, codeword) pair, shape ``(n, k)``.

    Uses ``h_perp |x - c|^2 + (h_par - h_perp) <x - c, x>^2 / |x|^2``.
    """
    if sq is None:
        sq = np.einsum("ij,ij->i", X, X)
    e = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)
    p = sq[:, None] - X @ C.T
    return h_perp[:, None] * e + (h_par - h_perp)[:, None] * (p * p / sq[:, None])


def _chunks(n: int, k: int, d: int):
    step = max(1, _CHUNK_ELEMENTS // max(1, k * d))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def assign_all(X, codebook, weights: AnisotropicWeights, return_loss: bool = False):
    """Vectorized :func:`assign_point` over the rows of ``X``."""
    X = X.values if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    C = _codewords(codebook)
    if X.shape[1] != C.shape[1]:
        raise DimensionMismatch(f"data dimension {X.shape[1]} != codebook dimension {C.shape[1]}")
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    if np.any(sq == 0):
        raise ZeroNormDatapoint("zero-norm datapoint")
    hp, ho = weights.broadcast(n)
    codes = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for sl in _chunks(n, C.shape[0], C.shape[1]):
        L = assignment_losses(X[sl], C, hp[sl], ho[sl], sq[sl])
        codes[sl] = np.argmin(L, axis=1)
        best[sl] = L[np.arange(L.shape[0]), codes[sl]]
    return (codes, best) if return_loss else codes


def assign_point(x, codebook, weights: AnisotropicWeights) -> int:
    """Index of the codeword with least anisotropic loss; ties go to the lowest index."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("expected a single vector")
    return int(assign_all(x[None, :], codebook, weights)[0])


def update_codeword(points, weights_per_point: AnisotropicWeights, ridge: float | None = None) -> np.ndarray:
    """Closed-form minimizer of the summed anisotropic loss over one partition.

    Solves ``(sum h_perp I + sum (h_par - h_perp) x x^T / |x|^2 + ridge I) c = sum h_par x``.
    When every point has ``h_par == h_perp`` the solution is the
    ``h_perp``-weighted mean, returned directly (plain mean for equal weights).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[0] == 0:
        raise EmptyDataset("cannot update a codeword from an empty partition")
    sq = np.einsum("ij,ij->i", X, X)
    if np.any(sq == 0):
        raise ZeroNormDatapoint("zero-norm datapoint in partition")
    hp, ho = weights_per_point.broadcast(X.shape[0])

    if np.array_equal(hp, ho):
        if np.all(ho == ho[0]) and ho[0] > 0:
            return X.mean(axis=0)
        total = ho.sum()
        if total <= 0:
            raise SingularSystem("all points in the partition have zero weight")
        return (ho[:, None] * X).sum(axis=0) / total

    if ridge is None:
        ridge = 1e-10 * float(ho.mean())
    coef = (hp - ho) / sq
    A = (X.T * coef) @ X
    A[np.diag_indices_from(A)] += ho.sum() + ridge
    b = hp @ X
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"codeword system is not positive definite: {exc}") from None
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def initial_indices(n: int, k: int, seed: int) -> np.ndarray:
    """``k`` distinct datapoint indices drawn uniformly with ``seed``."""
    if n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    return np.random.default_rng(seed).choice(n, size=k, replace=False)


def _total_loss(X, C, codes, hp, ho, sq) -> tuple[float, np.ndarray]:
    R = X - C[codes]
    p = sq - np.einsum("ij,ij->i", X, C[codes])
    per_point = ho * np.einsum("ij,ij->i", R, R) + (hp - ho) * (p * p / sq)
    return float(per_point.sum()), per_point


def train_avq(
    dataset,
    k: int,
    weights: AnisotropicWeights,
    config: TrainConfig = TrainConfig(),
) -> tuple[Codebook, VqAssignment]:
    """Train a ``k``-codeword anisotropic VQ codebook.

    Codewords start at ``k`` distinct datapoints sampled with
    ``config.seed``. Each iteration updates every non-empty partition in
    closed form, records the total loss, and reassigns; training stops at a
    fixed point, when the relative loss change drops below
    ``config.relative_tolerance``, or after ``config.max_iterations``.
    """
    ds = as_dataset(dataset)
    X = ds.values
    n = ds.n
    init = initial_indices(n, k, config.seed)
    hp, ho = weights.broadcast(n)
    sq = ds.norms**2
    C = X[init].copy()
    codes = assign_all(X, C, weights)
    result = VqAssignment(codes)

    for it in range(config.max_iterations):
        counts = np.bincount(codes, minlength=k)
        for j in np.flatnonzero(counts):
            members = codes == j
            C[j] = update_codeword(
                X[members], AnisotropicWeights(hp[members], ho[members]), config.ridge
            )
        loss, per_point = _total_loss(X, C, codes, hp, ho, sq)
        empty = np.flatnonzero(counts == 0)
        if empty.size and config.empty_partition_policy == "reseed":
            worst = np.argsort(-per_point, kind="stable")[: empty.size]
            C[empty[: worst.size]] = X[worst]
        result.loss_history.append(loss)
        log.debug("avq iteration %d loss %.12g empty %d", it, loss, empty.size)

        new_codes = assign_all(X, C, weights)
        if np.array_equal(new_codes, codes):
            result.converged = True
            break
        codes = new_codes
        if len(result.loss_history) >= 2:
            prev = result.loss_history[-2]
            if prev > 0 and (prev - loss) / prev < config.relative_tolerance:
                break
    result.assignments = codes
    return Codebook(C), result


def vq_quantize(dataset, codebook: Codebook, weights: AnisotropicWeights) -> QuantizedDataset:
    codes = assign_all(as_dataset(dataset).values, codebook, weights)
    return QuantizedDataset(codes[:, None], codebook)
