"""Anisotropic product quantization.

Datapoints are split into ``M`` contiguous subspaces of dimension ``d / M``
and each subspace gets its own dictionary of ``k`` sub-codewords. Because the
anisotropic loss couples subspaces through the parallel residual, assignment
is a coordinate descent over subspaces and the codebook update is one joint
convex quadratic over all ``M * k`` sub-codewords.

The stacked codebook vector places sub-codeword ``j`` of subspace ``m`` at
offset ``(m * k + j) * (d / M)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .datasets import Dataset, as_dataset
from .errors import (
    CodeOutOfRange,
    DimensionMismatch,
    DimensionNotDivisible,
    SingularSystem,
    ValidationError,
    ZeroNormDatapoint,
)
from .geometry import AnisotropicWeights
from .vq import TrainConfig, VqAssignment, initial_indices, update_codeword

__all__ = [
    "ProductCodebook",
    "SelectorSystem",
    "reconstruct",
    "reconstruct_all",
    "pq_assign_point",
    "pq_assign_all",
    "nearest_codes",
    "assemble_system",
    "solve_system",
    "pq_codebook_update",
    "train_apq",
    "train_l2_pq",
    "pq_quantize",
    "pq_total_loss",
    "MAX_SYSTEM_SIZE",
]

log = logging.getLogger(__name__)

MAX_SYSTEM_SIZE = 16384
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class ProductCodebook:
    """``M`` dictionaries of ``k`` sub-codewords, stored as an ``(M, k, d/M)`` array."""

    dictionaries: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.dictionaries, dtype=float)
        if D.ndim != 3 or min(D.shape) < 1:
            raise ValidationError(f"dictionaries must have shape (M, k, d/M), got {D.shape}")
        if not np.isfinite(D).all():
            raise ValidationError("dictionaries contain non-finite entries")
        object.__setattr__(self, "dictionaries", D)

    @property
    def M(self) -> int:
        return self.dictionaries.shape[0]

    @property
    def k(self) -> int:
        return self.dictionaries.shape[1]

    @property
    def sub_dimension(self) -> int:
        return self.dictionaries.shape[2]

    @property
    def d(self) -> int:
        return self.M * self.sub_dimension

    def stacked(self) -> np.ndarray:
        """Flatten into the stacked codebook vector of length ``d * k``."""
        return self.dictionaries.reshape(-1).copy()

    @classmethod
    def from_stacked(cls, c: np.ndarray, M: int, k: int) -> "ProductCodebook":
        c = np.asarray(c, dtype=float)
        return cls(c.reshape(M, k, c.size // (M * k)))


@dataclass(frozen=True)
class SelectorSystem:
    """Normal equations ``system_matrix @ c = rhs`` of the joint codebook update."""

    system_matrix: np.ndarray
    rhs: np.ndarray
    counts: np.ndarray  # (M, k) number of datapoints using each sub-codeword

    def objective(self, c) -> float:
        """Quadratic ``c^T A c - 2 b^T c`` (loss up to an additive constant)."""
        c = np.asarray(c, dtype=float)
        return float(c @ self.system_matrix @ c - 2.0 * self.rhs @ c)


def _check_codes(codes, book: ProductCodebook) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.shape[-1] != book.M:
        raise DimensionMismatch(f"expected {book.M} codes per row, got {codes.shape[-1]}")
    if codes.size and (codes.min() < 0 or codes.max() >= book.k):
        raise CodeOutOfRange(f"codes must lie in [0, {book.k})")
    return codes.astype(np.int64, copy=False)


def reconstruct(codes_row, codebook: ProductCodebook) -> np.ndarray:
    codes_row = _check_codes(codes_row, codebook)
    if codes_row.ndim != 1:
        raise DimensionMismatch("expected a single code row")
    return codebook.dictionaries[np.arange(codebook.M), codes_row].reshape(-1)


def reconstruct_all(codes, codebook: ProductCodebook) -> np.ndarray:
    codes = _check_codes(np.atleast_2d(codes), codebook)
    return codebook.dictionaries[np.arange(codebook.M)[None, :], codes].reshape(codes.shape[0], -1)


def _split_check(d: int, M: int) -> int:
    if M < 1 or d % M:
        raise DimensionNotDivisible(f"dimension {d} is not divisible by M={M}")
    return d // M


# ---------------------------------------------------------------------------
# assignment


def _sweep(X, sq, codes, book: ProductCodebook, hp, ho, order) -> np.ndarray:
    """One coordinate-descent pass over subspaces in ``order`` (vectorized over rows).

    For subspace ``m`` with the other subspaces fixed, candidate ``j`` scores
    ``h_perp |x_m - c_j|^2 + (h_par - h_perp) (P + <x_m - c_j, x_m>)^2 / |x|^2``
    where ``P`` is the parallel-residual contribution of the other
    subspaces; this differs from the full loss by a per-row constant.
    """
    s = book.sub_dimension
    codes = codes.copy()
    recon = reconstruct_all(codes, book)
    rx = np.einsum("ij,ij->i", X - recon, X)
    aniso = hp - ho
    for m in order:
        sl = slice(m * s, (m + 1) * s)
        Xm = X[:, sl]
        Cm = book.dictionaries[m]
        old = Cm[codes[:, m]]
        xmxm = np.einsum("ij,ij->i", Xm, Xm)
        if book.M == 1:
            P_other = np.zeros_like(rx)
        else:
            P_other = rx - (xmxm - np.einsum("ij,ij->i", Xm, old))
        step = max(1, _CHUNK_ELEMENTS // (book.k * s))
        for start in range(0, X.shape[0], step):
            r = slice(start, start + step)
            e = np.sum((Xm[r, None, :] - Cm[None, :, :]) ** 2, axis=-1)
            P = P_other[r, None] + (xmxm[r, None] - Xm[r] @ Cm.T)
            score = ho[r, None] * e + aniso[r, None] * (P * P / sq[r, None])
            codes[r, m] = np.argmin(score, axis=1)
        rx = P_other + xmxm - np.einsum("ij,ij->i", Xm, Cm[codes[:, m]])
    return codes


def _prepare(X, weights: AnisotropicWeights | None):
    X = X.values if isinstance(X, Dataset) else np.atleast_2d(np.asarray(X, dtype=float))
    sq = np.einsum("ij,ij->i", X, X)
    if np.any(sq == 0):
        raise ZeroNormDatapoint("zero-norm datapoint")
    weights = weights or AnisotropicWeights.isotropic()
    hp, ho = weights.broadcast(X.shape[0])
    return X, sq, hp, ho


def pq_assign_all(
    X, codes, codebook: ProductCodebook, weights: AnisotropicWeights, sweep_order=None, sweeps: int = 1
) -> np.ndarray:
    """Coordinate-descent assignment for every row of ``X``.

    ``sweeps`` passes are made over ``sweep_order`` (default ``0..M-1``);
    ``sweeps=0`` repeats passes until no code changes.
    """
    X, sq, hp, ho = _prepare(X, weights)
    if X.shape[1] != codebook.d:
        raise DimensionMismatch(f"data dimension {X.shape[1]} != codebook dimension {codebook.d}")
    codes = _check_codes(np.atleast_2d(codes), codebook)
    order = range(codebook.M) if sweep_order is None else list(sweep_order)
    if sweeps > 0:
        for _ in range(sweeps):
            codes = _sweep(X, sq, codes, codebook, hp, ho, order)
        return codes
    while True:
        new = _sweep(X, sq, codes, codebook, hp, ho, order)
        if np.array_equal(new, codes):
            return new
        codes = new


def pq_assign_point(x, current_codes, codebook: ProductCodebook, weights: AnisotropicWeights, sweep_order=None):
    """One coordinate-descent pass for a single datapoint; returns the new code row."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("expected a single vector")
    return pq_assign_all(x[None, :], np.asarray(current_codes)[None, :], codebook, weights, sweep_order)[0]


def nearest_codes(X, codebook: ProductCodebook) -> np.ndarray:
    """Reconstruction-nearest sub-codeword in every subspace."""
    X = X.values if isinstance(X, Dataset) else np.atleast_2d(np.asarray(X, dtype=float))
    s = codebook.sub_dimension
    codes = np.empty((X.shape[0], codebook.M), dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // (codebook.k * s))
    for m in range(codebook.M):
        Xm = X[:, m * s : (m + 1) * s]
        Cm = codebook.dictionaries[m]
        for start in range(0, X.shape[0], step):
            r = slice(start, start + step)
            codes[r, m] = np.argmin(np.sum((Xm[r, None, :] - Cm[None, :, :]) ** 2, axis=-1), axis=1)
    return codes


# ---------------------------------------------------------------------------
# codebook update


def _per_point_loss(X, recon, hp, ho, sq) -> np.ndarray:
    R = X - recon
    p = np.einsum("ij,ij->i", R, X)
    return ho * np.einsum("ij,ij->i", R, R) + (hp - ho) * (p * p / sq)


def pq_total_loss(dataset, codes, codebook: ProductCodebook, weights: AnisotropicWeights | None = None) -> float:
    X, sq, hp, ho = _prepare(dataset, weights)
    return float(_per_point_loss(X, reconstruct_all(codes, codebook), hp, ho, sq).sum())


def assemble_system(dataset, codes, weights: AnisotropicWeights, M: int, k: int) -> SelectorSystem:
    """Build ``sum_i B_i^T A_i B_i`` and ``sum_i h_par,i B_i^T x_i``.

    ``A_i = (h_par - h_perp) x_i x_i^T / |x_i|^2 + h_perp I`` and ``B_i``
    selects datapoint ``i``'s sub-codewords out of the stacked codebook.
    The rank-one terms are accumulated as ``Z^T diag(coef) Z`` with ``Z`` the
    sparse matrix whose row ``i`` is ``B_i^T x_i``.
    """
    X, sq, hp, ho = _prepare(dataset, weights)
    n, d = X.shape
    s = _split_check(d, M)
    dk = d * k
    if dk > MAX_SYSTEM_SIZE:
        raise ValidationError(f"codebook system of size {dk} exceeds the supported {MAX_SYSTEM_SIZE}")
    codes = np.asarray(codes, dtype=np.int64)
    if codes.shape != (n, M):
        raise DimensionMismatch(f"codes must have shape {(n, M)}, got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise CodeOutOfRange(f"codes must lie in [0, {k})")

    slot = np.arange(M)[None, :] * k + codes  # (n, M)
    cols = (slot[:, :, None] * s + np.arange(s)[None, None, :]).reshape(n, d)
    Z = scipy.sparse.csr_matrix(
        (X.reshape(-1), cols.reshape(-1), np.arange(0, n * d + 1, d)), shape=(n, dk)
    )
    coef = (hp - ho) / sq
    A = (Z.T @ scipy.sparse.diags(coef) @ Z).toarray()
    diag = np.bincount(slot.reshape(-1), weights=np.repeat(ho, M), minlength=M * k)
    A[np.diag_indices(dk)] += np.repeat(diag, s)
    b = Z.T @ hp
    counts = np.bincount(slot.reshape(-1), minlength=M * k).reshape(M, k)
    return SelectorSystem(A, np.asarray(b, dtype=float), counts)


def solve_system(system: SelectorSystem, ridge: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Solve the selector system by Cholesky factorization.

    Sub-codewords no datapoint uses have all-zero rows and columns; they are
    dropped from the factorization and returned as zeros, together with a
    ``(M, k)`` mask of which sub-codewords were solved for.
    """
    A, b = system.system_matrix, system.rhs
    M, k = system.counts.shape
    s = A.shape[0] // (M * k)
    used = system.counts > 0
    keep = np.repeat(used.reshape(-1), s)
    c = np.zeros_like(b)
    if keep.any():
        A_used = A[np.ix_(keep, keep)]
        if ridge:
            A_used = A_used + ridge * np.eye(A_used.shape[0])
        try:
            factor = scipy.linalg.cho_factor(A_used, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"selector system is not positive definite: {exc}") from None
        c[keep] = scipy.linalg.cho_solve(factor, b[keep], check_finite=False)
    return c, used


def _fill_unused(D, used, per_point_loss, X, policy, previous):
    M, k, s = D.shape
    if used.all():
        return D
    if policy == "keep" and previous is not None:
        D[~used] = previous.dictionaries[~used]
        return D
    order = np.argsort(-per_point_loss, kind="stable")
    for m in range(M):
        empty = np.flatnonzero(~used[m])
        if empty.size:
            donors = order[: empty.size]
            D[m, empty[: donors.size]] = X[donors, m * s : (m + 1) * s]
    return D


def pq_codebook_update(
    dataset,
    codes,
    weights: AnisotropicWeights,
    M: int,
    k: int,
    ridge: float | None = None,
    *,
    previous: ProductCodebook | None = None,
    empty_partition_policy: str = "reseed",
) -> ProductCodebook:
    """Minimize total anisotropic loss over all dictionaries with codes fixed.

    Isotropic weights and ``M == 1`` decouple into independent per-partition
    problems, which are solved with :func:`~anisoquant.vq.update_codeword`;
    otherwise the joint selector system is assembled and solved. Unused
    sub-codewords are reseeded from the subvectors of the highest-loss
    datapoints (or kept from ``previous`` under the ``"keep"`` policy).
    """
    X, sq, hp, ho = _prepare(dataset, weights)
    n, d = X.shape
    s = _split_check(d, M)
    codes = np.asarray(codes, dtype=np.int64)
    if codes.shape != (n, M):
        raise DimensionMismatch(f"codes must have shape {(n, M)}, got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise CodeOutOfRange(f"codes must lie in [0, {k})")

    D = np.zeros((M, k, s))
    used = np.zeros((M, k), dtype=bool)
    if M == 1 or np.array_equal(hp, ho):
        for m in range(M):
            Xm = X[:, m * s : (m + 1) * s]
            for j in np.flatnonzero(np.bincount(codes[:, m], minlength=k)):
                members = codes[:, m] == j
                # subvectors may be zero even when rows are not; the isotropic
                # update is a (weighted) mean and does not need their norms
                w = AnisotropicWeights(hp[members], ho[members])
                if M == 1:
                    D[m, j] = update_codeword(Xm[members], w, ridge)
                else:
                    D[m, j] = _weighted_mean(Xm[members], ho[members])
                used[m, j] = True
    else:
        system = assemble_system(X, codes, weights, M, k)
        c, used = solve_system(system, ridge or 0.0)
        D = c.reshape(M, k, s)

    book = ProductCodebook(D)
    if not used.all():
        loss = _per_point_loss(X, reconstruct_all(codes, book), hp, ho, sq)
        D = _fill_unused(D, used, loss, X, empty_partition_policy, previous)
        book = ProductCodebook(D)
    return book


def _weighted_mean(Xm: np.ndarray, w: np.ndarray) -> np.ndarray:
    if np.all(w == w[0]) and w[0] > 0:
        return Xm.mean(axis=0)
    total = w.sum()
    if total <= 0:
        raise SingularSystem("all points in the partition have zero weight")
    return (w[:, None] * Xm).sum(axis=0) / total


# ---------------------------------------------------------------------------
# training


def _initial_book(X, M, k, seed) -> ProductCodebook:
    idx = initial_indices(X.shape[0], k, seed)
    return ProductCodebook(X[idx].reshape(k, M, -1).transpose(1, 0, 2).copy())


def _check_training(dataset, M):
    ds = as_dataset(dataset)
    if ds.n:
        _split_check(ds.d, M)
    return ds


def _converged(history, tol) -> bool:
    if len(history) < 2:
        return False
    prev, cur = history[-2], history[-1]
    return prev > 0 and (prev - cur) / prev < tol


def train_l2_pq(dataset, M: int, k: int, config: TrainConfig = TrainConfig()) -> tuple[ProductCodebook, VqAssignment]:
    """Classical PQ: k-means in every subspace, run in lockstep.

    Initial sub-codewords are the subvectors of ``k`` datapoints drawn with
    ``config.seed``. Each iteration updates every subspace's centroids,
    records the total reconstruction error and reassigns each subspace to
    its nearest centroid.
    """
    ds = _check_training(dataset, M)
    X = ds.values
    book = _initial_book(X, M, k, config.seed)
    s = book.sub_dimension
    ones = np.ones(ds.n)
    codes = nearest_codes(X, book)
    result = VqAssignment(codes)
    for it in range(config.max_iterations):
        D = book.dictionaries.copy()
        used = np.zeros((M, k), dtype=bool)
        for m in range(M):
            Xm = X[:, m * s : (m + 1) * s]
            for j in np.flatnonzero(np.bincount(codes[:, m], minlength=k)):
                D[m, j] = _weighted_mean(Xm[codes[:, m] == j], ones[codes[:, m] == j])
                used[m, j] = True
        loss_pp = _per_point_loss(X, reconstruct_all(codes, ProductCodebook(D)), ones, ones, ds.norms**2)
        D = _fill_unused(D, used, loss_pp, X, config.empty_partition_policy, book)
        book = ProductCodebook(D)
        result.loss_history.append(float(loss_pp.sum()))
        log.debug("l2 pq iteration %d loss %.12g", it, result.loss_history[-1])
        new_codes = nearest_codes(X, book)
        if np.array_equal(new_codes, codes):
            result.converged = True
            break
        codes = new_codes
        if _converged(result.loss_history, config.relative_tolerance):
            break
    result.assignments = codes
    return book, result


def train_apq(
    dataset,
    M: int,
    k: int,
    weights: AnisotropicWeights,
    config: TrainConfig = TrainConfig(),
    warm_start: bool = True,
) -> tuple[ProductCodebook, VqAssignment]:
    """Train anisotropic product quantization dictionaries.

    With ``warm_start`` the dictionaries start from :func:`train_l2_pq`
    under the same config; otherwise from ``k`` sampled datapoints. Codes
    start reconstruction-nearest. Each iteration solves the joint codebook
    update, records the total anisotropic loss, and runs ``config.sweeps``
    coordinate-descent passes (``0``: until per-point fixed point).
    """
    ds = _check_training(dataset, M)
    X = ds.values
    if warm_start:
        book, _ = train_l2_pq(ds, M, k, config)
    else:
        book = _initial_book(X, M, k, config.seed)
    codes = pq_assign_all(X, nearest_codes(X, book), book, weights, sweeps=config.sweeps)
    result = VqAssignment(codes)
    for it in range(config.max_iterations):
        book = pq_codebook_update(
            X, codes, weights, M, k, config.ridge,
            previous=book, empty_partition_policy=config.empty_partition_policy,
        )
        result.loss_history.append(pq_total_loss(X, codes, book, weights))
        log.debug("apq iteration %d loss %.12g", it, result.loss_history[-1])
        new_codes = pq_assign_all(X, codes, book, weights, sweeps=config.sweeps)
        if np.array_equal(new_codes, codes):
            result.converged = True
            break
        codes = new_codes
        if _converged(result.loss_history, config.relative_tolerance):
            break
    result.assignments = codes
    return book, result


def pq_quantize(dataset, codebook: ProductCodebook, weights: AnisotropicWeights | None = None, passes: int | None = 1) -> np.ndarray:
    """Encode ``dataset``: reconstruction-nearest codes, then ``passes`` anisotropic sweeps.

    ``passes=None`` sweeps until no code changes.
    """
    X = as_dataset(dataset).values
    if X.shape[1] != codebook.d:
        raise DimensionMismatch(f"data dimension {X.shape[1]} != codebook dimension {codebook.d}")
    codes = nearest_codes(X, codebook)
    if passes is None:
        return pq_assign_all(X, codes, codebook, weights, sweeps=0)
    if passes < 0:
        raise ValidationError("passes must be non-negative")
    for _ in range(passes):
        codes = pq_assign_all(X, codes, codebook, weights, sweeps=1)
    return codes
