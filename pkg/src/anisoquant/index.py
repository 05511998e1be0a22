"""Query-time scoring: lookup tables, exact search and retrieval metrics."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset, as_dataset, read_ivecs, write_ivecs
from .errors import (
    CodeOutOfRange,
    DimensionMismatch,
    EmptyDataset,
    EmptyIndex,
    GroundTruthMismatch,
    ValidationError,
)
from .pq import ProductCodebook
from .vq import Codebook

__all__ = [
    "LookupTable",
    "SearchResult",
    "EvalReport",
    "build_lut",
    "adc_score",
    "adc_scores",
    "adc_search",
    "exact_search",
    "top_n",
    "ground_truth",
    "evaluate",
]


def _book(codebook) -> ProductCodebook:
    return codebook.as_product() if isinstance(codebook, Codebook) else codebook


@dataclass(frozen=True)
class LookupTable:
    partials: np.ndarray  # (M, k)


@dataclass(frozen=True)
class SearchResult:
    indices: np.ndarray
    scores: np.ndarray

    @property
    def hits(self) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.indices, self.scores)]

    def __len__(self) -> int:
        return len(self.indices)


def build_lut(q, codebook) -> LookupTable:
    """Partial inner products of every query subvector with every sub-codeword."""
    book = _book(codebook)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (book.d,):
        raise DimensionMismatch(f"query has shape {q.shape}, codebook dimension is {book.d}")
    sub = q.reshape(book.M, book.sub_dimension)
    return LookupTable(np.einsum("mks,ms->mk", book.dictionaries.astype(np.float64), sub))


def _check_codes(codes, lut: LookupTable) -> np.ndarray:
    codes = np.asarray(codes)
    M, k = lut.partials.shape
    if codes.shape[-1] != M:
        raise DimensionMismatch(f"expected {M} codes per row, got {codes.shape[-1]}")
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise CodeOutOfRange(f"codes must lie in [0, {k})")
    return codes.astype(np.intp, copy=False)


def adc_score(codes_row, lut: LookupTable) -> float:
    codes_row = _check_codes(codes_row, lut)
    return float(lut.partials[np.arange(codes_row.size), codes_row].sum(dtype=np.float64))


def adc_scores(codes, lut: LookupTable) -> np.ndarray:
    """Approximate inner products for every row of a code matrix."""
    codes = _check_codes(np.atleast_2d(codes), lut)
    M = lut.partials.shape[0]
    out = np.zeros(codes.shape[0], dtype=np.float64)
    for m in range(M):
        out += lut.partials[m, codes[:, m]]
    return out


def top_n(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` largest scores, ordered by score desc then index asc."""
    scores = np.asarray(scores)
    if n < 1:
        raise ValidationError("topN must be >= 1")
    total = scores.shape[0]
    if n < total:
        kth = np.partition(scores, total - n)[total - n]
        candidates = np.flatnonzero(scores >= kth)
    else:
        candidates = np.arange(total)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:n]]


def adc_search(q, codes, codebook, topN: int) -> SearchResult:
    codes = np.atleast_2d(np.asarray(codes))
    if codes.shape[0] == 0:
        raise EmptyIndex("no encoded datapoints to search")
    lut = build_lut(q, codebook)
    scores = adc_scores(codes, lut)
    idx = top_n(scores, topN)
    return SearchResult(idx, scores[idx])


def exact_search(q, dataset, topN: int) -> SearchResult:
    values = dataset.values if isinstance(dataset, Dataset) else np.atleast_2d(np.asarray(dataset, dtype=float))
    if values.shape[0] == 0:
        raise EmptyDataset("cannot search an empty dataset")
    q = np.asarray(q, dtype=float)
    if q.shape != (values.shape[1],):
        raise DimensionMismatch(f"query has shape {q.shape}, data dimension is {values.shape[1]}")
    scores = values @ q
    idx = top_n(scores, topN)
    return SearchResult(idx, scores[idx])


# ---------------------------------------------------------------------------
# evaluation


def ground_truth(queries, dataset, depth: int, batch_size: int = 256) -> np.ndarray:
    """Exact top-``depth`` indices for every query, shape ``(n_queries, depth)``."""
    Q = as_dataset(queries).values
    X = as_dataset(dataset).values
    if X.shape[0] == 0:
        raise EmptyDataset("cannot search an empty dataset")
    depth = min(depth, X.shape[0])
    out = np.empty((Q.shape[0], depth), dtype=np.int64)
    for start in range(0, Q.shape[0], batch_size):
        S = Q[start : start + batch_size] @ X.T
        for r, row in enumerate(S):
            out[start + r] = top_n(row, depth)
    return out


def _cached_ground_truth(queries: Dataset, dataset: Dataset, depth: int, cache_dir) -> tuple[np.ndarray, str]:
    key = hashlib.sha256((dataset.digest() + queries.digest()).encode()).hexdigest()
    if cache_dir is None:
        return ground_truth(queries, dataset, depth), key
    path = Path(cache_dir) / f"gt_{key[:24]}.ivecs"
    if path.exists():
        gt = read_ivecs(path)
        if gt.shape[0] == queries.n and gt.shape[1] >= min(depth, dataset.n):
            return gt, key
    gt = ground_truth(queries, dataset, depth)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ivecs(gt, path)
    return gt, key


@dataclass
class EvalReport:
    recall_1_at_N: dict[int, float]
    recall_k_at_k: float
    k: int
    relative_error_top1: dict[str, float]
    latency_ms: dict[str, float]
    n_queries: int
    ground_truth_digest: str = ""
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        flat = {f"recall_1_at_{n}": v for n, v in sorted(self.recall_1_at_N.items())}
        flat[f"recall_{self.k}_at_{self.k}"] = self.recall_k_at_k
        flat.update({f"relative_error_top1_{k}": v for k, v in self.relative_error_top1.items()})
        flat.update({f"latency_ms_{k}": v for k, v in self.latency_ms.items()})
        flat["n_queries"] = self.n_queries
        flat["ground_truth_digest"] = self.ground_truth_digest
        flat.update({f"meta_{k}": v for k, v in self.meta.items()})
        return flat

    def to_text(self) -> str:
        return "\n".join(f"{k}\t{v}" for k, v in self.as_dict().items()) + "\n"

    def write(self, directory, stem: str = "eval") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        txt, js = directory / f"{stem}.txt", directory / f"{stem}.json"
        txt.write_text(self.to_text())
        js.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")
        return txt, js


def evaluate(
    queries,
    dataset,
    codes,
    codebook,
    weights_meta: dict | None = None,
    Ns=(1, 10, 100),
    *,
    k: int = 10,
    ground_truth_indices=None,
    cache_dir: str | os.PathLike | None = None,
) -> EvalReport:
    """Recall and top-1 inner-product error of an encoded dataset.

    ``recall_1_at_N`` is the fraction of queries whose true top-1 appears in
    the ADC top-``N``; ``recall_k_at_k`` is the mean overlap of the ADC and
    exact top-``k`` sets divided by ``k``. The relative error is measured on
    each query's true top-1 datapoint. Exact ground truth is computed, read
    from ``ground_truth_indices``, or cached as an ivecs file in
    ``cache_dir`` keyed by the dataset and query digests.
    """
    Q = as_dataset(queries)
    X = as_dataset(dataset)
    if Q.n == 0:
        raise EmptyDataset("no queries to evaluate")
    if X.n == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    codes = np.atleast_2d(np.asarray(codes))
    if codes.shape[0] != X.n:
        raise DimensionMismatch(f"{codes.shape[0]} code rows for {X.n} datapoints")
    Ns = sorted({int(n) for n in Ns})
    if not Ns or Ns[0] < 1:
        raise ValidationError("Ns must contain positive integers")
    depth = min(max(Ns[-1], k), X.n)

    if ground_truth_indices is not None:
        gt = np.asarray(ground_truth_indices, dtype=np.int64)
        if gt.ndim != 2 or gt.shape[0] != Q.n or gt.shape[1] < min(k, X.n):
            raise GroundTruthMismatch(
                f"ground truth has shape {gt.shape}, need ({Q.n}, >= {min(k, X.n)})"
            )
        gt_key = hashlib.sha256(np.ascontiguousarray(gt, dtype="<i4").tobytes()).hexdigest()
    else:
        gt, gt_key = _cached_ground_truth(Q, X, depth, cache_dir)

    hit_rank = np.empty(Q.n, dtype=np.int64)
    overlap = np.empty(Q.n)
    rel_err = np.empty(Q.n)
    latency = np.empty(Q.n)
    kk = min(k, X.n)
    for i, q in enumerate(Q.values):
        t0 = time.perf_counter()
        lut = build_lut(q, codebook)
        scores = adc_scores(codes, lut)
        retrieved = top_n(scores, depth)
        latency[i] = (time.perf_counter() - t0) * 1e3
        true_top = gt[i, 0]
        pos = np.flatnonzero(retrieved == true_top)
        hit_rank[i] = pos[0] if pos.size else depth
        overlap[i] = np.intersect1d(retrieved[:kk], gt[i, :kk]).size / kk
        exact = float(X.values[true_top] @ q)
        rel_err[i] = abs((exact - scores[true_top]) / exact) if exact != 0 else np.inf

    recall = {n: float(np.mean(hit_rank < min(n, X.n))) for n in Ns}
    finite = rel_err[np.isfinite(rel_err)]
    rel = {
        "mean": float(finite.mean()) if finite.size else float("nan"),
        "median": float(np.median(finite)) if finite.size else float("nan"),
        "p90": float(np.quantile(finite, 0.9)) if finite.size else float("nan"),
        "max": float(finite.max()) if finite.size else float("nan"),
    }
    lat = {
        "mean": float(latency.mean()),
        "p50": float(np.median(latency)),
        "p99": float(np.quantile(latency, 0.99)),
    }
    return EvalReport(recall, float(overlap.mean()), kk, rel, lat, Q.n, gt_key, dict(weights_meta or {}))
