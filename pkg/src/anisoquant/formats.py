"""Binary containers for codebooks and code matrices.

All integers and floats are little-endian.

* VQ codebook: int32 ``magic "AVQC", version, k, d`` then ``k*d`` float32.
* PQ codebook: int32 ``magic "APQC", version, M, k, d`` then ``M*k*(d/M)``
  float32 (dictionary-major, row-major within a dictionary).
* Code matrix: int32 ``n, M, k`` then ``n*M`` codes, uint8 when ``k <= 256``
  else uint16, row-major.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import CodeOutOfRange, MalformedFile, ValidationError
from .pq import ProductCodebook
from .vq import Codebook

__all__ = [
    "VQ_MAGIC",
    "PQ_MAGIC",
    "FORMAT_VERSION",
    "write_codebook",
    "read_codebook",
    "write_codes",
    "read_codes",
    "code_dtype",
]

VQ_MAGIC = int.from_bytes(b"AVQC", "little")
PQ_MAGIC = int.from_bytes(b"APQC", "little")
FORMAT_VERSION = 1


def code_dtype(k: int) -> np.dtype:
    if k <= 256:
        return np.dtype("u1")
    if k <= 65536:
        return np.dtype("<u2")
    raise ValidationError(f"k={k} does not fit in 16-bit codes")


def write_codebook(path, codebook: Codebook | ProductCodebook) -> None:
    if isinstance(codebook, Codebook):
        header = np.array([VQ_MAGIC, FORMAT_VERSION, codebook.k, codebook.d], dtype="<i4")
        payload = codebook.codewords
    elif isinstance(codebook, ProductCodebook):
        header = np.array(
            [PQ_MAGIC, FORMAT_VERSION, codebook.M, codebook.k, codebook.d], dtype="<i4"
        )
        payload = codebook.dictionaries
    else:
        raise ValidationError(f"cannot serialize {type(codebook).__name__}")
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def read_codebook(path) -> Codebook | ProductCodebook:
    raw = open(os.fspath(path), "rb").read()
    if len(raw) < 16:
        raise MalformedFile(f"{path}: too short for a codebook header")
    magic, version = np.frombuffer(raw[:8], dtype="<i4")
    if version != FORMAT_VERSION:
        raise MalformedFile(f"{path}: unsupported version {version}")
    if magic == VQ_MAGIC:
        k, d = (int(v) for v in np.frombuffer(raw[8:16], dtype="<i4"))
        body = np.frombuffer(raw[16:], dtype="<f4")
        if k < 1 or d < 1 or body.size != k * d:
            raise MalformedFile(f"{path}: payload size does not match k={k}, d={d}")
        return Codebook(body.reshape(k, d).astype(np.float64))
    if magic == PQ_MAGIC:
        if len(raw) < 20:
            raise MalformedFile(f"{path}: truncated header")
        M, k, d = (int(v) for v in np.frombuffer(raw[8:20], dtype="<i4"))
        body = np.frombuffer(raw[20:], dtype="<f4")
        if M < 1 or k < 1 or d % M or body.size != k * d:
            raise MalformedFile(f"{path}: payload size does not match M={M}, k={k}, d={d}")
        return ProductCodebook(body.reshape(M, k, d // M).astype(np.float64))
    raise MalformedFile(f"{path}: unknown magic {magic:#x}")


def write_codes(path, codes, k: int) -> None:
    codes = np.atleast_2d(np.asarray(codes))
    if codes.ndim != 2:
        raise ValidationError("codes must be an (n, M) matrix")
    if codes.size and (codes.min() < 0 or codes.max() >= k):
        raise CodeOutOfRange(f"codes must lie in [0, {k})")
    n, M = codes.shape
    with open(path, "wb") as f:
        f.write(np.array([n, M, k], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(codes, dtype=code_dtype(k)).tobytes())


def read_codes(path) -> tuple[np.ndarray, int]:
    """Return ``(codes, k)`` with codes as an ``int64`` matrix."""
    raw = open(os.fspath(path), "rb").read()
    if len(raw) < 12:
        raise MalformedFile(f"{path}: too short for a code header")
    n, M, k = (int(v) for v in np.frombuffer(raw[:12], dtype="<i4"))
    dt = code_dtype(k)
    body = np.frombuffer(raw[12:], dtype=dt)
    if n < 0 or M < 1 or body.size != n * M or len(raw) - 12 != n * M * dt.itemsize:
        raise MalformedFile(f"{path}: payload does not match n={n}, M={M}, k={k}")
    codes = body.reshape(n, M).astype(np.int64)
    if codes.size and codes.max() >= k:
        raise MalformedFile(f"{path}: code out of range for k={k}")
    return codes, k
