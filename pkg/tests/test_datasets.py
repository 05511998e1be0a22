import struct

import numpy as np
import pytest

from anisoquant.datasets import (
    Dataset,
    diagnose,
    generate_synthetic,
    read_fvecs,
    read_ivecs,
    unit_normalize,
    write_fvecs,
    write_ivecs,
)
from anisoquant.errors import InsufficientData, MalformedFile, ValidationError, ZeroNormDatapoint


def test_fvecs_layout_by_hand(tmp_path):
    path = tmp_path / "a.fvecs"
    write_fvecs(np.array([[1.5, -2.0, 0.25]]), path)
    assert path.read_bytes() == struct.pack("<i3f", 3, 1.5, -2.0, 0.25)


def test_fvecs_round_trip_is_byte_identical(tmp_path, rng):
    X = rng.standard_normal((37, 11)).astype(np.float32)
    a, b = tmp_path / "a.fvecs", tmp_path / "b.fvecs"
    write_fvecs(X, a)
    write_fvecs(read_fvecs(a), b)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(read_fvecs(a, validate=False), X)


def test_ivecs_round_trip(tmp_path, rng):
    I = rng.integers(-1000, 10**6, size=(9, 4))
    a, b = tmp_path / "a.ivecs", tmp_path / "b.ivecs"
    write_ivecs(I, a)
    write_ivecs(read_ivecs(a), b)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(read_ivecs(a), I)


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.fvecs"
    bad.write_bytes(struct.pack("<i2f", 3, 1.0, 2.0))
    with pytest.raises(MalformedFile):
        read_fvecs(bad)
    bad.write_bytes(struct.pack("<i1f", -1, 1.0))
    with pytest.raises(MalformedFile):
        read_fvecs(bad)
    bad.write_bytes(struct.pack("<i2fi3f", 2, 1.0, 2.0, 3, 1.0, 1.0, 1.0))
    with pytest.raises(MalformedFile):
        read_fvecs(bad)


def test_empty_file_gives_empty_dataset(tmp_path):
    p = tmp_path / "e.fvecs"
    p.write_bytes(b"")
    assert read_fvecs(p).n == 0


def test_dataset_validation():
    with pytest.raises(ZeroNormDatapoint):
        Dataset.from_array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValidationError):
        Dataset.from_array([[np.nan, 1.0]])
    ds = Dataset.from_array([[3.0, 4.0]])
    assert ds.norms[0] == 5.0 and not ds.normalized
    with pytest.raises(ValueError):
        ds.values[0, 0] = 1.0


def test_unit_normalize_and_digest(rng):
    ds = unit_normalize(rng.standard_normal((20, 5)))
    np.testing.assert_allclose(ds.norms, 1.0, rtol=1e-12)
    assert ds.normalized
    assert ds.digest() == Dataset.from_array(ds.values).digest()
    assert ds.digest() != ds.subset(slice(0, 19)).digest()


@pytest.mark.parametrize("kind", ["uniform_sphere", "gaussian_mixture"])
def test_synthetic_is_seeded(kind):
    a = generate_synthetic(kind, 100, 8, seed=4)
    b = generate_synthetic(kind, 100, 8, seed=4)
    c = generate_synthetic(kind, 100, 8, seed=5)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    np.testing.assert_allclose(a.norms, 1.0, rtol=1e-12)


def test_synthetic_rejects_unknown_kind():
    with pytest.raises(ValidationError):
        generate_synthetic("cube", 10, 3, seed=0)


def test_diagnose_against_numpy(rng):
    X = rng.standard_normal((200, 4)) * [1.0, 2.0, 0.5, 1.0]
    X[:, 3] = X[:, 0] * 0.9 + 0.1 * rng.standard_normal(200)
    rep = diagnose(X)
    np.testing.assert_allclose(rep.per_dimension_variance, np.var(X, axis=0, ddof=1))
    C = np.corrcoef(X.T)
    assert rep.max_abs_offdiagonal_correlation == pytest.approx(np.abs(C - np.eye(4)).max())
    assert rep.variance_ratio == pytest.approx(rep.per_dimension_variance.max() / rep.per_dimension_variance.min())
    with pytest.raises(InsufficientData):
        diagnose(X[:1])
