import struct

import numpy as np
import pytest

from anisoquant import generate_synthetic
from anisoquant.errors import CodeOutOfRange, MalformedFile
from anisoquant.formats import read_codebook, read_codes, write_codebook, write_codes
from anisoquant.geometry import AnisotropicWeights
from anisoquant.pq import ProductCodebook, train_apq
from anisoquant.vq import Codebook, TrainConfig, train_avq


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def test_vq_codebook_header(tmp_path):
    p = tmp_path / "c.bin"
    write_codebook(p, Codebook([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    raw = p.read_bytes()
    assert raw[:4] == b"AVQC"
    assert struct.unpack("<3i", raw[4:16]) == (1, 3, 2)
    assert struct.unpack("<6f", raw[16:]) == (1, 2, 3, 4, 5, 6)


def test_pq_codebook_header(tmp_path):
    p = tmp_path / "c.bin"
    write_codebook(p, ProductCodebook(np.arange(12, dtype=float).reshape(2, 3, 2)))
    raw = p.read_bytes()
    assert raw[:4] == b"APQC"
    assert struct.unpack("<4i", raw[4:20]) == (1, 2, 3, 4)
    assert len(raw) == 20 + 12 * 4


@pytest.mark.parametrize("k,itemsize", [(16, 1), (256, 1), (257, 2), (1000, 2)])
def test_code_width(tmp_path, k, itemsize):
    codes = np.random.default_rng(0).integers(0, k, size=(5, 3))
    p = tmp_path / "codes.bin"
    write_codes(p, codes, k)
    assert len(p.read_bytes()) == 12 + 15 * itemsize
    back, kk = read_codes(p)
    assert kk == k
    np.testing.assert_array_equal(back, codes)


def test_trained_artifacts_round_trip_bit_exactly(tmp_path):
    ds = generate_synthetic("gaussian_mixture", 300, 8, 0, centers=4)
    w = AnisotropicWeights.from_eta(3.0)
    for book, codes, k in (
        (lambda b, r: (b, r.assignments[:, None], 8))(*train_avq(ds, 8, w, TrainConfig(max_iterations=5))),
        (lambda b, r: (b, r.assignments, 8))(*train_apq(ds, 2, 8, w, TrainConfig(max_iterations=5))),
    ):
        cb, cp = tmp_path / "cb.bin", tmp_path / "codes.bin"
        write_codebook(cb, book)
        write_codes(cp, codes, k)
        back = read_codebook(cb)
        assert type(back) is type(book)
        arr = back.codewords if isinstance(back, Codebook) else back.dictionaries
        ref = book.codewords if isinstance(book, Codebook) else book.dictionaries
        np.testing.assert_array_equal(arr, _f32(ref))
        np.testing.assert_array_equal(read_codes(cp)[0], codes)
        # second write of the decoded artifact is byte-identical
        cb2, cp2 = tmp_path / "cb2.bin", tmp_path / "codes2.bin"
        write_codebook(cb2, back)
        write_codes(cp2, *read_codes(cp))
        assert cb.read_bytes() == cb2.read_bytes()
        assert cp.read_bytes() == cp2.read_bytes()


def test_malformed_inputs(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"XXXX" + struct.pack("<3i", 1, 1, 1) + struct.pack("<f", 0.0))
    with pytest.raises(MalformedFile):
        read_codebook(p)
    p.write_bytes(b"AVQC" + struct.pack("<3i", 1, 2, 2) + struct.pack("<3f", 0, 0, 0))
    with pytest.raises(MalformedFile):
        read_codebook(p)
    p.write_bytes(struct.pack("<3i", 2, 1, 4) + bytes([1]))
    with pytest.raises(MalformedFile):
        read_codes(p)
    p.write_bytes(struct.pack("<3i", 1, 1, 4) + bytes([9]))
    with pytest.raises(MalformedFile):
        read_codes(p)
    with pytest.raises(CodeOutOfRange):
        write_codes(p, [[4]], 4)
