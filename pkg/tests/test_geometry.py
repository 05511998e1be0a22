import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anisoquant.errors import InvalidThreshold, ValidationError, ZeroNormDatapoint
from anisoquant.geometry import (
    AnisotropicWeights,
    Constant,
    Indicator,
    Tabulated,
    anisotropic_loss,
    anisotropic_loss_batch,
    eta_exact,
    eta_limit,
    h_coefficients,
    indicator_weights,
    monte_carlo_loss,
    residual_decompose,
    sphere_normalizer,
)

# (d-1)(I_{d-2}/I_d - 1), I_p = int_0^acos(T/norm) sin^p, from the upward
# recursion run in 600-digit mpmath arithmetic
ETA_REFERENCE = {
    (0.2, 1.0, 2): 1.333979801233364,
    (0.2, 1.0, 8): 1.7267080184537945,
    (0.2, 1.0, 32): 2.9379026178007474,
    (0.2, 1.0, 100): 5.9533142069775915,
    (0.2, 1.0, 512): 23.29498249125959,
    (0.5, 1.0, 16): 7.4042136659970135,
    (0.9, 1.0, 64): 279.06901837217984,
    (0.5, 2.0, 10): 2.1795873290576405,
    (0.95, 1.0, 300): 2788.1721863310122,
}

vectors = arrays(np.float64, st.integers(2, 12), elements=st.floats(-10, 10))


@settings(max_examples=60, deadline=None)
@given(data=st.data(), x=vectors)
def test_residual_decomposition_is_orthogonal_split(data, x):
    if np.linalg.norm(x) < 1e-3:
        x = x + 1.0
    xq = data.draw(arrays(np.float64, x.shape, elements=st.floats(-10, 10)))
    parts = residual_decompose(x, xq)
    r = x - xq
    np.testing.assert_allclose(parts.r_parallel + parts.r_perpendicular, r, atol=1e-9)
    scale = np.linalg.norm(x) * max(np.linalg.norm(r), 1.0)
    assert abs(parts.r_perpendicular @ x) <= 1e-9 * scale
    # r_par is collinear with x
    xn = x / np.linalg.norm(x)
    off = parts.r_parallel - (parts.r_parallel @ xn) * xn
    assert np.linalg.norm(off) <= 1e-8 * scale


def test_zero_datapoint_rejected():
    with pytest.raises(ZeroNormDatapoint):
        residual_decompose(np.zeros(3), np.ones(3))


@settings(max_examples=50, deadline=None)
@given(x=vectors, eta=st.floats(0, 50))
def test_isotropic_loss_is_squared_error_and_batch_matches(x, eta):
    if np.linalg.norm(x) < 1e-3:
        x = x + 1.0
    rng = np.random.default_rng(0)
    xq = x + rng.standard_normal(x.shape)
    iso = anisotropic_loss(x, xq, AnisotropicWeights.isotropic())
    assert iso == pytest.approx(float((x - xq) @ (x - xq)), rel=1e-10)
    w = AnisotropicWeights.from_eta(eta)
    single = anisotropic_loss(x, xq, w)
    batch = anisotropic_loss_batch(x[None], xq[None], w)[0]
    assert batch == pytest.approx(single, rel=1e-10, abs=1e-12)


def test_weights_validation_and_eta():
    with pytest.raises(ValidationError):
        AnisotropicWeights(-1.0, 1.0)
    w = AnisotropicWeights(np.array([2.0, 0.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(w.eta, [2.0, np.inf])
    assert AnisotropicWeights.from_eta(3.0).eta == 3.0
    assert AnisotropicWeights.isotropic().is_isotropic


@pytest.mark.parametrize("d", [2, 3, 7, 16, 64])
def test_constant_weight_is_isotropic(d):
    h = h_coefficients(Constant(), 1.0, d)
    assert h.h_parallel == pytest.approx(h.h_perpendicular, rel=1e-9)
    # both equal Z_d / d
    assert h.h_parallel == pytest.approx(sphere_normalizer(d) / d, rel=1e-9)


@pytest.mark.parametrize("key", sorted(ETA_REFERENCE))
def test_eta_exact_reference_values(key):
    T, norm, d = key
    assert eta_exact(T, norm, d) == pytest.approx(ETA_REFERENCE[key], rel=1e-9)


@pytest.mark.parametrize("T,d", [(0.2, 4), (0.2, 33), (0.5, 12), (0.8, 20), (0.05, 64)])
def test_eta_exact_matches_quadrature(T, d):
    h = h_coefficients(Indicator(T), 1.0, d)
    assert eta_exact(T, 1.0, d) == pytest.approx(h.h_parallel / h.h_perpendicular, rel=1e-7)


def test_eta_exact_zero_threshold_is_one():
    assert eta_exact(0.0, 1.0, 50) == 1.0
    assert eta_exact(0.0, 3.0, 2) == 1.0


def test_eta_limit_formula_and_threshold_checks():
    assert eta_limit(0.2, 1.0, 101) == pytest.approx(100 / 24)
    assert eta_limit(1.0, 2.0, 4) == pytest.approx(1.0)
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(InvalidThreshold):
            eta_exact(bad, 1.0, 10)
        with pytest.raises(InvalidThreshold):
            eta_limit(bad, 1.0, 10)
    with pytest.raises(ValidationError):
        eta_exact(0.2, 1.0, 1)


def test_eta_exact_high_dimension_is_finite_and_ordered():
    vals = [eta_exact(0.2, 1.0, d) for d in (1000, 4000, 20000)]
    assert all(math.isfinite(v) for v in vals)
    assert vals[0] < vals[1] < vals[2]


def test_indicator_weights_match_quadrature():
    norms = np.array([0.1, 0.3, 1.0, 2.5])
    w = indicator_weights(0.2, norms, 12)
    assert w.h_parallel[0] == 0.0 and w.h_perpendicular[0] == 0.0
    for i, nm in enumerate(norms[1:], start=1):
        h = h_coefficients(Indicator(0.2), nm, 12)
        assert w.h_parallel[i] == pytest.approx(h.h_parallel, rel=1e-7)
        assert w.h_perpendicular[i] == pytest.approx(h.h_perpendicular, rel=1e-7)


step_functions = st.lists(
    st.tuples(st.floats(0.0, 1.5), st.floats(0.01, 3.0)), min_size=1, max_size=5
).map(lambda pairs: sorted(pairs))


@settings(max_examples=40, deadline=None)
@given(pairs=step_functions, d=st.integers(2, 40), norm=st.floats(0.3, 2.0))
def test_nondecreasing_weights_favor_parallel(pairs, d, norm):
    knots = np.unique([p[0] for p in pairs])
    values = np.cumsum(np.array([p[1] for p in pairs])[: knots.size])
    h = h_coefficients(Tabulated(tuple(knots), tuple(values)), norm, d)
    assert h.h_parallel >= h.h_perpendicular * (1 - 1e-9)


def test_tabulated_validation():
    with pytest.raises(ValidationError):
        Tabulated((0.5, 0.2), (1.0, 2.0))
    with pytest.raises(ValidationError):
        Tabulated((0.1, 0.2), (2.0, 1.0))
    t = Tabulated((0.1, 0.4), (1.0, 3.0))
    np.testing.assert_array_equal(t(np.array([0.0, 0.1, 0.39, 0.4, 9.0])), [0, 1, 1, 3, 3])


@pytest.mark.parametrize("w", [Constant(), Indicator(0.3)])
def test_monte_carlo_absolute_level(w):
    # E_q[...] = (h_par |r_par|^2 + h_perp |r_perp|^2) / Z_d
    rng = np.random.default_rng(7)
    d = 6
    x = rng.standard_normal(d)
    x /= np.linalg.norm(x)
    xq = x + 0.3 * rng.standard_normal(d)
    mean, se = monte_carlo_loss(x, xq, w, 400_000, seed=11)
    analytic = anisotropic_loss(x, xq, h_coefficients(w, 1.0, d)) / sphere_normalizer(d)
    assert abs(mean - analytic) <= 4 * se


def test_monte_carlo_sample_floor():
    with pytest.raises(ValidationError):
        monte_carlo_loss(np.ones(3), np.zeros(3), Constant(), 10, seed=0)
