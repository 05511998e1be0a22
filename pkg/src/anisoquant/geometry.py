"""Score-aware loss geometry.

A quantization residual ``x - x_quant`` is split into the component along
``x`` and the component orthogonal to it. Under a uniformly spherical query
distribution the expected weighted squared inner-product error is a weighted
sum of the two squared residual norms, with weights ``h_parallel`` and
``h_perpendicular`` that depend only on the weight function, ``||x||`` and
the dimension.

The weights returned here follow the normalization

    h_parallel      = int_0^pi w(|x| cos t) cos^2 t sin^(d-2) t dt
    h_perpendicular = 1/(d-1) int_0^pi w(|x| cos t) sin^d t dt

for which ``E_q[w(<q,x>) <q, x - x_quant>^2]`` equals
``(h_par |r_par|^2 + h_perp |r_perp|^2) / Z_d`` with
``Z_d = int_0^pi sin^(d-2) t dt`` (see :func:`sphere_normalizer`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionMismatch, InvalidThreshold, ValidationError, ZeroNormDatapoint
from .quadrature import adaptive_simpson

__all__ = [
    "Indicator",
    "Constant",
    "Tabulated",
    "WeightFunction",
    "ResidualDecomposition",
    "AnisotropicWeights",
    "residual_decompose",
    "h_coefficients",
    "eta_exact",
    "eta_limit",
    "indicator_weights",
    "anisotropic_loss",
    "anisotropic_loss_batch",
    "monte_carlo_loss",
    "sphere_normalizer",
]


# ---------------------------------------------------------------------------
# weight functions


@dataclass(frozen=True)
class Indicator:
    """``w(t) = 1`` if ``t >= threshold`` else 0."""

    threshold: float

    def __post_init__(self):
        if not (self.threshold >= 0 and math.isfinite(self.threshold)):
            raise InvalidThreshold(f"indicator threshold must be >= 0, got {self.threshold}")

    def __call__(self, t):
        return (np.asarray(t) >= self.threshold).astype(float)

    def segments(self, norm: float) -> list[tuple[float, float, float]]:
        if self.threshold >= norm:
            return []
        return [(0.0, math.acos(self.threshold / norm), 1.0)]


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValidationError("constant weight must be finite and non-negative")

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value))

    def segments(self, norm: float) -> list[tuple[float, float, float]]:
        return [(0.0, math.pi, float(self.value))]


@dataclass(frozen=True)
class Tabulated:
    """Non-decreasing step function: ``values[j]`` on ``[knots[j], knots[j+1])``.

    Zero below ``knots[0]``; ``knots`` must be non-negative and strictly
    increasing.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if len(knots) == 0 or len(knots) != len(values):
            raise ValidationError("knots and values must be non-empty and of equal length")
        if knots[0] < 0 or any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValidationError("knots must be non-negative and strictly increasing")
        if values[0] < 0 or any(b < a for a, b in zip(values, values[1:])):
            raise ValidationError("values must be non-negative and non-decreasing")
        if not all(map(math.isfinite, knots + values)):
            raise ValidationError("knots and values must be finite")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        vals = np.concatenate([[0.0], self.values])
        return vals[idx + 1]

    def segments(self, norm: float) -> list[tuple[float, float, float]]:
        # t = norm*cos(theta) decreases in theta, so step j maps to
        # theta in [acos(min(t_{j+1}/norm, 1)), acos(min(t_j/norm, 1))]
        out = []
        upper_knots = self.knots[1:] + (math.inf,)
        for lo_t, hi_t, v in zip(self.knots, upper_knots, self.values):
            if lo_t >= norm or v == 0.0:
                continue
            theta_hi = math.acos(lo_t / norm)
            theta_lo = 0.0 if hi_t >= norm else math.acos(hi_t / norm)
            out.append((theta_lo, theta_hi, v))
        return out


WeightFunction = Union[Indicator, Constant, Tabulated]


# ---------------------------------------------------------------------------
# residuals and weights


@dataclass(frozen=True)
class ResidualDecomposition:
    r_parallel: np.ndarray
    r_perpendicular: np.ndarray


@dataclass(frozen=True)
class AnisotropicWeights:
    """Per-datapoint (or shared) parallel/orthogonal loss weights.

    ``h_parallel`` and ``h_perpendicular`` may be scalars or arrays of shape
    ``(n,)``; they broadcast against a batch of datapoints.
    """

    h_parallel: float | np.ndarray
    h_perpendicular: float | np.ndarray

    def __post_init__(self):
        hp = np.asarray(self.h_parallel, dtype=float)
        ho = np.asarray(self.h_perpendicular, dtype=float)
        if np.any(hp < 0) or np.any(ho < 0) or not (np.isfinite(hp).all() and np.isfinite(ho).all()):
            raise ValidationError("anisotropic weights must be finite and non-negative")

    @classmethod
    def from_eta(cls, eta: float) -> "AnisotropicWeights":
        """Shared weights with ``h_perpendicular`` normalized to 1."""
        return cls(float(eta), 1.0)

    @classmethod
    def isotropic(cls) -> "AnisotropicWeights":
        return cls(1.0, 1.0)

    @property
    def eta(self):
        hp = np.asarray(self.h_parallel, dtype=float)
        ho = np.asarray(self.h_perpendicular, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(ho > 0, hp / np.where(ho > 0, ho, 1.0), np.inf)
        return float(out) if out.ndim == 0 else out

    @property
    def is_isotropic(self) -> bool:
        return bool(np.all(np.asarray(self.h_parallel) == np.asarray(self.h_perpendicular)))

    def broadcast(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(h_parallel, h_perpendicular)`` as arrays of length ``n``."""
        hp = np.broadcast_to(np.asarray(self.h_parallel, dtype=float), (n,))
        ho = np.broadcast_to(np.asarray(self.h_perpendicular, dtype=float), (n,))
        return hp, ho

    def take(self, index) -> "AnisotropicWeights":
        """Select the weights of a subset of datapoints."""
        hp, ho = np.asarray(self.h_parallel), np.asarray(self.h_perpendicular)
        return AnisotropicWeights(
            hp if hp.ndim == 0 else hp[index], ho if ho.ndim == 0 else ho[index]
        )


def _check_pair(x, x_quant) -> tuple[np.ndarray, np.ndarray, float]:
    x = np.asarray(x, dtype=float)
    x_quant = np.asarray(x_quant, dtype=float)
    if x.shape != x_quant.shape or x.ndim != 1:
        raise DimensionMismatch(f"shape mismatch: {x.shape} vs {x_quant.shape}")
    sq = float(x @ x)
    if sq == 0.0:
        raise ZeroNormDatapoint("residual decomposition is undefined for a zero datapoint")
    return x, x_quant, sq


def residual_decompose(x, x_quant) -> ResidualDecomposition:
    x, x_quant, sq = _check_pair(x, x_quant)
    r = x - x_quant
    r_par = (float(r @ x) / sq) * x
    return ResidualDecomposition(r_par, r - r_par)


def anisotropic_loss(x, x_quant, weights: AnisotropicWeights) -> float:
    """``h_par * |r_par|^2 + h_perp * |r_perp|^2`` for a single datapoint."""
    parts = residual_decompose(x, x_quant)
    hp, ho = float(weights.h_parallel), float(weights.h_perpendicular)
    return hp * float(parts.r_parallel @ parts.r_parallel) + ho * float(
        parts.r_perpendicular @ parts.r_perpendicular
    )


def anisotropic_loss_batch(X, X_quant, weights: AnisotropicWeights) -> np.ndarray:
    """Row-wise anisotropic loss of ``X_quant`` as a quantization of ``X``."""
    X = np.asarray(X, dtype=float)
    X_quant = np.asarray(X_quant, dtype=float)
    if X.shape != X_quant.shape:
        raise DimensionMismatch(f"shape mismatch: {X.shape} vs {X_quant.shape}")
    sq = np.einsum("ij,ij->i", X, X)
    if np.any(sq == 0):
        raise ZeroNormDatapoint("zero-norm datapoint in batch")
    hp, ho = weights.broadcast(X.shape[0])
    R = X - X_quant
    coef = np.einsum("ij,ij->i", R, X) / sq
    R_par = coef[:, None] * X
    R_perp = R - R_par
    return hp * np.einsum("ij,ij->i", R_par, R_par) + ho * np.einsum("ij,ij->i", R_perp, R_perp)


# ---------------------------------------------------------------------------
# h coefficients by quadrature


def _check_dim(d) -> int:
    if int(d) != d or d < 2:
        raise ValidationError(f"dimension must be an integer >= 2, got {d}")
    return int(d)


def h_coefficients(
    w: WeightFunction, norm: float, d: int, abs_tol: float = 1e-10, max_depth: int = 40
) -> AnisotropicWeights:
    """Compute ``(h_parallel, h_perpendicular)`` by adaptive Simpson quadrature.

    Each constant piece of ``w`` is integrated only over the angular range
    where it is active, so the integrands are smooth.
    """
    d = _check_dim(d)
    if not norm > 0:
        raise ZeroNormDatapoint("norm must be positive")

    def par(theta):
        s = np.sin(theta)
        return np.cos(theta) ** 2 * s ** (d - 2)

    def perp(theta):
        return np.sin(theta) ** d

    h_par = h_perp = 0.0
    for lo, hi, value in w.segments(float(norm)):
        h_par += value * adaptive_simpson(par, lo, hi, abs_tol, max_depth)
        h_perp += value * adaptive_simpson(perp, lo, hi, abs_tol, max_depth)
    return AnisotropicWeights(h_par, h_perp / (d - 1))


def sphere_normalizer(d: int) -> float:
    """``int_0^pi sin^(d-2) t dt``, the normalizer of the polar-angle density."""
    d = _check_dim(d)
    return math.sqrt(math.pi) * math.exp(math.lgamma((d - 1) / 2) - math.lgamma(d / 2))


# ---------------------------------------------------------------------------
# indicator weight: closed recursion

# forward recursion amplifies relative error by about sin(alpha)^-d
_FORWARD_GROWTH_LIMIT = 1e4
_BACKWARD_DAMPING = 1e-17


def _check_threshold(T, norm) -> tuple[np.ndarray, np.ndarray]:
    T = np.asarray(T, dtype=float)
    norm = np.asarray(norm, dtype=float)
    if np.any(norm <= 0):
        raise ZeroNormDatapoint("norm must be positive")
    if np.any(T < 0) or np.any(T >= norm) or not np.isfinite(T).all():
        raise InvalidThreshold("threshold must satisfy 0 <= T < norm")
    return T, norm


def _sine_power_integral(alpha: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(I_d, u_d)`` with ``I_d = int_0^alpha sin^d`` and ``u_d = sin^(d-1)(alpha) / I_d``.

    Uses ``d I_d = (d-1) I_{d-2} - cos(a) sin^(d-1)(a)``. Upward from
    ``I_0 = a``, ``I_1 = 1 - cos a`` the recursion loses about
    ``-d log10(sin a)`` digits, so where that exceeds four digits the ratio
    ``u`` is instead iterated downward from a high starting degree, which
    damps the starting error by ``sin^2(a)`` per step.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    c, s = np.cos(alpha), np.sin(alpha)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        log_s = np.log(s)
        forward = -d * log_s <= math.log(_FORWARD_GROWTH_LIMIT)

        # upward
        I = np.where(d % 2 == 0, alpha, 1.0 - c)
        for j in range(2 + d % 2, d + 1, 2):
            I = ((j - 1) * I - c * s ** (j - 1)) / j
        I_fwd = I
        u_fwd = s ** (d - 1) / I_fwd

        # downward, only needed where the upward pass is ill-conditioned
        u_bwd = np.full_like(alpha, np.nan)
        back = ~forward
        if back.any():
            cb, sb, lsb = c[back], s[back], log_s[back]
            extra = int(np.ceil(math.log(_BACKWARD_DAMPING) / (2 * lsb).min()))
            D = d + 2 * max(extra, 1)
            u = np.maximum((D * cb**2 - 1.0) / (cb * sb**2), 1.0)
            for j in range(D, d, -2):
                R = (j + cb * u) / (j - 1)
                u = u / (sb**2 * R)
            u_bwd[back] = u
            # I from u; sin^(d-1) may underflow only in regimes irrelevant here
            I_bwd = np.exp((d - 1) * lsb) / u
            I = I_fwd.copy()
            I[back] = I_bwd
        else:
            I = I_fwd
        u = np.where(forward, u_fwd, u_bwd)
    return I, u


def eta_exact(T: float, norm: float, d: int) -> float:
    """Exact ``h_par / h_perp`` for the indicator weight ``I(t >= T)``.

    With ``alpha = acos(T / norm)`` this is
    ``(d-1)(I_{d-2}/I_d - 1) = 1 + cos(alpha) sin^(d-1)(alpha) / I_d``.
    """
    d = _check_dim(d)
    T, norm = _check_threshold(T, norm)
    if T == 0:
        return 1.0
    alpha = np.arccos(T / norm)
    _, u = _sine_power_integral(alpha, d)
    return float(1.0 + np.cos(alpha) * u[0])


def eta_limit(T: float, norm: float, d: int) -> float:
    """Large-``d`` proxy ``(d-1) (T/norm)^2 / (1 - (T/norm)^2)``."""
    d = _check_dim(d)
    T, norm = _check_threshold(T, norm)
    ratio = float(T / norm) ** 2
    return (d - 1) * ratio / (1.0 - ratio)


def indicator_weights(T: float, norms, d: int) -> AnisotropicWeights:
    """Per-datapoint weights for ``w = I(t >= T)``, vectorized over ``norms``.

    Uses the same normalization as :func:`h_coefficients`. Datapoints with
    ``norm <= T`` receive zero weight (no query can reach the threshold).
    """
    d = _check_dim(d)
    norms = np.asarray(norms, dtype=float)
    if np.any(norms <= 0):
        raise ZeroNormDatapoint("norms must be positive")
    if T < 0:
        raise InvalidThreshold("threshold must be non-negative")
    active = norms > T
    h_par = np.zeros_like(norms, dtype=float)
    h_perp = np.zeros_like(norms, dtype=float)
    if active.any():
        alpha = np.arccos(T / norms[active])
        I, u = _sine_power_integral(alpha, d)
        eta = 1.0 + np.cos(alpha) * u
        h_perp[active] = I / (d - 1)
        h_par[active] = eta * I / (d - 1)
    if norms.ndim == 0:
        return AnisotropicWeights(float(h_par), float(h_perp))
    return AnisotropicWeights(h_par, h_perp)


# ---------------------------------------------------------------------------
# Monte-Carlo oracle


def monte_carlo_loss(
    x, x_quant, w: WeightFunction, num_samples: int, seed: int, batch_size: int = 100_000
) -> tuple[float, float]:
    """Sample ``E_q[w(<q, x>) <q, x - x_quant>^2]`` with ``q`` uniform on the unit sphere.

    Returns the sample mean and its standard error.
    """
    x, x_quant, _ = _check_pair(x, x_quant)
    if num_samples < 1000:
        raise ValidationError("num_samples must be at least 1000")
    d = x.size
    r = x - x_quant
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    remaining = num_samples
    while remaining > 0:
        m = min(batch_size, remaining)
        q = rng.standard_normal((m, d))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        vals = w(q @ x) * (q @ r) ** 2
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        remaining -= m
    mean = total / num_samples
    var = max(total_sq / num_samples - mean * mean, 0.0)
    return mean, math.sqrt(var * num_samples / (num_samples - 1) / num_samples)
