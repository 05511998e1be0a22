# %% [markdown]
# # Score-aware loss geometry
#
# A quantized datapoint ``x_q`` leaves a residual ``x - x_q``. For inner
# product search only some of that residual matters: the part along ``x``
# shifts the scores of the queries that rank ``x`` highly, the orthogonal part
# mostly does not. This script splits a residual, computes the two weights
# from a threshold on the score, and checks them against sampling.

# %%
import numpy as np

from anisoquant import (
    AnisotropicWeights,
    Indicator,
    anisotropic_loss,
    eta_exact,
    eta_limit,
    h_coefficients,
    monte_carlo_loss,
    residual_decompose,
)
from anisoquant.geometry import sphere_normalizer

rng = np.random.default_rng(0)
d = 16
x = rng.standard_normal(d)
x /= np.linalg.norm(x)
x_q = x + 0.3 * rng.standard_normal(d) / np.sqrt(d)

parts = residual_decompose(x, x_q)
print("|r_par|^2  =", parts.r_parallel @ parts.r_parallel)
print("|r_perp|^2 =", parts.r_perpendicular @ parts.r_perpendicular)

# %% [markdown]
# ## Weights for a score threshold
#
# Counting only queries with ``<q, x> >= T`` gives weights with
# ``h_par >= h_perp``. Their ratio ``eta`` grows with dimension.

# %%
w = Indicator(0.2)
h = h_coefficients(w, 1.0, d)
print(f"h_par = {h.h_parallel:.6g}, h_perp = {h.h_perpendicular:.6g}, eta = {h.eta:.4f}")
print(f"closed form eta = {eta_exact(0.2, 1.0, d):.4f}")

for dim in (8, 32, 100, 512):
    print(f"d={dim:4d}  eta_exact={eta_exact(0.2, 1.0, dim):9.4f}  eta_limit={eta_limit(0.2, 1.0, dim):9.4f}")

# %% [markdown]
# ## Sampling check
#
# The expected weighted squared score error over uniform unit queries is the
# weighted loss divided by the normalizer of the polar-angle density.

# %%
mean, se = monte_carlo_loss(x, x_q, w, 400_000, seed=1)
analytic = anisotropic_loss(x, x_q, h) / sphere_normalizer(d)
print(f"Monte-Carlo {mean:.6e} +/- {se:.1e}, analytic {analytic:.6e}")
print("plain squared error would weight both parts equally:",
      anisotropic_loss(x, x_q, AnisotropicWeights.isotropic()))
