# %% [markdown]
# # Product quantization for inner-product search
#
# Train a reconstruction-loss PQ codebook and a score-aware one on the same
# data, then compare retrieval with lookup-table scoring.

# %%
import numpy as np

from anisoquant import (
    TrainConfig,
    adc_search,
    evaluate,
    exact_search,
    generate_synthetic,
    indicator_weights,
    train_apq,
    train_l2_pq,
)

full = generate_synthetic("gaussian_mixture", 10_500, 32, seed=7, centers=512, spread=0.5)
X, Q = full.subset(slice(0, 10_000)), full.subset(slice(10_000, None))
cfg = TrainConfig(seed=7, max_iterations=15)

l2_book, l2 = train_l2_pq(X, 8, 16, cfg)
weights = indicator_weights(0.2, X.norms, X.d)
sa_book, sa = train_apq(X, 8, 16, weights, cfg)
print("eta used:", float(np.atleast_1d(weights.eta)[0]))

# %% [markdown]
# ## One query

# %%
q = Q.values[0]
print("exact top-5:     ", exact_search(q, X, 5).indices)
print("l2 PQ top-5:     ", adc_search(q, l2.assignments, l2_book, 5).indices)
print("score-aware top-5:", adc_search(q, sa.assignments, sa_book, 5).indices)

# %% [markdown]
# ## All held-out queries

# %%
for name, book, codes in (("reconstruction", l2_book, l2.assignments), ("score-aware", sa_book, sa.assignments)):
    rep = evaluate(Q, X, codes, book, Ns=(1, 10, 100))
    print(f"{name:15s} R1@1={rep.recall_1_at_N[1]:.3f} R1@10={rep.recall_1_at_N[10]:.3f} "
          f"R1@100={rep.recall_1_at_N[100]:.3f} mean rel err={rep.relative_error_top1['mean']:.4f}")
