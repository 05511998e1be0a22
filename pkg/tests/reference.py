"""Textbook reference implementations used as oracles by the tests."""

import numpy as np


def lloyd(X, k, seed, max_iterations, tol=1e-6):
    """Plain k-means with the same initialization, schedule and stopping rule."""
    n = X.shape[0]
    C = X[np.random.default_rng(seed).choice(n, size=k, replace=False)].copy()

    def nearest(C):
        return np.argmin(np.sum((X[:, None, :] - C[None]) ** 2, axis=-1), axis=1)

    codes = nearest(C)
    history = []
    for _ in range(max_iterations):
        counts = np.bincount(codes, minlength=k)
        for j in range(k):
            if counts[j]:
                C[j] = X[codes == j].mean(axis=0)
        per_point = np.einsum("ij,ij->i", X - C[codes], X - C[codes])
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            worst = np.argsort(-per_point, kind="stable")[: empty.size]
            C[empty[: worst.size]] = X[worst]
        history.append(float(per_point.sum()))
        new = nearest(C)
        if np.array_equal(new, codes):
            break
        codes = new
        if len(history) >= 2 and history[-2] > 0 and (history[-2] - history[-1]) / history[-2] < tol:
            break
    return C, codes, history


def classical_pq(X, M, k, seed, max_iterations, tol=1e-6):
    """Independent k-means per subspace in lockstep, sharing one initial sample."""
    n, d = X.shape
    s = d // M
    init = np.random.default_rng(seed).choice(n, size=k, replace=False)
    D = np.stack([X[init, m * s : (m + 1) * s] for m in range(M)]).copy()

    def nearest(D):
        return np.stack(
            [np.argmin(np.sum((X[:, None, m * s : (m + 1) * s] - D[m][None]) ** 2, axis=-1), axis=1) for m in range(M)],
            axis=1,
        )

    codes = nearest(D)
    history = []
    for _ in range(max_iterations):
        unused = []
        for m in range(M):
            counts = np.bincount(codes[:, m], minlength=k)
            for j in range(k):
                if counts[j]:
                    D[m, j] = X[codes[:, m] == j, m * s : (m + 1) * s].mean(axis=0)
                else:
                    unused.append((m, j))
        recon = np.concatenate([D[m][codes[:, m]] for m in range(M)], axis=1)
        per_point = np.einsum("ij,ij->i", X - recon, X - recon)
        order = np.argsort(-per_point, kind="stable")
        for m in range(M):
            js = [j for mm, j in unused if mm == m]
            for donor, j in zip(order, js):
                D[m, j] = X[donor, m * s : (m + 1) * s]
        history.append(float(per_point.sum()))
        new = nearest(D)
        if np.array_equal(new, codes):
            break
        codes = new
        if len(history) >= 2 and history[-2] > 0 and (history[-2] - history[-1]) / history[-2] < tol:
            break
    return D, codes, history


def aniso_objective(c, X, hp, ho):
    """Summed anisotropic loss of quantizing every row of X to the single vector c."""
    R = X - c
    sq = np.einsum("ij,ij->i", X, X)
    par = np.einsum("ij,ij->i", R, X) ** 2 / sq
    return float(np.sum(ho * (np.einsum("ij,ij->i", R, R) - par) + hp * par))
