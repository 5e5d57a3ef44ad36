"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy.linalg import null_space

from sloma.data import KERNEL, EnsembleModel, FactorModel, LocalModel, Origin, RatingMatrix
from sloma.factorization import SimilarityMatrix


def conditioned_matrix(rng, K: int, max_cond: float = 1e3) -> np.ndarray:
    """Random K x K matrix with condition number at most ``max_cond``."""
    W1, _ = np.linalg.qr(rng.standard_normal((K, K)))
    W2, _ = np.linalg.qr(rng.standard_normal((K, K)))
    half = 0.5 * np.log10(max_cond)
    s = 10 ** rng.uniform(-half, half, size=K)
    return W1 @ np.diag(s) @ W2.T


def reparametrize(U, V, Q):
    """(UQ, V Q^-T): the transform that keeps U V^T fixed."""
    return U @ Q, V @ np.linalg.inv(Q).T


def masked_residual(ratings: RatingMatrix, U, V) -> np.ndarray:
    """Dense m x n matrix P_Omega(U V^T - O)."""
    R = np.zeros((ratings.num_users, ratings.num_items))
    R[ratings.users, ratings.items] = np.einsum("ij,ij->i", U[ratings.users], V[ratings.items]) \
        - ratings.values
    return R


def stationary_instance(rng, m: int, n: int, K: int):
    """Ratings O and factors (U, V) with nonzero residual satisfying
    U^T P(UV^T - O) = 0 and P(UV^T - O) V = 0.

    The residual is drawn from the null space of those linear constraints
    restricted to the observed cells, so it needs |Omega| > (m + n) K.
    """
    while True:
        U = np.column_stack([np.ones(m), 0.3 * rng.standard_normal((m, K - 1))])
        V = np.column_stack([np.full(n, 3.0), 0.3 * rng.standard_normal((n, K - 1))])
        cells = np.argwhere(rng.random((m, n)) < 0.95)
        if len(cells) <= (m + n) * K + 2:
            continue
        A = np.zeros(((m + n) * K, len(cells)))
        for e, (i, j) in enumerate(cells):
            for k in range(K):
                A[j * K + k, e] = U[i, k]          # (U^T R)_{kj}
                A[n * K + i * K + k, e] = V[j, k]  # (R V)_{ik}
        N = null_space(A)
        if N.shape[1] == 0:
            continue
        r = N @ rng.standard_normal(N.shape[1])
        r *= 0.5 / np.abs(r).max()
        base = np.einsum("ij,ij->i", U[cells[:, 0]], V[cells[:, 1]])
        vals = base - r
        if vals.min() < 1 or vals.max() > 5:
            continue
        ratings = RatingMatrix(m, n, cells[:, 0], cells[:, 1], vals)
        return ratings, U, V


def random_similarity(rng, m: int, p: float = 0.5) -> SimilarityMatrix:
    iu, ju = np.triu_indices(m, k=1)
    keep = rng.random(len(iu)) < p
    return SimilarityMatrix(m, iu[keep], ju[keep], rng.random(keep.sum()))


def brute_uniform(locals_, user, item, fallback):
    preds = []
    for lm in locals_:
        us, its = lm.user_subset.tolist(), lm.item_subset.tolist()
        if user in us and item in its:
            f = lm.factors
            preds.append(f.offset + sum(a * b for a, b in zip(f.U[us.index(user)],
                                                              f.V[its.index(item)])))
    return sum(preds) / len(preds) if preds else fallback


def finite_difference(fun, X: np.ndarray, h: float = 1e-5) -> np.ndarray:
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        old = X[idx]
        X[idx] = old + h
        up = fun()
        X[idx] = old - h
        down = fun()
        X[idx] = old
        G[idx] = (up - down) / (2 * h)
    return G


def model(U, V) -> FactorModel:
    return FactorModel(np.array(U, float), np.array(V, float))


def kernel_fixture():
    """Three anchors whose distances to (user 0, item 0) are exactly 0 or pi/2.

    With h = pi each factor's kernel is 1 at distance 0 and 1 - (1/2)^2 = 0.75
    at pi/2, so the weights are 1, 0.75 and 0.5625.
    """
    A = FactorModel(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    anchors = [(0, 0), (1, 0), (1, 1)]
    preds = [2.0, 4.0, 3.0]
    locals_ = [LocalModel([0, 1], [0, 1], [], Origin("anchor", user=u, item=i),
                          FactorModel(np.array([[p], [1.0]]), np.array([[1.0], [1.0]])))
               for (u, i), p in zip(anchors, preds)]
    return EnsembleModel(locals_, 2, 2, 3.0, KERNEL, bandwidth=math.pi, anchor_factors=A)
