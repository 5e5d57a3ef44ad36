"""Rank-K factor models trained by SGD: plain MF, RegSVD (L2) and social regularization.

The objective for all three is

    0.5 * sum_(i,j in Omega) (O_ij - u_i.v_j)^2
    + lam/2 * (||U||^2 + ||V||^2)
    + beta/2 * sum_i sum_(j in F(i)) S_ij ||u_i - u_j||^2

with the social sum taken over both orientations of every edge, i.e. it
equals ``beta * sum_(edges) S_ij ||u_i - u_j||^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numba
import numpy as np
import scipy.sparse as sp

from .data import FactorModel, RatingMatrix, SocialGraph


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, learning_rate: float, value: float, context: str = ""):
        self.epoch, self.learning_rate, self.value = epoch, learning_rate, value
        where = f" ({context})" if context else ""
        super().__init__(f"training diverged at epoch {epoch} with learning rate "
                         f"{learning_rate:g}: objective {value:g}{where}")


@dataclass(frozen=True)
class TrainConfig:
    rank: int = 10
    lam: float = 0.05
    beta: float = 0.0
    learning_rate: float = 0.01
    max_epochs: int = 100
    init_scale: Optional[float] = None  # None -> 0.1 / sqrt(rank)
    seed: int = 0
    convergence_tol: float = 1e-5
    lr_decay: float = 0.95
    divergence_factor: float = 1e3
    center: bool = False  # fit O - mean(O) and add the mean back at prediction

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be >= 0")
        if self.learning_rate <= 0 or self.max_epochs < 1:
            raise ValueError("learning_rate and max_epochs must be positive")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ValueError("init_scale must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")

    @property
    def sigma_init(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.1 / math.sqrt(self.rank)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


class SimilarityMatrix:
    """Symmetric sparse user-user similarities in [0, 1], supported on social edges.

    Stored once per undirected pair (``rows < cols``).
    """

    def __init__(self, num_users: int, rows, cols, vals):
        rows, cols, vals = (np.asarray(a) for a in (rows, cols, vals))
        if len(vals) and (vals.min() < 0 or vals.max() > 1):
            raise ValueError("similarities must lie in [0, 1]")
        if np.any(rows >= cols):
            raise ValueError("store each pair once with row < col")
        self.num_users = num_users
        self.rows = rows.astype(np.int64)
        self.cols = cols.astype(np.int64)
        self.vals = vals.astype(np.float64)
        self._lookup = {(a, b): v for a, b, v in zip(self.rows.tolist(), self.cols.tolist(),
                                                      self.vals.tolist())}

    def __len__(self):
        return len(self.vals)

    def get(self, i: int, j: int) -> float:
        return self._lookup.get((i, j) if i < j else (j, i), 0.0)

    def to_sparse(self) -> sp.csr_matrix:
        n = self.num_users
        S = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(n, n))
        return (S + S.T).tocsr()

    def laplacian(self) -> sp.csr_matrix:
        S = self.to_sparse()
        return (sp.diags(np.asarray(S.sum(axis=1)).ravel()) - S).tocsr()

    @classmethod
    def zeros(cls, num_users: int) -> "SimilarityMatrix":
        e = np.zeros(0, dtype=np.int64)
        return cls(num_users, e, e, np.zeros(0))


def pcc_similarity(ratings: RatingMatrix, graph: SocialGraph) -> SimilarityMatrix:
    """Pearson correlation over co-rated items for each social edge, mapped by (x+1)/2.

    Each user's mean is over all of their ratings in ``ratings``. Pairs with
    fewer than two co-rated items or a zero centered norm get similarity 0.
    """
    counts = ratings.user_counts()
    sums = np.bincount(ratings.users, weights=ratings.values, minlength=ratings.num_users)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    centered = [dict(zip(ratings.items[e].tolist(), (ratings.values[e] - means[u]).tolist()))
                for u in range(ratings.num_users) for e in [ratings.user_entries(u)]]
    rows, cols, vals = [], [], []
    for i, j in graph.edges.tolist():
        a, b = centered[i], centered[j]
        if len(a) > len(b):
            a, b = b, a
        common = [f for f in a if f in b]
        s = 0.0
        if len(common) >= 2:
            x = np.array([centered[i][f] for f in common])
            y = np.array([centered[j][f] for f in common])
            nx, ny = math.sqrt(x @ x), math.sqrt(y @ y)
            if nx > 0 and ny > 0:
                pcc = min(1.0, max(-1.0, float(x @ y) / (nx * ny)))
                s = 0.5 * (pcc + 1.0)
        rows.append(i)
        cols.append(j)
        vals.append(s)
    return SimilarityMatrix(ratings.num_users, rows, cols, vals)


def _residuals(ratings: RatingMatrix, U, V, offset: float = 0.0) -> np.ndarray:
    return np.einsum("ij,ij->i", U[ratings.users], V[ratings.items]) - (ratings.values - offset)


def objective(ratings: RatingMatrix, model: FactorModel, sim: Optional[SimilarityMatrix] = None,
              lam: float = 0.0, beta: float = 0.0) -> float:
    U, V = model.U, model.V
    # overflow shows up as inf/nan, which the trainer reports as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        r = _residuals(ratings, U, V, model.offset)
        val = 0.5 * float(r @ r) + 0.5 * lam * (float(np.sum(U * U)) + float(np.sum(V * V)))
        if beta and sim is not None and len(sim):
            diff = U[sim.rows] - U[sim.cols]
            val += beta * float(sim.vals @ np.einsum("ij,ij->i", diff, diff))
    return val


def gradient(ratings: RatingMatrix, model: FactorModel, sim: Optional[SimilarityMatrix] = None,
             lam: float = 0.0, beta: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    U, V = model.U, model.V
    r = _residuals(ratings, U, V, model.offset)
    R = sp.csr_matrix((r, (ratings.users, ratings.items)), shape=(len(U), len(V)))
    dU = R @ V + lam * U
    dV = R.T @ U + lam * V
    if beta and sim is not None and len(sim):
        dU = dU + 2.0 * beta * (sim.laplacian() @ U)
    return np.asarray(dU), np.asarray(dV)


@numba.njit(cache=True, nogil=True)
def _sgd_sweep(users, items, values, order, U, V, lr, lam_u, lam_v):
    K = U.shape[1]
    for t in range(order.shape[0]):
        e = order[t]
        i = users[e]
        j = items[e]
        pred = 0.0
        for k in range(K):
            pred += U[i, k] * V[j, k]
        err = values[e] - pred
        for k in range(K):
            uik = U[i, k]
            vjk = V[j, k]
            U[i, k] = uik + lr * (err * vjk - lam_u[i] * uik)
            V[j, k] = vjk + lr * (err * uik - lam_v[j] * vjk)


def train(ratings: RatingMatrix, graph: Optional[SocialGraph] = None,
          sim: Optional[SimilarityMatrix] = None, config: TrainConfig = TrainConfig(),
          init: Optional[tuple[np.ndarray, np.ndarray]] = None, context: str = "",
          history: Optional[list] = None) -> FactorModel:
    """Fit U, V by SGD over shuffled ratings.

    Per-rating L2 shrinkage is scaled by 1/count so one sweep applies the full
    L2 gradient once; users or items without ratings, and the social term,
    are handled in a batch step after each sweep.
    """
    if len(ratings) == 0:
        raise ValueError("cannot train on an empty rating matrix")
    beta = config.beta
    if beta > 0 and sim is None:
        if graph is None:
            raise ValueError("beta > 0 needs a social graph or a similarity matrix")
        sim = pcc_similarity(ratings, graph)
    rng = np.random.default_rng(config.seed)
    m, n, K = ratings.num_users, ratings.num_items, config.rank
    if init is not None:
        U, V = (np.array(a, dtype=np.float64, order="C") for a in init)
    else:
        U = config.sigma_init * rng.standard_normal((m, K))
        V = config.sigma_init * rng.standard_normal((n, K))

    cu, cv = ratings.user_counts(), ratings.item_counts()
    lam = config.lam
    lam_u = np.where(cu > 0, lam / np.maximum(cu, 1), 0.0)
    lam_v = np.where(cv > 0, lam / np.maximum(cv, 1), 0.0)
    idle_u, idle_v = np.flatnonzero(cu == 0), np.flatnonzero(cv == 0)
    L = sim.laplacian() if beta > 0 and sim is not None and len(sim) else None

    offset = ratings.mean if config.center else 0.0
    users, items = ratings.users, ratings.items
    values = ratings.values - offset
    model = FactorModel(U, V, lam, beta, offset=offset)
    start = prev = objective(ratings, model, sim, lam, beta)
    if history is not None:
        history.append(start)
    lr = config.learning_rate
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(values))
        _sgd_sweep(users, items, values, order, U, V, lr, lam_u, lam_v)
        if L is not None:
            U -= lr * 2.0 * beta * (L @ U)
        if lam and len(idle_u):
            U[idle_u] *= 1.0 - lr * lam
        if lam and len(idle_v):
            V[idle_v] *= 1.0 - lr * lam
        cur = objective(ratings, model, sim, lam, beta)
        if history is not None:
            history.append(cur)
        if not math.isfinite(cur) or cur > config.divergence_factor * max(start, 1e-12):
            raise TrainingDiverged(epoch, lr, cur, context)
        # absolute change: an early uptick must not end training
        done = cur == 0 or (prev > 0 and abs(prev - cur) / prev < config.convergence_tol)
        prev = cur
        if done:
            break
        lr *= config.lr_decay
    model.objective = prev
    model.epochs = epoch
    return model


def rmse_on(ratings: RatingMatrix, model: FactorModel) -> float:
    r = _residuals(ratings, model.U, model.V, model.offset)
    return math.sqrt(float(r @ r) / len(r))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_factor_model(path, model: FactorModel, config: Optional[TrainConfig] = None) -> None:
    """TSV dump: header rows, then one ``U``/``V`` row per user/item at 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"K\t{model.rank}\nm\t{len(model.U)}\nn\t{len(model.V)}\n")
        fh.write(f"lam\t{_fmt(model.lam)}\nbeta\t{_fmt(model.beta)}\n")
        fh.write(f"objective\t{_fmt(model.objective)}\nepochs\t{model.epochs}\n")
        fh.write(f"offset\t{_fmt(model.offset)}\n")
        if config is not None:
            fh.write(f"config\t{json.dumps(asdict(config), sort_keys=True)}\n")
        for tag, M in (("U", model.U), ("V", model.V)):
            for row in M:
                fh.write(tag + "\t" + "\t".join(_fmt(x) for x in row) + "\n")


def load_factor_model(path) -> tuple[FactorModel, Optional[TrainConfig]]:
    head: dict[str, str] = {}
    rows: dict[str, list] = {"U": [], "V": []}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tag, _, rest = line.rstrip("\n").partition("\t")
            if tag in rows:
                rows[tag].append([float(x) for x in rest.split("\t")] if rest else [])
            else:
                head[tag] = rest
    K, m, n = int(head["K"]), int(head["m"]), int(head["n"])
    U = np.array(rows["U"], dtype=np.float64).reshape(m, K)
    V = np.array(rows["V"], dtype=np.float64).reshape(n, K)
    model = FactorModel(U, V, float(head["lam"]), float(head["beta"]),
                        float(head["objective"]), int(head["epochs"]),
                        float(head.get("offset", 0.0)))
    config = TrainConfig(**json.loads(head["config"])) if "config" in head else None
    return model, config
