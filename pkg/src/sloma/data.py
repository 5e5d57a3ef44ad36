"""Core domain types: sparse ratings, social graph, latent factors, model containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

RATING_MIN = 1.0
RATING_MAX = 5.0


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _csr_index(keys: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Group entry positions by key. Returns (indptr, order) so that
    ``order[indptr[k]:indptr[k + 1]]`` are the entries with key ``k``."""
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=size)
    indptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order.astype(np.int64)


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Observed ratings in coordinate form with per-user / per-item indexes.

    ``users``, ``items`` and ``values`` are parallel arrays; position ``e`` in
    them is the entry id used everywhere else (``LocalModel.entry_subset``).
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()
    _user_indptr: np.ndarray = field(init=False, repr=False)
    _user_order: np.ndarray = field(init=False, repr=False)
    _item_indptr: np.ndarray = field(init=False, repr=False)
    _item_order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if not (users.shape == items.shape == values.shape) or users.ndim != 1:
            raise DataError("users, items and values must be 1-d arrays of equal length")
        if len(users):
            if users.min() < 0 or users.max() >= self.num_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise DataError("item index out of range")
            if not np.all(np.isfinite(values)):
                raise DataError("ratings must be finite")
            if values.min() < RATING_MIN or values.max() > RATING_MAX:
                raise DataError(f"ratings must lie in [{RATING_MIN:g}, {RATING_MAX:g}]")
            keys = users * self.num_items + items
            if len(np.unique(keys)) != len(keys):
                raise DataError("duplicate (user, item) pair")
        for arr in (users, items, values):
            arr.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "values", values)
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(u) for u in range(self.num_users)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i) for i in range(self.num_items)))
        if len(self.user_ids) != self.num_users or len(self.item_ids) != self.num_items:
            raise DataError("id maps must have one entry per index")
        up, uo = _csr_index(users, self.num_users)
        ip, io = _csr_index(items, self.num_items)
        object.__setattr__(self, "_user_indptr", up)
        object.__setattr__(self, "_user_order", uo)
        object.__setattr__(self, "_item_indptr", ip)
        object.__setattr__(self, "_item_order", io)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def density(self) -> float:
        return len(self) / (self.num_users * self.num_items)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def entries(self) -> Iterator[tuple[int, int, float]]:
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.values.tolist()):
            yield u, i, r

    def user_entries(self, user: int) -> np.ndarray:
        """Entry ids of the ratings given by ``user``."""
        return self._user_order[self._user_indptr[user]:self._user_indptr[user + 1]]

    def item_entries(self, item: int) -> np.ndarray:
        return self._item_order[self._item_indptr[item]:self._item_indptr[item + 1]]

    def user_counts(self) -> np.ndarray:
        return np.diff(self._user_indptr)

    def item_counts(self) -> np.ndarray:
        return np.diff(self._item_indptr)

    def subset(self, entry_ids: np.ndarray) -> "RatingMatrix":
        """Same index space, restricted to the given entries."""
        entry_ids = np.asarray(entry_ids, dtype=np.int64)
        return RatingMatrix(self.num_users, self.num_items, self.users[entry_ids],
                            self.items[entry_ids], self.values[entry_ids],
                            self.user_ids, self.item_ids)

    def user_index(self) -> dict:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    def item_index(self) -> dict:
        return {iid: k for k, iid in enumerate(self.item_ids)}


class SocialGraph:
    """Undirected, unweighted friendship graph over the rating matrix's user indexes."""

    def __init__(self, num_users: int, edges: Sequence[tuple[int, int]] | np.ndarray = ()):
        self.num_users = int(num_users)
        pairs = set()
        for a, b in (tuple(map(int, e)) for e in edges):
            if a == b:
                raise DataError(f"self-loop on user {a}")
            if not (0 <= a < num_users and 0 <= b < num_users):
                raise DataError(f"edge ({a}, {b}) out of range")
            pairs.add((a, b) if a < b else (b, a))
        self._edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        nbrs: list[list[int]] = [[] for _ in range(self.num_users)]
        for a, b in self._edges.tolist():
            nbrs[a].append(b)
            nbrs[b].append(a)
        self.adjacency: tuple[tuple[int, ...], ...] = tuple(tuple(sorted(n)) for n in nbrs)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with ``a < b``, sorted."""
        return self._edges

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def density(self) -> float:
        return 2 * self.num_edges / self.num_users ** 2

    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=np.int64)

    def neighbors(self, user: int) -> tuple[int, ...]:
        return self.adjacency[user]

    def induced(self, members: np.ndarray) -> "SocialGraph":
        """Subgraph on ``members`` (sorted global indexes), relabelled 0..len-1."""
        members = np.asarray(members, dtype=np.int64)
        local = np.full(self.num_users, -1, dtype=np.int64)
        local[members] = np.arange(len(members))
        if not len(self._edges):
            return SocialGraph(len(members))
        a, b = local[self._edges[:, 0]], local[self._edges[:, 1]]
        keep = (a >= 0) & (b >= 0)
        return SocialGraph(len(members), np.stack([a[keep], b[keep]], axis=1))

    def __repr__(self):
        return f"SocialGraph(num_users={self.num_users}, num_edges={self.num_edges})"


@dataclass
class FactorModel:
    """Latent user factors ``U`` (m x K) and item factors ``V`` (n x K).

    ``offset`` is a constant added to every prediction (the training mean
    when fitted on centered ratings, otherwise 0).
    """

    U: np.ndarray
    V: np.ndarray
    lam: float = 0.0
    beta: float = 0.0
    objective: float = float("nan")
    epochs: int = 0
    offset: float = 0.0

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError("U and V must be 2-d with the same number of columns")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))):
            raise ValueError("factor matrices must be finite")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def predict(self, user: int, item: int) -> float:
        return self.offset + float(self.U[user] @ self.V[item])

    def predict_many(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return self.offset + np.einsum("ij,ij->i", self.U[users], self.V[items])


@dataclass(frozen=True)
class Origin:
    """Where a local model came from: ``kind`` is anchor, connector or community."""

    kind: str
    user: int = -1
    item: int = -1
    community: int = -1


@dataclass
class LocalModel:
    """One submatrix: its global user/item sets, the entries inside it, and
    factors over the locally re-indexed users and items.

    ``user_subset`` and ``item_subset`` are stored sorted; local index ``k``
    corresponds to ``user_subset[k]``. Factor rows given alongside unsorted
    subsets are permuted to match.
    """

    user_subset: np.ndarray
    item_subset: np.ndarray
    entry_subset: np.ndarray
    origin: Origin
    factors: Optional[FactorModel] = None

    def __post_init__(self):
        users = np.asarray(self.user_subset, dtype=np.int64)
        items = np.asarray(self.item_subset, dtype=np.int64)
        if len(np.unique(users)) != len(users) or len(np.unique(items)) != len(items):
            raise ValueError("user_subset and item_subset must not repeat indexes")
        pu, pi = np.argsort(users, kind="stable"), np.argsort(items, kind="stable")
        self.user_subset, self.item_subset = users[pu], items[pi]
        self.entry_subset = np.sort(np.asarray(self.entry_subset, dtype=np.int64))
        f = self.factors
        if f is not None:
            if f.U.shape[0] != len(users) or f.V.shape[0] != len(items):
                raise ValueError("factor shapes do not match the subsets")
            f.U, f.V = f.U[pu], f.V[pi]

    def local_user(self, user: int) -> int:
        """Local index of a global user, or -1."""
        k = np.searchsorted(self.user_subset, user)
        return int(k) if k < len(self.user_subset) and self.user_subset[k] == user else -1

    def local_item(self, item: int) -> int:
        k = np.searchsorted(self.item_subset, item)
        return int(k) if k < len(self.item_subset) and self.item_subset[k] == item else -1

    def local_maps(self, num_users: int, num_items: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense global-to-local lookup arrays (-1 where absent)."""
        umap = np.full(num_users, -1, dtype=np.int64)
        umap[self.user_subset] = np.arange(len(self.user_subset))
        imap = np.full(num_items, -1, dtype=np.int64)
        imap[self.item_subset] = np.arange(len(self.item_subset))
        return umap, imap

    def local_ratings(self, ratings: RatingMatrix) -> RatingMatrix:
        """The submatrix as its own RatingMatrix in local indexes."""
        umap, imap = self.local_maps(ratings.num_users, ratings.num_items)
        e = self.entry_subset
        return RatingMatrix(len(self.user_subset), len(self.item_subset),
                            umap[ratings.users[e]], imap[ratings.items[e]], ratings.values[e])

    @property
    def size(self) -> tuple[int, int, int]:
        return len(self.user_subset), len(self.item_subset), len(self.entry_subset)


def predict_local(model: LocalModel, user: int, item: int) -> Optional[float]:
    """Local prediction ``u_user . v_item``, or None when the pair is outside the submatrix."""
    lu, li = model.local_user(user), model.local_item(item)
    if lu < 0 or li < 0:
        return None
    return model.factors.offset + float(model.factors.U[lu] @ model.factors.V[li])


UNIFORM = "uniform_average"
KERNEL = "kernel_weighted"


def epanechnikov(x: np.ndarray, h: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - (np.asarray(x) / h) ** 2)


def arc_distances(X: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Arc-cosine distance from ``x`` to every row of ``X``; zero rows get pi."""
    nx = np.linalg.norm(x)
    nX = np.linalg.norm(X, axis=1)
    out = np.full(len(X), np.pi)
    if nx == 0:
        return out
    ok = nX > 0
    cos = (X[ok] @ x) / (nX[ok] * nx)
    out[ok] = np.arccos(np.clip(cos, -1.0, 1.0))
    return out


@dataclass
class EnsembleModel:
    """A set of trained local models with a combination rule and a global-mean fallback."""

    locals: list
    num_users: int
    num_items: int
    global_mean: float
    combine_rule: str = UNIFORM
    bandwidth: float = 0.8
    anchor_factors: Optional[FactorModel] = None

    def __post_init__(self):
        if not self.locals:
            raise ValueError("an ensemble needs at least one local model")
        if self.combine_rule not in (UNIFORM, KERNEL):
            raise ValueError(f"unknown combine rule {self.combine_rule!r}")
        if self.combine_rule == KERNEL and self.anchor_factors is None:
            raise ValueError("kernel weighting needs anchor_factors")

    def _weights(self, lm: LocalModel, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        if self.combine_rule == UNIFORM:
            return np.ones(len(users))
        A = self.anchor_factors
        du = arc_distances(A.U[users], A.U[lm.origin.user])
        dv = arc_distances(A.V[items], A.V[lm.origin.item])
        return epanechnikov(du, self.bandwidth) * epanechnikov(dv, self.bandwidth)

    def predict(self, users, items) -> tuple[np.ndarray, np.ndarray]:
        """Predictions for parallel index arrays, plus a mask of pairs that
        fell back to the global mean."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        num = np.zeros(len(users))
        den = np.zeros(len(users))
        for lm in self.locals:
            umap, imap = lm.local_maps(self.num_users, self.num_items)
            lu, li = umap[users], imap[items]
            hit = np.flatnonzero((lu >= 0) & (li >= 0))
            if not len(hit):
                continue
            w = self._weights(lm, users[hit], items[hit])
            p = lm.factors.offset + np.einsum("ij,ij->i", lm.factors.U[lu[hit]],
                                              lm.factors.V[li[hit]])
            num[hit] += w * p
            den[hit] += w
        fallback = den <= 0
        out = np.where(fallback, self.global_mean, num / np.where(fallback, 1.0, den))
        return out, fallback

    def predict_one(self, user: int, item: int) -> float:
        return float(self.predict([user], [item])[0][0])
