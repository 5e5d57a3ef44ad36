"""Graph primitives: hop balls, connector selection, overlapping communities."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import DataError, SocialGraph

log = logging.getLogger(__name__)

HUB, RANDOM, RANDOM_HUB, GREEDY = "hub", "random", "random-hub", "greedy"
CONNECTOR_VARIANTS = (HUB, RANDOM, RANDOM_HUB, GREEDY)


def bfs_distances(graph: SocialGraph, center: int, limit: int | None = None) -> dict[int, int]:
    """Hop distance from ``center`` to every reachable user, optionally cut at ``limit``."""
    if not 0 <= center < graph.num_users:
        raise IndexError(f"user {center} out of range [0, {graph.num_users})")
    dist = {center: 0}
    queue = deque([center])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if limit is not None and du >= limit:
            continue
        for v in graph.adjacency[u]:
            if v not in dist:
                dist[v] = du + 1
                queue.append(v)
    return dist


def k_hop_ball(graph: SocialGraph, center: int, d: int) -> set[int]:
    """Users within ``d`` hops of ``center``, the center included."""
    if d < 0:
        raise ValueError("hop count must be >= 0")
    return set(bfs_distances(graph, center, limit=d))


@dataclass(frozen=True)
class ConnectorMethod:
    variant: str = HUB
    q: int = 50
    pool_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.variant not in CONNECTOR_VARIANTS:
            raise ValueError(f"unknown connector method {self.variant!r}; "
                             f"choose from {', '.join(CONNECTOR_VARIANTS)}")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.variant == RANDOM_HUB and self.pool_size < self.q:
            raise ValueError("pool_size must be >= q for random-hub")


def hub_order(graph: SocialGraph) -> list[int]:
    """All users by descending degree, ties by ascending index."""
    deg = graph.degrees()
    return np.lexsort((np.arange(graph.num_users), -deg)).tolist()


def select_connectors(graph: SocialGraph, method: ConnectorMethod, d: int = 3) -> list[int]:
    m, q = graph.num_users, method.q
    if q > m:
        raise ValueError(f"cannot pick {q} connectors from {m} users")
    rng = np.random.default_rng(method.seed)
    if method.variant == HUB:
        return hub_order(graph)[:q]
    if method.variant == RANDOM:
        return rng.choice(m, size=q, replace=False).tolist()
    if method.variant == RANDOM_HUB:
        pool = hub_order(graph)[:min(method.pool_size, m)]
        return [pool[k] for k in rng.choice(len(pool), size=q, replace=False).tolist()]

    order = hub_order(graph)
    covered = np.zeros(m, dtype=bool)
    chosen: list[int] = []
    taken = set()
    for _ in range(q):
        pick = next((u for u in order if not covered[u]), None)
        if pick is None:
            # everyone covered: continue down the hub order
            pick = next(u for u in order if u not in taken)
        chosen.append(pick)
        taken.add(pick)
        covered[list(k_hop_ball(graph, pick, d))] = True
    return chosen


@dataclass
class CommunityCover:
    communities: list  # sorted int arrays, possibly overlapping
    source: str = "detected"

    def __len__(self):
        return len(self.communities)

    def covered_users(self) -> set[int]:
        return set().union(*(set(c.tolist()) for c in self.communities)) if self.communities else set()


def membership_threshold(graph: SocialGraph) -> float:
    m = graph.num_users
    eps = 2 * graph.num_edges / (m * (m - 1)) if m > 1 else 0.0
    # a complete graph has no background edges to rise above
    return float(np.sqrt(-np.log1p(-eps))) if eps < 1 else 0.0


def _seed_nodes(graph: SocialGraph, q: int, rng) -> list[int]:
    # high-degree nodes whose ego-nets do not overlap earlier picks
    covered = np.zeros(graph.num_users, dtype=bool)
    seeds = []
    for u in hub_order(graph):
        if len(seeds) == q:
            break
        if covered[u] or not graph.adjacency[u]:
            continue
        seeds.append(u)
        covered[u] = True
        covered[list(graph.adjacency[u])] = True
    picked = set(seeds)
    rest = [u for u in range(graph.num_users) if u not in picked]
    while len(seeds) < q and rest:
        seeds.append(rest.pop(int(rng.integers(len(rest)))))
    return seeds


def _row_loglik(fu, nbr_F, others):
    x = np.maximum(nbr_F @ fu, 1e-10)
    return float(np.sum(np.log(-np.expm1(-x))) - fu @ others)


def detect_communities(graph: SocialGraph, q: int, seed: int = 0, max_iter: int = 200,
                       tol: float = 1e-5, f_max: float = 1000.0) -> CommunityCover:
    """Overlapping communities from a nonnegative affiliation factorization.

    Fits F (users x q) to maximise
    ``sum_edges log(1 - exp(-F_u.F_v)) - sum_non_edges F_u.F_v`` by projected
    gradient ascent, one user row at a time with backtracking. User ``u`` is
    in community ``c`` when ``F[u, c]`` exceeds the background threshold.
    Empty communities are dropped, so the cover can hold fewer than ``q``.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    m = graph.num_users
    rng = np.random.default_rng(seed)
    F = 0.01 * rng.random((m, q))
    for c, s in enumerate(_seed_nodes(graph, q, rng)):
        F[s, c] = 1.0
        F[list(graph.adjacency[s]), c] = 1.0
    adj = [np.array(a, dtype=np.int64) for a in graph.adjacency]
    total = F.sum(axis=0)

    prev = None
    for it in range(max_iter):
        ll = 0.0
        for u in range(m):
            fu = F[u]
            nbr_F = F[adj[u]]
            others = total - fu - nbr_F.sum(axis=0)
            x = np.maximum(nbr_F @ fu, 1e-10)
            grad = nbr_F.T @ (np.exp(-x) / -np.expm1(-x)) - others
            base = _row_loglik(fu, nbr_F, others)
            new, new_ll = fu, base
            step = 1.0
            for _ in range(12):
                cand = np.clip(fu + step * grad, 0.0, f_max)
                cand_ll = _row_loglik(cand, nbr_F, others)
                if cand_ll > base:
                    new, new_ll = cand, cand_ll
                    break
                step *= 0.5
            total += new - fu
            F[u] = new
            ll += new_ll
        if prev is not None and abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
    log.debug("affiliation fit stopped after %d sweeps", it + 1)

    delta = membership_threshold(graph)
    communities = []
    for c in range(q):
        members = np.flatnonzero(F[:, c] > delta)
        if len(members):
            communities.append(members)
    if len(communities) < q:
        log.info("community detection kept %d of %d communities", len(communities), q)
    return CommunityCover(communities, "detected")


def load_communities(path, user_ids, q: int | None = None) -> CommunityCover:
    """Read ``community_id<TAB>user_id`` lines. Community order follows first appearance."""
    index = {uid: k for k, uid in enumerate(user_ids)}
    groups: dict[str, set[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            f = line.split("\t") if "\t" in line else line.split()
            if len(f) < 2:
                raise DataError(f"{path}:{lineno}: expected community_id and user_id")
            if f[1] not in index:
                raise DataError(f"{path}:{lineno}: unknown user id {f[1]!r}")
            groups.setdefault(f[0], set()).add(index[f[1]])
    communities = [np.array(sorted(g), dtype=np.int64) for g in groups.values()]
    if not communities:
        raise DataError(f"{path}: no communities")
    if q is not None:
        communities = communities[:q]
    return CommunityCover(communities, "loaded")
