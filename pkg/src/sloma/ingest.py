"""Rating / edge file parsing, planted-group synthetic data, seeded splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import RATING_MAX, RATING_MIN, DataError, RatingMatrix, SocialGraph

log = logging.getLogger(__name__)


def _fields(line: str) -> list[str]:
    if "\t" in line:
        return [f.strip() for f in line.split("\t")]
    if "," in line:
        return [f.strip() for f in line.split(",")]
    return line.split()


def _records(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, _fields(line)


def load_ratings(path) -> RatingMatrix:
    """Parse ``user<TAB>item<TAB>rating`` lines (comma- or space-separated also accepted)."""
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    seen: dict[tuple[int, int], int] = {}
    us, its, vs = [], [], []
    for lineno, f in _records(path):
        if len(f) < 3:
            raise DataError(f"{path}:{lineno}: expected user, item, rating")
        try:
            r = float(f[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: rating {f[2]!r} is not a number") from None
        if not (RATING_MIN <= r <= RATING_MAX):
            raise DataError(f"{path}:{lineno}: rating {r:g} out of range [1, 5]")
        u = user_ids.setdefault(f[0], len(user_ids))
        i = item_ids.setdefault(f[1], len(item_ids))
        if (u, i) in seen:
            raise DataError(f"{path}:{lineno}: duplicate pair ({f[0]}, {f[1]}), "
                            f"first seen on line {seen[(u, i)]}")
        seen[(u, i)] = lineno
        us.append(u)
        its.append(i)
        vs.append(r)
    return RatingMatrix(len(user_ids), len(item_ids), np.array(us, dtype=np.int64),
                        np.array(its, dtype=np.int64), np.array(vs, dtype=np.float64),
                        tuple(user_ids), tuple(item_ids))


def load_edges(path, ratings_or_ids) -> SocialGraph:
    """Parse ``user<TAB>user`` lines against the rating matrix's user ids.

    ``ratings_or_ids`` is a RatingMatrix or a sequence of external user ids.
    Reversed and repeated edges collapse to one undirected edge.
    """
    ids = ratings_or_ids.user_ids if isinstance(ratings_or_ids, RatingMatrix) else tuple(ratings_or_ids)
    index = {uid: k for k, uid in enumerate(ids)}
    edges = []
    for lineno, f in _records(path):
        if len(f) < 2:
            raise DataError(f"{path}:{lineno}: expected two user ids")
        try:
            a, b = index[f[0]], index[f[1]]
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: unknown user id {exc.args[0]!r}") from None
        if a == b:
            raise DataError(f"{path}:{lineno}: self-loop on user {f[0]!r}")
        edges.append((a, b))
    return SocialGraph(len(ids), edges)


def write_ratings(path, ratings: RatingMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r in ratings.entries():
            fh.write(f"{ratings.user_ids[u]}\t{ratings.item_ids[i]}\t{r!r}\n")


def write_test(path, test, user_ids, item_ids) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r in test:
            fh.write(f"{user_ids[u]}\t{item_ids[i]}\t{r!r}\n")


def load_test(path, ratings: RatingMatrix) -> list[tuple[int, int, float]]:
    """Test triples in the index space of ``ratings``; unseen users/items get -1."""
    uix, iix = ratings.user_index(), ratings.item_index()
    out = []
    for lineno, f in _records(path):
        if len(f) < 3:
            raise DataError(f"{path}:{lineno}: expected user, item, rating")
        out.append((uix.get(f[0], -1), iix.get(f[1], -1), float(f[2])))
    return out


def write_edges(path, graph: SocialGraph, user_ids) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in graph.edges.tolist():
            fh.write(f"{user_ids[a]}\t{user_ids[b]}\n")


def filter_cold_start(ratings: RatingMatrix, graph: SocialGraph, min_ratings: int = 5):
    """Drop users with no friends or fewer than ``min_ratings`` ratings.

    One pass, as a preprocessing step; returns re-indexed (ratings, graph).
    Items left without ratings are dropped too.
    """
    keep_user = (ratings.user_counts() >= min_ratings) & (graph.degrees() > 0)
    entry_keep = keep_user[ratings.users]
    kept_users = np.flatnonzero(keep_user)
    kept_items = np.unique(ratings.items[entry_keep])
    umap = np.full(ratings.num_users, -1, dtype=np.int64)
    umap[kept_users] = np.arange(len(kept_users))
    imap = np.full(ratings.num_items, -1, dtype=np.int64)
    imap[kept_items] = np.arange(len(kept_items))
    new = RatingMatrix(len(kept_users), len(kept_items), umap[ratings.users[entry_keep]],
                       imap[ratings.items[entry_keep]], ratings.values[entry_keep],
                       tuple(ratings.user_ids[u] for u in kept_users),
                       tuple(ratings.item_ids[i] for i in kept_items))
    e = graph.edges
    a, b = umap[e[:, 0]], umap[e[:, 1]]
    ok = (a >= 0) & (b >= 0)
    return new, SocialGraph(len(kept_users), np.stack([a[ok], b[ok]], axis=1))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    repeats: int = 5

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def train_size(n: int, fraction: float) -> int:
    # Python's round() is round-half-to-even
    return int(round(fraction * n))


def split(ratings: RatingMatrix, spec: SplitSpec):
    """Random entry-level split. Returns (train RatingMatrix, test triples).

    The train matrix keeps the full user/item index space, so test users
    without training ratings stay addressable (they fall back at predict time).
    """
    n = len(ratings)
    if n < 5:
        raise DataError(f"need at least 5 ratings to split, got {n}")
    k = train_size(n, spec.train_fraction)
    if k == 0 or k == n:
        raise DataError(f"split of {n} ratings at {spec.train_fraction} leaves one side empty")
    perm = np.random.default_rng(spec.seed).permutation(n)
    train_ids = np.sort(perm[:k])
    test_ids = np.sort(perm[k:])
    test = list(zip(ratings.users[test_ids].tolist(), ratings.items[test_ids].tolist(),
                    ratings.values[test_ids].tolist()))
    return ratings.subset(train_ids), test


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-group benchmark: each user group has its own rank-``true_rank``
    preference structure over all items, and friendships follow a planted
    partition (``p_in`` within a group, ``p_out`` across groups).

    ``user_spread`` scales how far users stray from their group centroid in
    latent space; small values make friends similar. Each noiseless block is
    shifted to mean 3 with standard deviation ``rating_sd``; only the observed
    (noisy) ratings are clipped into [1, 5], so ``GroundTruth.values`` keeps
    exact rank.

    ``density`` is the observed fraction of the whole matrix. A share
    ``home_fraction`` of each group's ratings falls on its own
    ``items_per_group`` items and the rest spreads over everyone else's;
    ``home_fraction = 1 / num_groups`` means no preference.
    """

    num_groups: int = 5
    users_per_group: int = 60
    items_per_group: int = 80
    true_rank: int = 3
    noise_sigma: float = 0.3
    density: float = 0.1
    p_in: float = 0.25
    p_out: float = 0.005
    user_spread: float = 1.0
    rating_sd: float = 1.0
    home_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 1 or self.users_per_group < 1 or self.items_per_group < 1:
            raise ValueError("group counts must be positive")
        if not 1 <= self.true_rank <= min(self.users_per_group, self.items_per_group):
            raise ValueError("true_rank must be in [1, min(users_per_group, items_per_group)]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.home_fraction <= 1:
            raise ValueError("home_fraction must be in [0, 1]")
        if self.home_probability > 1 or self.away_probability > 1:
            raise ValueError("density and home_fraction ask for more than every rating")
        if self.rating_sd <= 0:
            raise ValueError("rating_sd must be positive")
        if not 0 < self.density <= 1:
            raise ValueError("density must be in (0, 1]")
        if not (self.p_in > self.p_out >= 0) or self.p_in > 1:
            raise ValueError("need 1 >= p_in > p_out >= 0")

    @property
    def num_users(self) -> int:
        return self.num_groups * self.users_per_group

    @property
    def num_items(self) -> int:
        return self.num_groups * self.items_per_group

    @property
    def home_probability(self) -> float:
        return self.density * self.num_groups * self.home_fraction

    @property
    def away_probability(self) -> float:
        if self.num_groups == 1:
            return 0.0
        return self.density * self.num_groups * (1 - self.home_fraction) / (self.num_groups - 1)


@dataclass
class GroundTruth:
    user_group: np.ndarray
    values: np.ndarray  # noiseless m x n matrix, mean 3 per block, unclipped
    clip_fraction: float

    def write(self, path, user_ids) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for u, g in enumerate(self.user_group.tolist()):
                fh.write(f"{user_ids[u]}\tg{g}\n")


def _group_block(rng, spec: SyntheticSpec) -> np.ndarray:
    r = spec.true_rank
    n = spec.num_items
    # leading constant column keeps the later affine shift inside the column space
    centroid = rng.standard_normal(r - 1)
    U = np.ones((spec.users_per_group, r))
    U[:, 1:] = centroid + spec.user_spread * rng.standard_normal((spec.users_per_group, r - 1))
    V = rng.standard_normal((n, r))
    B = U @ V.T
    sd = B.std()
    if sd == 0:
        return np.full_like(B, 3.0)
    return 3.0 + (spec.rating_sd / sd) * (B - B.mean())


def generate_synthetic(spec: SyntheticSpec):
    """Returns (ratings, graph, truth)."""
    rng = np.random.default_rng(spec.seed)
    G, m, n = spec.num_groups, spec.num_users, spec.num_items
    user_group = np.repeat(np.arange(G), spec.users_per_group)
    truth = np.vstack([_group_block(rng, spec) for _ in range(G)])

    item_group = np.repeat(np.arange(G), spec.items_per_group)
    if G == 1:
        prob = np.full((m, n), spec.density)
    else:
        prob = np.where(user_group[:, None] == item_group[None, :],
                        spec.home_probability, spec.away_probability)
    observed = rng.random((m, n)) < prob
    us, its = np.nonzero(observed)
    noisy = truth[us, its] + spec.noise_sigma * rng.standard_normal(len(us))
    clipped = (noisy < 1.0) | (noisy > 5.0)
    clip_fraction = float(clipped.mean()) if len(us) else 0.0
    vals = np.clip(noisy, 1.0, 5.0)
    if clip_fraction:
        log.info("synthetic ratings clipped into [1, 5]: %.2f%%", 100 * clip_fraction)

    iu, ju = np.triu_indices(m, k=1)
    p = np.where(user_group[iu] == user_group[ju], spec.p_in, spec.p_out)
    hit = rng.random(len(iu)) < p
    graph = SocialGraph(m, np.stack([iu[hit], ju[hit]], axis=1))

    ratings = RatingMatrix(m, n, us, its, vals,
                           tuple(f"u{k}" for k in range(m)), tuple(f"i{k}" for k in range(n)))
    return ratings, graph, GroundTruth(user_group, truth, clip_fraction)

