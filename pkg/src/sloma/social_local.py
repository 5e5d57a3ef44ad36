"""Social local low-rank models (SLOMA / SLOMA++).

Submatrices come from social groups: either the hop ball around each
connector user, or detected / loaded overlapping communities. Every
submatrix takes all training ratings of its users. Local models are
averaged with equal weight over the submatrices containing both the user
and the item, and pairs no submatrix covers get the training mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import UNIFORM, EnsembleModel, LocalModel, Origin, RatingMatrix, SocialGraph
from .ensemble import train_locals
from .factorization import TrainConfig, pcc_similarity
from .graph import (CommunityCover, ConnectorMethod, detect_communities, k_hop_ball,
                    load_communities, select_connectors)

log = logging.getLogger(__name__)

MAX_HOPS = 6
HEURISTIC, COMMUNITY, COMMUNITY_FILE = "heuristic", "community", "community-file"


@dataclass(frozen=True)
class SlomaConfig:
    q: int = 50
    hops: int = 3
    connector: str = "hub"
    pool_size: int = 1000
    construction: str = HEURISTIC
    community_path: Optional[str] = None
    social_reg: bool = False
    local: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    unsafe_hops: bool = False

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not self.unsafe_hops and not 1 <= self.hops <= MAX_HOPS:
            raise ValueError(f"hops must be in [1, {MAX_HOPS}], got {self.hops}")
        if self.construction not in (HEURISTIC, COMMUNITY, COMMUNITY_FILE):
            raise ValueError(f"unknown construction {self.construction!r}")
        if self.construction == COMMUNITY_FILE and not self.community_path:
            raise ValueError("community-file construction needs a path")

    def connector_method(self) -> ConnectorMethod:
        return ConnectorMethod(self.connector, self.q, self.pool_size, self.seed)


@dataclass
class CoverageReport:
    user_coverage: float
    rating_coverage: float
    sizes: list  # (users, items, ratings) per local model

    def to_tsv(self) -> str:
        lines = ["metric\tvalue",
                 f"user_coverage\t{self.user_coverage:.6f}",
                 f"rating_coverage\t{self.rating_coverage:.6f}",
                 f"num_models\t{len(self.sizes)}",
                 "",
                 "model\tusers\titems\tratings"]
        lines += [f"{t}\t{u}\t{i}\t{r}" for t, (u, i, r) in enumerate(self.sizes)]
        return "\n".join(lines) + "\n"


def group_submatrix(ratings: RatingMatrix, users, origin: Origin) -> Optional[LocalModel]:
    """Submatrix of a user group: all items the group rated, all of the group's ratings.

    Group members without training ratings are left out; they would only
    carry their random initial factors.
    """
    users = np.unique(np.asarray(list(users), dtype=np.int64))
    if not len(users):
        return None
    entries = np.concatenate([ratings.user_entries(u) for u in users])
    if not len(entries):
        return None
    entries = np.sort(entries)
    users = np.unique(ratings.users[entries])
    items = np.unique(ratings.items[entries])
    return LocalModel(users, items, entries, origin)


def build_social_submatrices(ratings: RatingMatrix, graph: SocialGraph, config: SlomaConfig,
                             cover: Optional[CommunityCover] = None) -> list[LocalModel]:
    if graph.num_users != ratings.num_users:
        raise ValueError("graph and ratings disagree on the number of users")
    groups: list[tuple[set, Origin]] = []
    if config.construction == HEURISTIC and cover is None:
        for c in select_connectors(graph, config.connector_method(), config.hops):
            groups.append((k_hop_ball(graph, c, config.hops), Origin("connector", user=c)))
    else:
        if cover is None:
            if config.construction == COMMUNITY_FILE:
                cover = load_communities(config.community_path, ratings.user_ids, config.q)
            else:
                cover = detect_communities(graph, config.q, config.seed)
        groups = [(c, Origin("community", community=t)) for t, c in enumerate(cover.communities)]

    skeletons = []
    for members, origin in groups:
        lm = group_submatrix(ratings, members, origin)
        if lm is None:
            log.warning("social group %s has no training ratings; dropped", origin)
            continue
        skeletons.append(lm)
    if not skeletons:
        raise ValueError("every social submatrix is empty")
    return skeletons


def _local_similarity(graph: SocialGraph):
    def sim_for(lm: LocalModel, local: RatingMatrix):
        return pcc_similarity(local, graph.induced(lm.user_subset))
    return sim_for


def train_sloma(ratings: RatingMatrix, graph: SocialGraph, config: SlomaConfig,
                skeletons: Optional[list[LocalModel]] = None, threads: int = 1) -> EnsembleModel:
    """Build (unless given) and fit the local models.

    With ``social_reg`` each local fit adds the social term using PCC
    similarities computed inside the submatrix over its induced subgraph.
    """
    if skeletons is None:
        skeletons = build_social_submatrices(ratings, graph, config)
    sim_for = _local_similarity(graph) if config.social_reg and config.local.beta > 0 else None
    train_locals(ratings, skeletons, config.local, config.seed, sim_for=sim_for, threads=threads)
    return EnsembleModel(skeletons, ratings.num_users, ratings.num_items, ratings.mean,
                         combine_rule=UNIFORM)


def predict_sloma(ensemble: EnsembleModel, user: int, item: int) -> float:
    return ensemble.predict_one(user, item)


def coverage(skeletons: list[LocalModel], ratings_train: RatingMatrix, num_users: int) -> CoverageReport:
    users = set()
    entries = set()
    for lm in skeletons:
        users.update(lm.user_subset.tolist())
        entries.update(lm.entry_subset.tolist())
    n = len(ratings_train)
    return CoverageReport(len(users) / num_users, len(entries) / n if n else 0.0,
                          [lm.size for lm in skeletons])
