"""LLORMA baseline: random anchors, arc-cosine neighbourhoods, kernel-weighted ensemble."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import KERNEL, EnsembleModel, FactorModel, LocalModel, Origin, RatingMatrix, arc_distances
from .ensemble import train_locals
from .factorization import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LlormaConfig:
    q: int = 50
    d1: float = 0.8
    d2: float = 0.8
    bandwidth: float = 0.8
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    local: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        for name in ("d1", "d2"):
            if not 0 < getattr(self, name) <= math.pi:
                raise ValueError(f"{name} must be in (0, pi]")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


def arc_cos_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("arc-cosine distance is undefined for a zero vector")
    return float(np.arccos(np.clip((a @ b) / (na * nb), -1.0, 1.0)))


def sample_anchors(ratings: RatingMatrix, q: int, seed: int) -> np.ndarray:
    """``q`` distinct observed entries, uniformly at random (or all of them if fewer)."""
    rng = np.random.default_rng(seed)
    return rng.choice(len(ratings), size=min(q, len(ratings)), replace=False)


def build_anchor_submatrices(ratings: RatingMatrix, config: LlormaConfig,
                             global_factors: FactorModel) -> list[LocalModel]:
    skeletons = []
    U, V = global_factors.U, global_factors.V
    # distances are computed per anchor; nothing m x m is kept
    for e in sample_anchors(ratings, config.q, config.seed).tolist():
        iu, jv = int(ratings.users[e]), int(ratings.items[e])
        users = np.flatnonzero(arc_distances(U, U[iu]) <= config.d1)
        items = np.flatnonzero(arc_distances(V, V[jv]) <= config.d2)
        in_u = np.zeros(ratings.num_users, dtype=bool)
        in_u[users] = True
        in_i = np.zeros(ratings.num_items, dtype=bool)
        in_i[items] = True
        entries = np.flatnonzero(in_u[ratings.users] & in_i[ratings.items])
        if not len(entries):
            log.warning("anchor (%d, %d) gives an empty submatrix; dropped", iu, jv)
            continue
        # keep only rows and columns that hold a rating inside the submatrix
        users = np.unique(ratings.users[entries])
        items = np.unique(ratings.items[entries])
        skeletons.append(LocalModel(users, items, entries, Origin("anchor", user=iu, item=jv)))
    if not skeletons:
        raise ValueError("every anchor submatrix is empty")
    return skeletons


def train_llorma(ratings: RatingMatrix, config: LlormaConfig,
                 global_factors: Optional[FactorModel] = None, threads: int = 1) -> EnsembleModel:
    if global_factors is None:
        global_factors = train(ratings, config=config.pretrain)
    skeletons = build_anchor_submatrices(ratings, config, global_factors)
    train_locals(ratings, skeletons, config.local, config.seed, threads=threads)
    return EnsembleModel(skeletons, ratings.num_users, ratings.num_items, ratings.mean,
                         combine_rule=KERNEL, bandwidth=config.bandwidth,
                         anchor_factors=global_factors)


def predict_llorma(ensemble: EnsembleModel, user: int, item: int) -> float:
    """Kernel-weighted average over the submatrices holding both user and item."""
    return ensemble.predict_one(user, item)
