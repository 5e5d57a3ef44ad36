"""Training local submatrix models (sequentially or on a thread pool) and persisting ensembles."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import EnsembleModel, LocalModel, Origin, RatingMatrix
from .factorization import (SimilarityMatrix, TrainConfig, TrainingDiverged, load_factor_model,
                            save_factor_model, train)

THREADS_ENV = "SLOMA_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def local_seed(seed: int, index: int) -> int:
    """Seed for local model ``index``; independent of scheduling order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


def train_locals(ratings: RatingMatrix, skeletons: list[LocalModel], config: TrainConfig,
                 seed: int, sim_for: Optional[Callable[[LocalModel, RatingMatrix], SimilarityMatrix]] = None,
                 threads: int = 1) -> list[LocalModel]:
    """Fit factors for every skeleton in place and return them.

    ``sim_for(skeleton, local_ratings)`` supplies the social similarity for a
    socially regularized fit; omit it for plain RegSVD local models.
    """

    def fit(t: int) -> None:
        lm = skeletons[t]
        local = lm.local_ratings(ratings)
        sim = sim_for(lm, local) if sim_for is not None else None
        cfg = config.with_(seed=local_seed(seed, t))
        if sim is None:
            cfg = cfg.with_(beta=0.0)
        try:
            lm.factors = train(local, sim=sim, config=cfg, context=f"local model {t}")
        except TrainingDiverged as exc:
            raise TrainingDiverged(exc.epoch, exc.learning_rate, exc.value,
                                   f"local model {t}") from exc

    if threads <= 1:
        for t in range(len(skeletons)):
            fit(t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fit, range(len(skeletons))))
    return skeletons


def save_ensemble(directory, ensemble: EnsembleModel, extra: Optional[dict] = None) -> None:
    """Directory of per-model factor dumps plus ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    models = []
    for t, lm in enumerate(ensemble.locals):
        name = f"local_{t:03d}.tsv"
        save_factor_model(out / name, lm.factors)
        models.append({"file": name, "origin": asdict(lm.origin),
                       "users": lm.user_subset.tolist(), "items": lm.item_subset.tolist(),
                       "entries": lm.entry_subset.tolist()})
    manifest = {"num_users": ensemble.num_users, "num_items": ensemble.num_items,
                "global_mean": ensemble.global_mean, "combine_rule": ensemble.combine_rule,
                "bandwidth": ensemble.bandwidth, "models": models, "extra": extra or {}}
    if ensemble.anchor_factors is not None:
        save_factor_model(out / "anchor_factors.tsv", ensemble.anchor_factors)
        manifest["anchor_factors"] = "anchor_factors.tsv"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_ensemble(directory) -> EnsembleModel:
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text())
    locals_ = []
    for entry in manifest["models"]:
        factors, _ = load_factor_model(src / entry["file"])
        locals_.append(LocalModel(entry["users"], entry["items"], entry["entries"],
                                  Origin(**entry["origin"]), factors))
    anchor = None
    if "anchor_factors" in manifest:
        anchor, _ = load_factor_model(src / manifest["anchor_factors"])
    return EnsembleModel(locals_, manifest["num_users"], manifest["num_items"],
                         manifest["global_mean"], manifest["combine_rule"],
                         manifest["bandwidth"], anchor)
