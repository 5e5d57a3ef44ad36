"""Model pipelines, repeated-split experiments and comparison tables."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (RATING_MAX, RATING_MIN, DataError, EnsembleModel, FactorModel, RatingMatrix,
                   SocialGraph)
from .ensemble import load_ensemble, save_ensemble
from .factorization import (TrainConfig, TrainingDiverged, load_factor_model, pcc_similarity,
                            save_factor_model, train)
from .ingest import SplitSpec, split
from .llorma import LlormaConfig, train_llorma
from .metrics import MetricPair, Summary, format_improvement, improvement, score, summarize
from .social_local import SlomaConfig, train_sloma

log = logging.getLogger(__name__)

MODELS = ("mean", "regsvd", "socreg", "llorma", "sloma", "sloma++")
SOCIAL_MODELS = ("socreg", "sloma++")
BETA_GRID = (0.01, 0.1, 1.0)

# defaults shared by every factor-model pipeline
PIPELINE_TRAIN = TrainConfig(rank=10, lam=1.0, learning_rate=0.05, max_epochs=200,
                             lr_decay=0.97, center=True)


@dataclass(frozen=True)
class ModelSpec:
    """One model pipeline.

    ``train`` configures every factorization the pipeline runs (global,
    pretraining and local). For ``socreg`` and ``sloma++`` a non-empty
    ``beta_grid`` picks beta by held-out RMSE on an inner split of the
    training data, then refits on all of it; an empty grid uses ``train.beta``.
    """

    name: str
    train: TrainConfig = PIPELINE_TRAIN
    sloma: SlomaConfig = field(default_factory=SlomaConfig)
    llorma: LlormaConfig = field(default_factory=LlormaConfig)
    beta_grid: tuple = BETA_GRID
    validation_fraction: float = 0.9
    clamp: bool = False
    label: Optional[str] = None

    def __post_init__(self):
        if self.name not in MODELS:
            raise ValueError(f"unknown model {self.name!r}; choose from {', '.join(MODELS)}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")

    @property
    def display(self) -> str:
        return self.label or self.name

    def with_seed(self, seed: int) -> "ModelSpec":
        return replace(self, train=self.train.with_(seed=seed),
                       sloma=replace(self.sloma, seed=seed),
                       llorma=replace(self.llorma, seed=seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        sl, ll = dict(d.pop("sloma")), dict(d.pop("llorma"))
        sl["local"] = TrainConfig(**sl["local"])
        ll["pretrain"], ll["local"] = TrainConfig(**ll["pretrain"]), TrainConfig(**ll["local"])
        return cls(train=TrainConfig(**d.pop("train")), sloma=SlomaConfig(**sl),
                   llorma=LlormaConfig(**ll), beta_grid=tuple(d.pop("beta_grid")), **d)


@dataclass
class Fitted:
    """A trained pipeline: ``predict`` returns (predictions, fallback mask)."""

    spec: ModelSpec
    global_mean: float
    model: object = None  # FactorModel, EnsembleModel or None for the mean predictor
    chosen_beta: Optional[float] = None
    seen_users: Optional[np.ndarray] = None
    seen_items: Optional[np.ndarray] = None

    def predict(self, users, items) -> tuple[np.ndarray, np.ndarray]:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        unknown = (users < 0) | (items < 0)
        if isinstance(self.model, EnsembleModel):
            u, i = np.where(unknown, 0, users), np.where(unknown, 0, items)
            pred, fb = self.model.predict(u, i)
            fb = fb | unknown
        elif isinstance(self.model, FactorModel):
            # a user or item without training ratings has no learned factors
            fb = unknown.copy()
            ok = np.flatnonzero(~unknown)
            fb[ok] = ~(self.seen_users[users[ok]] & self.seen_items[items[ok]])
            pred = np.full(len(users), self.global_mean)
            live = np.flatnonzero(~fb)
            pred[live] = self.model.predict_many(users[live], items[live])
        else:
            fb = np.ones(len(users), dtype=bool)
            pred = np.full(len(users), self.global_mean)
        pred = np.where(fb, self.global_mean, pred)
        if self.spec.clamp:
            pred = np.clip(pred, RATING_MIN, RATING_MAX)
        return pred, fb


def _fit_once(spec: ModelSpec, ratings: RatingMatrix, graph: Optional[SocialGraph],
              beta: float, threads: int) -> Fitted:
    cfg = spec.train.with_(beta=beta)
    fitted = Fitted(spec, ratings.mean, seen_users=ratings.user_counts() > 0,
                    seen_items=ratings.item_counts() > 0)
    if spec.name == "mean":
        return fitted
    if spec.name in SOCIAL_MODELS and graph is None:
        raise ValueError(f"{spec.name} needs a social graph")
    if spec.name == "regsvd":
        fitted.model = train(ratings, config=cfg.with_(beta=0.0))
    elif spec.name == "socreg":
        sim = pcc_similarity(ratings, graph) if beta > 0 else None
        fitted.model = train(ratings, sim=sim, config=cfg if beta > 0 else cfg.with_(beta=0.0))
    elif spec.name == "llorma":
        # distances come from uncentered factors: centering strips the shared mean
        # direction and leaves arc-cosine neighbourhoods nearly empty
        lcfg = replace(spec.llorma, pretrain=cfg.with_(beta=0.0, center=False),
                       local=cfg.with_(beta=0.0))
        fitted.model = train_llorma(ratings, lcfg, threads=threads)
    else:
        if graph is None:
            raise ValueError("sloma needs a social graph")
        social = spec.name == "sloma++"
        scfg = replace(spec.sloma, social_reg=social,
                       local=cfg if social else cfg.with_(beta=0.0))
        fitted.model = train_sloma(ratings, graph, scfg, threads=threads)
    fitted.chosen_beta = beta if spec.name in SOCIAL_MODELS else None
    return fitted


def fit_model(spec: ModelSpec, ratings: RatingMatrix, graph: Optional[SocialGraph] = None,
              seed: int = 0, threads: int = 1) -> Fitted:
    spec = spec.with_seed(seed)
    beta = spec.train.beta
    if spec.name in SOCIAL_MODELS and spec.beta_grid:
        beta = tune_beta(spec, ratings, graph, seed, threads)
    return _fit_once(spec, ratings, graph, beta, threads)


def tune_beta(spec: ModelSpec, ratings: RatingMatrix, graph: SocialGraph, seed: int,
              threads: int = 1) -> float:
    """Pick the grid value with the lowest RMSE on an inner validation split (first wins ties)."""
    inner, held = split(ratings, SplitSpec(spec.validation_fraction, seed=seed, repeats=1))
    h = np.asarray(held, dtype=float)
    best, best_rmse = None, np.inf
    for beta in spec.beta_grid:
        fitted = _fit_once(spec, inner, graph, float(beta), threads)
        pred, fb = fitted.predict(h[:, 0].astype(np.int64), h[:, 1].astype(np.int64))
        r = score(h[:, 2], pred, fb).rmse
        log.info("%s beta=%g validation RMSE %.6f", spec.display, beta, r)
        if r < best_rmse:
            best, best_rmse = float(beta), r
    return best


def evaluate(fitted: Fitted, test) -> MetricPair:
    t = np.asarray(test, dtype=float).reshape(-1, 3)
    pred, fb = fitted.predict(t[:, 0].astype(np.int64), t[:, 1].astype(np.int64))
    return score(t[:, 2], pred, fb)


def run_experiment(ratings: RatingMatrix, graph: Optional[SocialGraph], spec: ModelSpec,
                   split_spec: SplitSpec = SplitSpec(), threads: int = 1) -> list[MetricPair]:
    """One MetricPair per repeat; repeat r splits and trains with seed ``split_spec.seed + r``."""
    rows = []
    for r in range(split_spec.repeats):
        seed = split_spec.seed + r
        train_part, test = split(ratings, replace(split_spec, seed=seed))
        try:
            fitted = fit_model(spec, train_part, graph, seed=seed, threads=threads)
        except TrainingDiverged as exc:
            raise TrainingDiverged(exc.epoch, exc.learning_rate, exc.value,
                                   f"{spec.display}, repeat {r}") from exc
        rows.append(evaluate(fitted, test))
    return rows


@dataclass
class Comparison:
    specs: list
    results: list  # list[list[MetricPair]], parallel to specs
    designated: str  # model name; matched at the same rank as each row

    def summaries(self) -> list[Summary]:
        return [summarize(rows) for rows in self.results]

    def reference_index(self, row: int) -> int:
        hits = [t for t, s in enumerate(self.specs) if self.designated in (s.name, s.display)]
        same_k = [t for t in hits if self.specs[t].train.rank == self.specs[row].train.rank]
        return (same_k or hits)[0]

    def to_tsv(self) -> str:
        """Per model: mean MAE/RMSE over repeats, and the designated model's RMSE
        reduction relative to that row (positive = designated model better)."""
        sums = self.summaries()
        lines = ["model\tK\tMAE\tRMSE\timprovement\tMAE_sd\tRMSE_sd\tfallback_fraction"]
        for t, (spec, s) in enumerate(zip(self.specs, sums)):
            ref = sums[self.reference_index(t)].rmse
            k = "-" if spec.name == "mean" else str(spec.train.rank)
            imp = format_improvement(improvement(s.rmse, ref)) if s.rmse > 0 else "nan"
            lines.append(f"{spec.display}\t{k}\t{s.mae:.4f}\t{s.rmse:.4f}\t{imp}\t"
                         f"{s.mae_sd:.4f}\t{s.rmse_sd:.4f}\t{s.fallback_fraction:.4f}")
        return "\n".join(lines) + "\n"


def repeats_tsv(rows: Sequence[MetricPair]) -> str:
    lines = ["repeat\tMAE\tRMSE\tn_test\tfallback_fraction"]
    lines += [f"{r}\t{m.mae:.6f}\t{m.rmse:.6f}\t{m.n_test}\t{m.fallback_fraction:.6f}"
              for r, m in enumerate(rows)]
    return "\n".join(lines) + "\n"


def compare(specs: Sequence[ModelSpec], ratings: RatingMatrix, graph: Optional[SocialGraph],
            split_spec: SplitSpec = SplitSpec(), designated: Optional[str] = None,
            threads: int = 1) -> Comparison:
    """Run every spec over the same splits. ``designated`` names the model whose
    improvement is reported (default: the last one)."""
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("compare needs at least two models")
    if designated is None:
        designated = specs[-1].name
    if not any(designated in (s.name, s.display) for s in specs):
        raise ValueError(f"designated model {designated!r} is not among the compared models")
    results = [run_experiment(ratings, graph, s, split_spec, threads) for s in specs]
    return Comparison(specs, results, designated)


def save_fitted(directory, fitted: Fitted) -> None:
    """``spec.json`` plus ``model.tsv`` (global factors) or an ensemble directory."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"spec": fitted.spec.to_dict(), "global_mean": fitted.global_mean,
            "chosen_beta": fitted.chosen_beta}
    if isinstance(fitted.model, FactorModel):
        save_factor_model(out / "model.tsv", fitted.model)
    elif isinstance(fitted.model, EnsembleModel):
        save_ensemble(out / "ensemble", fitted.model)
    (out / "spec.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_fitted(directory, train_ratings: RatingMatrix) -> Fitted:
    """Inverse of ``save_fitted``; ``train_ratings`` restores which users/items were seen."""
    src = Path(directory)
    meta = json.loads((src / "spec.json").read_text())
    model = None
    if (src / "model.tsv").exists():
        model = load_factor_model(src / "model.tsv")[0]
    elif (src / "ensemble").exists():
        model = load_ensemble(src / "ensemble")
    dims = model.U.shape[0] if isinstance(model, FactorModel) else getattr(model, "num_users", None)
    if dims is not None and dims != train_ratings.num_users:
        raise DataError("saved model and training ratings disagree on the number of users")
    return Fitted(ModelSpec.from_dict(meta["spec"]), meta["global_mean"], model,
                  meta["chosen_beta"], train_ratings.user_counts() > 0,
                  train_ratings.item_counts() > 0)
