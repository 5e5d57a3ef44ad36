"""Held-out error metrics and RMSE-reduction arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class MetricPair:
    mae: float
    rmse: float
    n_test: int
    fallback_fraction: float = 0.0


def mae_rmse(pairs: Iterable[tuple[float, float]], fallback=None) -> MetricPair:
    """MAE and RMSE over ``(truth, predicted)`` pairs.

    ``fallback`` is an optional boolean mask marking pairs that were answered
    by the global mean.
    """
    arr = np.asarray(list(pairs), dtype=float)
    if arr.size == 0:
        raise ValueError("cannot score an empty prediction list")
    err = arr[:, 0] - arr[:, 1]
    frac = float(np.mean(fallback)) if fallback is not None and len(fallback) else 0.0
    return MetricPair(float(np.mean(np.abs(err))), math.sqrt(float(np.mean(err * err))),
                      len(err), frac)


def score(truth, predicted, fallback=None) -> MetricPair:
    return mae_rmse(zip(np.asarray(truth, float).tolist(), np.asarray(predicted, float).tolist()),
                    fallback)


def improvement(reference_rmse: float, candidate_rmse: float) -> float:
    """Relative RMSE reduction of ``candidate`` over ``reference``; positive means better."""
    if reference_rmse <= 0:
        raise ValueError("reference RMSE must be positive")
    return (reference_rmse - candidate_rmse) / reference_rmse


def format_improvement(x: float) -> str:
    return f"{100 * x:+.2f}%"


@dataclass(frozen=True)
class Summary:
    mae: float
    mae_sd: float
    rmse: float
    rmse_sd: float
    fallback_fraction: float
    repeats: int


def summarize(rows: Sequence[MetricPair]) -> Summary:
    """Mean and sample standard deviation over repeats (sd is nan for one repeat)."""
    if not rows:
        raise ValueError("nothing to summarize")
    mae = np.array([r.mae for r in rows])
    rmse = np.array([r.rmse for r in rows])
    sd = (lambda a: float(np.std(a, ddof=1))) if len(rows) > 1 else (lambda a: float("nan"))
    return Summary(float(mae.mean()), sd(mae), float(rmse.mean()), sd(rmse),
                   float(np.mean([r.fallback_fraction for r in rows])), len(rows))
