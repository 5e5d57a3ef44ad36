"""Social local low-rank recommenders (SLOMA, SLOMA++) and the RegSVD, SocReg and LLORMA baselines."""

from .data import (DataError, EnsembleModel, FactorModel, LocalModel, Origin, RatingMatrix,
                   SocialGraph, predict_local)
from .factorization import TrainConfig, TrainingDiverged, objective, gradient, pcc_similarity, train
from .ingest import SplitSpec, SyntheticSpec, generate_synthetic, load_edges, load_ratings, split
from .llorma import LlormaConfig, train_llorma
from .social_local import SlomaConfig, build_social_submatrices, coverage, train_sloma
from .metrics import MetricPair, mae_rmse
from .experiment import ModelSpec, compare, fit_model, run_experiment

__version__ = "0.1.0"
