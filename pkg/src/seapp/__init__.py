"""Sensor-aligned unsupervised domain adaptation for multivariate time series.

Submodules: ``tensor`` (autodiff), ``encoder``, ``alignment`` (losses),
``data``, ``training``, ``experiments``, ``checkpoint``, ``gradcheck`` and
``cli``.
"""

from .alignment import AlignmentConfig, EndoInputs, coral, endo_loss, exo_loss, total_loss
from .data import Corpus, CorpusSpec, SyntheticShiftSpec, generate_synthetic, load_csv_corpus
from .encoder import EncoderConfig, EncoderParams, encode, global_features
from .training import TrainConfig, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentConfig",
    "EndoInputs",
    "coral",
    "endo_loss",
    "exo_loss",
    "total_loss",
    "Corpus",
    "CorpusSpec",
    "SyntheticShiftSpec",
    "generate_synthetic",
    "load_csv_corpus",
    "EncoderConfig",
    "EncoderParams",
    "encode",
    "global_features",
    "TrainConfig",
    "train",
    "evaluate",
    "predict",
]
