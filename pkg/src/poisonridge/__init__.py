"""Closed-form random-matrix predictions for backdoor poisoning of
high-dimensional ridge regression, with Monte Carlo verification."""

__version__ = "0.1.0"

from .theory import ModelParams, TheoryPrediction, predict, predict_ridgeless

__all__ = [
    "ModelParams",
    "TheoryPrediction",
    "predict",
    "predict_ridgeless",
    "__version__",
]
