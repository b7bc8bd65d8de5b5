"""Hemi-face symmetry loss for face embedding training, at desk scale."""

from .symgeom import Landmarks, classify_symmetric, frontness_score, split_face, unsplit
from .faceloss import MarginConfig, symface_loss, total_loss
from .trainkit import TrainConfig, train
from .estimator import FrontnessScorer, SymFaceEmbedder

__version__ = "0.1.0"

__all__ = [
    "Landmarks",
    "classify_symmetric",
    "frontness_score",
    "split_face",
    "unsplit",
    "MarginConfig",
    "symface_loss",
    "total_loss",
    "TrainConfig",
    "train",
    "FrontnessScorer",
    "SymFaceEmbedder",
]
