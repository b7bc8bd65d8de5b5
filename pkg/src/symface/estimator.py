"""scikit-learn compatible wrappers around frontness scoring and embedder training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataman import FaceRecord, Manifest, normalize_pixels
from .faceloss import MarginConfig
from .facenet import EmbedderConfig, logits
from .symgeom import Landmarks, classify_symmetric, frontness_score
from .trainkit import TrainConfig, train
from . import numgrad as ng


def check_images(X) -> np.ndarray:
    """Validate a stack of raw 8-bit-range images, shape (n, H, W) or (n, H, W, C)."""
    X = np.asarray(X)
    if X.ndim not in (3, 4):
        raise ValueError(f"expected images of shape (n, H, W[, C]), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images")
    if not np.issubdtype(X.dtype, np.number) or not np.all(np.isfinite(X)):
        raise ValueError("images must be finite numeric arrays")
    return X


def check_landmarks(L, n: int | None = None) -> list[Landmarks]:
    """Accept a list of :class:`Landmarks` or an (n, 3, 2) array (NaN rows mean undetected)."""
    if isinstance(L, (list, tuple)) and L and isinstance(L[0], Landmarks):
        out = list(L)
    else:
        arr = np.asarray(L, dtype=float)
        if arr.ndim != 3 or arr.shape[1:] != (3, 2):
            raise ValueError(f"landmarks must have shape (n, 3, 2), got {arr.shape}")
        out = [Landmarks.undetected() if np.isnan(pts).any() else Landmarks.from_array(pts) for pts in arr]
    if n is not None and len(out) != n:
        raise ValueError(f"{len(out)} landmark sets for {n} images")
    return out


class FrontnessScorer(BaseEstimator, TransformerMixin):
    """Maps landmark triples to frontness coefficients; ``predict`` thresholds them."""

    def __init__(self, tau: float = 0.2):
        self.tau = tau

    def fit(self, X, y=None):
        check_landmarks(X)
        self.n_features_in_ = 6
        return self

    def transform(self, X) -> np.ndarray:
        return np.array([[frontness_score(lm).rho] for lm in check_landmarks(X)])

    def predict(self, X) -> np.ndarray:
        return np.array([classify_symmetric(r, self.tau) for r in self.transform(X)[:, 0]])


class SymFaceEmbedder(BaseEstimator, TransformerMixin):
    """Trains a face embedder with a margin softmax loss plus, optionally, the symmetry loss.

    ``fit(X, y, landmarks=...)`` takes raw images; frontal faces (by landmarks) are
    split into hemi faces on a fraction ``p`` of them each epoch. Without landmarks
    no image is split and the run reduces to the plain margin loss.
    ``transform`` returns embeddings and ``predict`` the nearest class weight.
    """

    def __init__(self, embedding_dim=16, hidden=(128, 64), margin_family="arcface", scale=32.0, margin=0.45,
                 symface=True, tau=0.2, p=0.3, epochs=30, batch_size=32, lr=0.002, lr_steps=((20, 0.0002),),
                 momentum=0.9, weight_decay=5e-4, flip_prob=0.5, random_state=0):
        self.embedding_dim = embedding_dim
        self.hidden = hidden
        self.margin_family = margin_family
        self.scale = scale
        self.margin = margin
        self.symface = symface
        self.tau = tau
        self.p = p
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_steps = lr_steps
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.flip_prob = flip_prob
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size_slots=self.batch_size, lr_initial=self.lr,
            lr_steps=list(self.lr_steps), momentum=self.momentum, weight_decay=self.weight_decay,
            tau=self.tau, p=self.p, margin=MarginConfig(self.margin_family, self.scale, self.margin),
            seed=int(self.random_state or 0), symface=self.symface, flip_prob=self.flip_prob,
        )

    def fit(self, X, y, landmarks=None):
        X = check_images(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one label per image")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        lms = check_landmarks(landmarks, len(X)) if landmarks is not None else [Landmarks.undetected()] * len(X)
        records, images = [], {}
        for i, (lm, label) in enumerate(zip(lms, codes)):
            rid = f"{i:08d}"
            rho = frontness_score(lm).rho
            records.append(FaceRecord(rid, "", int(label), lm, rho, classify_symmetric(rho, self.tau)))
            images[rid] = X[i]
        h, w = X.shape[1:3]
        c = 1 if X.ndim == 3 else X.shape[3]
        self.embedder_config_ = EmbedderConfig((h, w, c), tuple(self.hidden), self.embedding_dim)
        config = self._train_config()
        state = train(Manifest(records, self.tau), images, config, self.embedder_config_)
        self.embedder_ = state.embedder
        self.head_ = state.head
        self.metrics_ = state.metrics
        self.n_features_in_ = h * w * c
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "embedder_")
        return self.embedder_.embed(normalize_pixels(check_images(X)))

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "head_")
        emb = ng.tensor(self.transform(X))
        return logits(emb, self.head_, angular=self.margin_family != "softmax").data

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))
