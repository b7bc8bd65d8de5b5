"""Margin-softmax face losses, the hemi-face symmetry loss and their combination."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numgrad as ng

FAMILIES = ("softmax", "norm_softmax", "cosface", "sphereface", "arcface")
RESERVED_FAMILIES = ("adaface",)


class NumericError(ArithmeticError):
    pass


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class MarginConfig:
    """``family`` plus scale ``s`` and margin ``m``.

    For ``sphereface`` the target angle is multiplied by ``1 + m`` so that ``m = 0``
    is margin-free like the other families.
    """

    family: str = "arcface"
    scale: float = 32.0
    margin: float = 0.45

    def __post_init__(self):
        if self.family in RESERVED_FAMILIES:
            raise ValueError(f"{self.family!r} is reserved but not implemented: no formula is available for it")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown margin family {self.family!r}; expected one of {FAMILIES}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @property
    def angular(self) -> bool:
        return self.family != "softmax"


def ce_softmax(logits: ng.Tensor, labels, reduction: str = "mean") -> ng.Tensor:
    return ng.softmax_cross_entropy(logits, labels, reduction=reduction)


def _onehot(labels, shape) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    mask = np.zeros(shape, dtype=bool)
    mask[np.arange(shape[0]), labels] = True
    return mask


def margin_logits(cosines: ng.Tensor, labels, cfg: MarginConfig, diagnostics: dict | None = None) -> ng.Tensor:
    """Scaled cosine logits with the family's margin applied to each row's target class.

    When ``diagnostics`` is a dict, ``diagnostics["clamped"]`` receives the number of
    rows whose margined angle had to be clamped to ``pi``.
    """
    if cfg.family == "softmax":
        return cosines
    if np.any(np.abs(cosines.data) > 1.0 + ng.ACOS_DOMAIN_TOL):
        raise ng.DomainError("cosines outside [-1, 1]")
    s, m = cfg.scale, cfg.margin
    mask = _onehot(labels, cosines.shape)
    base = cosines * s
    clamped = 0
    if cfg.family == "norm_softmax":
        return base
    if cfg.family == "cosface":
        target = (cosines - m) * s
    else:
        theta = ng.acos(cosines)
        shifted = theta + m if cfg.family == "arcface" else theta * (1.0 + m)
        clamped = int(np.count_nonzero(mask & (shifted.data > math.pi)))
        target = ng.cos(ng.clamp(shifted, 0.0, math.pi)) * s
    if diagnostics is not None:
        diagnostics["clamped"] = clamped
    return ng.where(mask, target, base)


def margin_ce_terms(cosines: ng.Tensor, labels, cfg: MarginConfig) -> ng.Tensor:
    """Per-row margin cross-entropy terms, shape (n,)."""
    return ce_softmax(margin_logits(cosines, labels, cfg), labels, reduction="none")


def generic_face_loss(cosines: ng.Tensor, labels, n_effective: int, cfg: MarginConfig) -> ng.Tensor:
    """Sum of per-image margin CE terms over full and half images, divided by ``n_effective``.

    Half images carry the label of the face they were split from.
    """
    if n_effective <= 0:
        raise ContractError("n_effective must be positive")
    total = ce_softmax(margin_logits(cosines, labels, cfg), labels, reduction="sum")
    return total / n_effective


class FaceLossAccumulator:
    """Collects per-image CE terms across batches for the exact epoch-level mean."""

    def __init__(self):
        self._terms: list[float] = []

    def add(self, terms) -> None:
        self._terms.extend(float(t) for t in np.ravel(terms))

    @property
    def count(self) -> int:
        return len(self._terms)

    def value(self, n_effective: int | None = None) -> float:
        n = self.count if n_effective is None else n_effective
        return math.fsum(self._terms) / n if n else 0.0


@dataclass
class SymBatchView:
    """Embeddings of the split items in a batch with their frontness weights.

    The loss denominator is ``2 * n_split`` when ``n_split`` is given, otherwise
    ``2 * p * n_sym``.
    """

    left: ng.Tensor
    right: ng.Tensor
    rho: np.ndarray
    p: float
    n_sym: int
    n_split: int | None = None
    normalized: bool = False

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64).reshape(-1)
        if self.left.shape != self.right.shape or self.left.shape[0] != self.rho.shape[0]:
            raise ContractError("left/right embeddings and rho must agree in length")

    @property
    def n_pairs(self) -> int:
        return int(self.rho.shape[0])

    @property
    def denominator(self) -> float:
        if self.n_split is not None:
            return 2.0 * self.n_split
        return 2.0 * self.p * self.n_sym


def symface_loss(view: SymBatchView) -> ng.Tensor:
    """rho-weighted squared L2 distance between hemi-face embeddings, averaged over pairs."""
    if view.n_pairs == 0:
        return ng.tensor(0.0)
    if np.any(view.rho <= 0):
        raise ContractError("every split item needs rho > 0")
    if view.denominator <= 0:
        raise ContractError("symmetry-loss denominator must be positive when pairs exist")
    left, right = view.left, view.right
    if view.normalized:
        left, right = ng.normalize_rows(left), ng.normalize_rows(right)
    diff = left - right
    sq = ng.sum(diff * diff, axis=1)
    return ng.sum(sq * ng.tensor(view.rho)) / view.denominator


def symface_grad_left(view: SymBatchView) -> np.ndarray:
    """Closed-form gradient of the unnormalized symmetry loss with respect to the left embeddings."""
    diff = view.left.data - view.right.data
    return 2.0 * view.rho[:, None] * diff / view.denominator


def total_loss(face: ng.Tensor, sym: ng.Tensor) -> ng.Tensor:
    """Unit-weight sum of the face loss and the symmetry loss."""
    for name, term in (("face loss", face), ("symmetry loss", sym)):
        if not np.all(np.isfinite(term.data)):
            raise NumericError(f"non-finite {name}: {term.data!r}")
    return face + sym


def pair_distances(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(left) - np.asarray(right), axis=1)

