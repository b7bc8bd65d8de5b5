"""Pair verification accuracy, inter-class variance and hemi-face pair distance."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .dataman import FaceRecord, ImageSource, image_loader, make_item, normalize_pixels


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class VerificationPair:
    a: int
    b: int
    same_identity: bool

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a verification pair needs two distinct images")


@dataclass
class EvalReport:
    accuracy: float
    best_threshold: float
    fold_accuracies: list[float]
    inter_class_variance: float = 0.0
    mean_sym_pair_distance: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def make_pairs(labels: Sequence[int], n_pairs: int, seed: int) -> list[VerificationPair]:
    """Balanced same/different identity pairs drawn without repeats."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_label = {lab: np.flatnonzero(labels == lab) for lab in np.unique(labels)}
    multi = [lab for lab, idx in by_label.items() if len(idx) >= 2]
    if not multi or len(by_label) < 2:
        raise ProtocolError("need >= 2 identities and one with >= 2 images")
    n_same = n_pairs // 2
    seen = set()
    pairs = []
    max_tries = 50 * n_pairs + 1000
    tries = 0
    while len(pairs) < n_same and tries < max_tries:
        tries += 1
        lab = multi[rng.integers(len(multi))]
        a, b = rng.choice(by_label[lab], size=2, replace=False)
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            pairs.append(VerificationPair(int(key[0]), int(key[1]), True))
    while len(pairs) < n_pairs and tries < 2 * max_tries:
        tries += 1
        a, b = rng.choice(len(labels), size=2, replace=False)
        if labels[a] == labels[b]:
            continue
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            pairs.append(VerificationPair(int(key[0]), int(key[1]), False))
    return pairs


def cosine_similarities(emb: np.ndarray, pairs: Sequence[VerificationPair]) -> np.ndarray:
    emb = np.asarray(emb, dtype=np.float64)
    a = emb[[p.a for p in pairs]]
    b = emb[[p.b for p in pairs]]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.where((na > 0) & (nb > 0), na * nb, 1.0)
    return (a * b).sum(axis=1) / denom


def best_threshold(sims: np.ndarray, same: np.ndarray) -> tuple[float, float]:
    """Exhaustive search for the threshold (predict same iff sim > t) maximizing accuracy.

    Candidates are midpoints between consecutive distinct similarities plus both
    ends; ties resolve to the median of the tied candidates.
    """
    order = np.unique(sims)
    cands = np.concatenate([[order[0] - 1.0], (order[:-1] + order[1:]) / 2, [order[-1] + 1.0]])
    acc = ((sims[None, :] > cands[:, None]) == same[None, :]).mean(axis=1)
    best = np.flatnonzero(acc == acc.max())
    i = best[len(best) // 2]
    return float(cands[i]), float(acc[i])


def verify_similarities(sims: np.ndarray, same: np.ndarray, folds: int = 10) -> EvalReport:
    """Cross-validated accuracy: each fold is scored with the threshold fit on the others."""
    same = np.asarray(same, dtype=bool)
    if folds < 2:
        raise ProtocolError("need at least 2 folds")
    if same.all() or not same.any():
        raise ProtocolError("pair set contains only one kind of pair")
    skf = StratifiedKFold(n_splits=folds, shuffle=False)
    accs, thresholds = [], []
    for train_idx, test_idx in skf.split(sims, same):
        t, _ = best_threshold(sims[train_idx], same[train_idx])
        thresholds.append(t)
        accs.append(float(((sims[test_idx] > t) == same[test_idx]).mean()))
    return EvalReport(float(np.mean(accs)), float(np.mean(thresholds)), accs)


def verify(embed: Callable[[np.ndarray], np.ndarray], images: np.ndarray, pairs: Sequence[VerificationPair],
           folds: int = 10) -> EvalReport:
    """Embed ``images`` with ``embed`` and run the k-fold verification protocol on ``pairs``."""
    emb = embed(images)
    sims = cosine_similarities(emb, pairs)
    same = np.array([p.same_identity for p in pairs])
    return verify_similarities(sims, same, folds)


def inter_class_variance(embeddings: np.ndarray, labels: Sequence[int]) -> float:
    """Trace of the (population) covariance of per-class centroids of unit-normalized embeddings."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("inter-class variance needs at least two classes")
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = emb / np.where(norms > 0, norms, 1.0)
    centroids = np.stack([unit[labels == c].mean(axis=0) for c in classes])
    return float(((centroids - centroids.mean(axis=0)) ** 2).sum(axis=1).mean())


def sym_pair_distance(embed: Callable[[np.ndarray], np.ndarray], records: Sequence[FaceRecord],
                      images: ImageSource) -> float:
    """Mean L2 distance between the embeddings of each record's padded left and right halves."""
    if not records:
        raise ValueError("no records to measure")
    load = image_loader(images)
    lefts, rights = [], []
    for rec in records:
        item = make_item(rec, load(rec), split=True)
        lefts.append(normalize_pixels(item.images[0]))
        rights.append(normalize_pixels(item.images[1]))
    el = embed(np.stack(lefts))
    er = embed(np.stack(rights))
    return float(np.linalg.norm(el - er, axis=1).mean())
