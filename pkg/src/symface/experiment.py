"""Controlled baseline-vs-symmetry-loss runs on a synthetic corpus."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .evalkit import inter_class_variance, make_pairs, sym_pair_distance, verify
from .facenet import EmbedderConfig
from .dataman import normalize_pixels
from .synthgen import Corpus, corpus_manifest, generate_corpus, train_test_indices
from .trainkit import RunState, TrainConfig, sub_seed, train


@dataclass
class ArmResult:
    symface: bool
    sym_pair_distance: float
    inter_class_variance: float
    accuracy: float
    metrics: list[dict]
    seconds: float


@dataclass
class MechanismConfig:
    num_ids: int = 16
    imgs_per_id: int = 40
    holdout_per_id: int = 10
    dims: tuple[int, int] = (32, 32)
    n_pairs: int = 1200
    folds: int = 10
    train: TrainConfig = None
    embedder: EmbedderConfig = None

    def __post_init__(self):
        if self.train is None:
            self.train = TrainConfig()
        if self.embedder is None:
            self.embedder = EmbedderConfig(input_dims=(*self.dims, 1))


def evaluate_arm(state: RunState, corpus: Corpus, test_idx: np.ndarray, tau: float, n_pairs: int, folds: int,
                 pair_seed: int) -> dict:
    images = {cid: img for cid, img in zip(corpus.ids, corpus.images)}
    test = corpus_manifest(corpus, test_idx, tau)
    sym_records = [r for r in test if r.symmetric]
    embed = state.embedder.embed
    x = normalize_pixels(corpus.images[test_idx])
    emb = embed(x)
    labels = corpus.labels[test_idx]
    pairs = make_pairs(labels, n_pairs, pair_seed)
    report = verify(embed, x, pairs, folds)
    return {
        "sym_pair_distance": sym_pair_distance(embed, sym_records, images),
        "inter_class_variance": inter_class_variance(emb, labels),
        "accuracy": report.accuracy,
    }


def run_mechanism(seed: int, cfg: MechanismConfig | None = None) -> dict[str, ArmResult]:
    """Train a margin-loss baseline and the same run with the symmetry loss; score both on held-out data."""
    cfg = cfg or MechanismConfig()
    corpus = generate_corpus(cfg.num_ids, cfg.imgs_per_id, cfg.dims, seed=sub_seed(seed, "corpus"))
    train_idx, test_idx = train_test_indices(corpus, cfg.holdout_per_id)
    images = {cid: img for cid, img in zip(corpus.ids, corpus.images)}
    manifest = corpus_manifest(corpus, train_idx, cfg.train.tau)
    results = {}
    for name, symface in (("baseline", False), ("symface", True)):
        tcfg = replace(cfg.train, seed=seed, symface=symface, p=cfg.train.p if symface else 0.0)
        t0 = time.perf_counter()
        state = train(manifest, images, tcfg, cfg.embedder)
        scores = evaluate_arm(state, corpus, test_idx, tcfg.tau, cfg.n_pairs, cfg.folds, sub_seed(seed, "pairs"))
        results[name] = ArmResult(symface, metrics=state.metrics, seconds=time.perf_counter() - t0, **scores)
    return results
