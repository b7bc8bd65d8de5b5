import json
import math
from dataclasses import replace

import numpy as np
import pytest

from symface.faceloss import MarginConfig
from symface.facenet import EmbedderConfig
from symface.synthgen import corpus_manifest, generate_corpus, train_test_indices
from symface.trainkit import (
    TrainConfig,
    TrainingDiverged,
    init_state,
    load_run,
    save_run,
    sgd_step,
    sub_seed,
    train,
)

ECFG = EmbedderConfig((16, 16, 1), (24,), 6)


def quick(**kw):
    base = dict(epochs=3, batch_size_slots=8, lr_steps=[(2, 0.001)])
    base.update(kw)
    return TrainConfig(**base)


def test_sgd_plain_step():
    w = {"w": np.array([1.0])}
    v = {}
    sgd_step(w, {"w": np.array([1.0])}, v, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert w["w"][0] == pytest.approx(0.9, abs=1e-15)


def test_sgd_momentum_only_history():
    w = {"w": np.array([0.0])}
    v = {"w": np.array([2.0])}
    sgd_step(w, {"w": np.array([0.0])}, v, lr=0.5, momentum=0.9, weight_decay=0.0)
    assert v["w"][0] == pytest.approx(1.8, abs=1e-15)
    assert w["w"][0] == pytest.approx(-0.9, abs=1e-15)


def test_sgd_two_step_recursion():
    lr, mu, wd = 0.05, 0.9, 5e-4
    w0, g1, g2 = 0.7, 0.3, -0.2
    v1 = g1 + wd * w0
    w1 = w0 - lr * v1
    v2 = mu * v1 + g2 + wd * w1
    w2 = w1 - lr * v2
    w = {"w": np.array([w0])}
    v = {}
    sgd_step(w, {"w": np.array([g1])}, v, lr, mu, wd)
    sgd_step(w, {"w": np.array([g2])}, v, lr, mu, wd)
    assert abs(w["w"][0] - w2) <= 1e-15


def test_sgd_rejects_bad_grad_without_touching_params():
    w = {"a": np.array([1.0]), "b": np.array([1.0])}
    with pytest.raises(ArithmeticError):
        sgd_step(w, {"a": np.array([1.0]), "b": np.array([math.nan])}, {}, 0.1, 0.9, 0.0)
    assert w["a"][0] == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_steps=[(5, 0.1), (3, 0.01)])
    with pytest.raises(ValueError):
        TrainConfig(lr_steps=[(5, -0.1)])
    cfg = TrainConfig(lr_initial=0.1, lr_steps=[(2, 0.01), (4, 0.001)])
    assert [cfg.lr_at(e) for e in range(6)] == [0.1, 0.1, 0.01, 0.01, 0.001, 0.001]


def test_single_class_rejected():
    with pytest.raises(ValueError):
        init_state(1, TrainConfig(), ECFG)


def test_sub_seeds_distinct():
    seeds = {sub_seed(0, s) for s in ("corpus", "plan", "init", "shuffle", "augment", "head", "pairs")}
    assert len(seeds) == 7
    assert sub_seed(0, "plan", 3) != sub_seed(0, "plan", 4)


def test_throughput_equals_effective_count(small_train):
    manifest, images = small_train
    state = train(manifest, images, quick(), ECFG)
    for row in state.metrics:
        n_sym = manifest.n_sym
        assert row["n_images"] == len(manifest) + row["n_split"]
        assert row["n_split"] == math.floor(0.3 * n_sym + 0.5)


def test_p_zero_matches_baseline(small_train):
    manifest, images = small_train
    a = train(manifest, images, quick(p=0.0, symface=True), ECFG)
    b = train(manifest, images, quick(p=0.0, symface=False), ECFG)
    assert json.dumps(a.metrics) == json.dumps(b.metrics)
    assert all(r["lrho"] == 0.0 for r in a.metrics)


def test_symface_changes_trajectory_but_not_epoch_zero_start(small_train):
    manifest, images = small_train
    a = train(manifest, images, quick(p=0.3, epochs=1), ECFG)
    b = train(manifest, images, quick(p=0.0, epochs=1), ECFG)
    assert a.metrics[0]["lrho"] > 0.0
    assert b.metrics[0]["lrho"] == 0.0


def test_determinism(small_train, tmp_path):
    manifest, images = small_train
    train(manifest, images, quick(), ECFG, log_path=tmp_path / "a.jsonl")
    train(manifest, images, quick(), ECFG, log_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_resume_is_bit_identical(small_train, tmp_path):
    manifest, images = small_train
    cfg = quick(epochs=4)
    full = train(manifest, images, cfg, ECFG)
    part = train(manifest, images, replace(cfg, epochs=2), ECFG)
    save_run(part, tmp_path / "c.bin", cfg)
    state, loaded_cfg = load_run(tmp_path / "c.bin")
    assert loaded_cfg == cfg
    resumed = train(manifest, images, cfg, state=state)
    assert json.dumps(resumed.metrics) == json.dumps(full.metrics[2:])
    for k, t in full.named_params().items():
        assert t.data.tobytes() == resumed.named_params()[k].data.tobytes()


def test_divergence_is_reported(small_train):
    manifest, images = small_train
    with pytest.raises(TrainingDiverged) as info:
        train(manifest, images, quick(lr_initial=1e6, lr_steps=[], epochs=5), ECFG)
    assert info.value.state is not None


def _halves(seed):
    corpus = generate_corpus(8, 30, (32, 32), seed=sub_seed(seed, "corpus"))
    train_idx, _ = train_test_indices(corpus, 0)
    manifest = corpus_manifest(corpus, train_idx, 0.2)
    images = {cid: img for cid, img in zip(corpus.ids, corpus.images)}
    return manifest, images


@pytest.mark.parametrize("seed", [0, 1])
def test_pair_distance_falls_during_training(seed):
    manifest, images = _halves(seed)
    state = train(manifest, images, TrainConfig(seed=seed), EmbedderConfig((32, 32, 1)))
    d = [r["pair_dist_mean"] for r in state.metrics]
    third = len(d) // 3
    assert np.mean(d[-third:]) < np.mean(d[:third])
