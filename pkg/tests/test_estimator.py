import numpy as np
import pytest
from sklearn.base import clone

from symface.estimator import FrontnessScorer, SymFaceEmbedder, check_images, check_landmarks
from symface.synthgen import generate_corpus


def test_scorer_transform_and_predict():
    lms = np.array([
        [[30, 40], [70, 40], [50, 80]],
        [[28, 40], [68, 40], [50, 80]],
        [[np.nan, np.nan], [np.nan, np.nan], [np.nan, np.nan]],
    ], dtype=float)
    sc = FrontnessScorer(tau=0.2).fit(lms)
    assert sc.transform(lms)[:, 0] == pytest.approx([1.0, 0.2, 0.0])
    assert sc.predict(lms).tolist() == [True, False, False]
    assert sc.get_params() == {"tau": 0.2}


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_images(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        check_images(np.full((1, 4, 4), np.nan))
    with pytest.raises(ValueError):
        check_landmarks(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        check_landmarks(np.zeros((2, 3, 2)), n=3)


def test_embedder_fit_transform_predict():
    c = generate_corpus(3, 12, (16, 16), seed=4)
    lms = np.stack([lm.to_array() for lm in c.landmarks])
    est = SymFaceEmbedder(embedding_dim=4, hidden=(16,), epochs=4, batch_size=8, lr_steps=())
    est.fit(c.images, c.labels, landmarks=lms)
    emb = est.transform(c.images)
    assert emb.shape == (36, 4) and np.all(np.isfinite(emb))
    assert est.predict(c.images).shape == (36,)
    assert 0.0 <= est.score(c.images, c.labels) <= 1.0
    assert any(r["n_split"] > 0 for r in est.metrics_)
    assert clone(est).get_params()["embedding_dim"] == 4


def test_embedder_needs_two_classes():
    with pytest.raises(ValueError):
        SymFaceEmbedder(epochs=1).fit(np.zeros((3, 16, 16)), [0, 0, 0])
