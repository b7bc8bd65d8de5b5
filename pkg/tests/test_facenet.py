import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symface import numgrad as ng
from symface.facenet import (
    CheckpointError,
    ClassifierHead,
    Embedder,
    EmbedderConfig,
    load_checkpoint,
    logits,
    save_checkpoint,
)


def small_net(seed=0):
    return Embedder(EmbedderConfig((8, 8, 1), (12,), 4, seed))


def test_identical_images_identical_embeddings(rng):
    net = small_net()
    img = rng.normal(size=(8, 8))
    out = net.embed(np.stack([img, img.copy()]))
    assert out[0].tobytes() == out[1].tobytes()


def test_zero_weights_zero_embedding(rng):
    net = small_net()
    for t in net.params.values():
        t.data[...] = 0.0
    assert not net.embed(rng.normal(size=(3, 8, 8))).any()


def test_input_shape_checked():
    with pytest.raises(ng.DimensionError):
        small_net().embed(np.zeros((2, 7, 8)))


def test_embedding_dim_validated():
    with pytest.raises(ValueError):
        EmbedderConfig((8, 8, 1), (4,), 1)


def test_angular_logits_examples():
    head = ClassifierHead(ng.tensor([[2.0, 0.0], [0.0, 3.0]]))
    cos = logits(ng.tensor([[5.0, 0.0]]), head).data
    assert cos[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert cos[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_zero_embedding_in_angular_mode():
    head = ClassifierHead(ng.tensor([[1.0, 0.0]]))
    with pytest.raises(ng.DomainError):
        logits(ng.tensor([[0.0, 0.0]]), head)


def test_logits_match_scalar_oracle(rng):
    for _ in range(20):
        z = rng.normal(size=(3, 5))
        w = rng.normal(size=(4, 5))
        out = logits(ng.tensor(z), ClassifierHead(ng.tensor(w))).data
        for i in range(3):
            for j in range(4):
                dot = sum(a * b for a, b in zip(z[i], w[j]))
                nz = sum(a * a for a in z[i]) ** 0.5
                nw = sum(b * b for b in w[j]) ** 0.5
                assert out[i, j] == pytest.approx(dot / (nz * nw), abs=1e-12)
        plain = logits(ng.tensor(z), ClassifierHead(ng.tensor(w)), angular=False).data
        assert np.allclose(plain, z @ w.T, atol=1e-12)


@settings(max_examples=40)
@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3))
def test_angular_logits_bounded_and_scale_invariant(seed, c):
    r = np.random.default_rng(seed)
    z = r.normal(size=(4, 6))
    head = ClassifierHead(ng.tensor(r.normal(size=(3, 6))))
    a = logits(ng.tensor(z), head).data
    b = logits(ng.tensor(z * c), head).data
    assert np.all(np.abs(a) <= 1 + 1e-12)
    assert np.allclose(a, b, atol=1e-9)


def test_checkpoint_roundtrip(tmp_path, rng):
    arrays = {"b": rng.normal(size=(3,)), "a": rng.normal(size=(2, 4)), "s": np.array(1.5)}
    save_checkpoint(tmp_path / "c.bin", {"k": 1}, arrays)
    header, back = load_checkpoint(tmp_path / "c.bin")
    assert header["k"] == 1
    for k, v in arrays.items():
        assert back[k].tobytes() == v.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    save_checkpoint(p, {}, {"a": np.ones(4)})
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
