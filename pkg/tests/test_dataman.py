import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symface.dataman import (
    FaceRecord,
    Manifest,
    ManifestError,
    SourceEntry,
    assemble_batches,
    augment,
    batch_arrays,
    build_manifest,
    flip_item,
    make_item,
    normalize_pixels,
    plan_epoch,
    read_image,
    read_manifest,
    round_half_up,
    write_image,
    write_manifest,
)
from symface.symgeom import Landmarks, mirror


def lm_with_offset(d):
    return Landmarks((4.0, 5.0), (12.0, 5.0), (8.0 + d, 10.0))


def d_for_rho(rho):
    return float(np.sqrt(1.0 / rho - 1.0))


def random_records(rng, n, tau=0.2, width=16):
    recs = []
    for i in range(n):
        if rng.random() < 0.1:
            lm = Landmarks.undetected()
            rho = 0.0
        else:
            d = float(rng.choice([0.0, 0.5, 1.0, 1.9, 2.5, 3.0, 4.0]))
            lm = lm_with_offset(d)
            rho = 1.0 / (1.0 + d * d)
        recs.append(FaceRecord(f"r{i:05d}", "", int(rng.integers(0, 5)), lm, rho, rho > tau))
    return Manifest(recs, tau)


def test_build_manifest_flags():
    sources = [
        SourceEntry("a", "a.pgm", 0, lm_with_offset(0.0)),
        SourceEntry("b", "b.pgm", 1, lm_with_offset(d_for_rho(0.38))),
        SourceEntry("c", "c.pgm", 0, lm_with_offset(2.0)),
        SourceEntry("d", "d.pgm", 1, Landmarks.undetected()),
    ]
    m = build_manifest(sources, 0.2)
    assert [r.symmetric for r in m] == [True, True, False, False]
    assert [r.rho for r in m][0] == 1.0 and m.records[3].rho == 0.0


def test_build_manifest_empty():
    m = build_manifest([], 0.2)
    assert len(m) == 0 and m.n_sym == 0


def test_build_manifest_sorted_and_duplicate():
    m = build_manifest([SourceEntry(i, "", 0, lm_with_offset(0)) for i in ("z", "b", "m")], 0.2)
    assert [r.id for r in m] == ["b", "m", "z"]
    with pytest.raises(ManifestError):
        build_manifest([SourceEntry("x", "", 0, lm_with_offset(0))] * 2, 0.2)


def test_build_manifest_skips_unreadable(tmp_path, caplog):
    good = tmp_path / "good.pgm"
    write_image(np.zeros((4, 4), np.uint8), good)
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"not an image")
    sources = [SourceEntry("g", str(good), 0, lm_with_offset(0)), SourceEntry("b", str(bad), 0, lm_with_offset(0)),
               SourceEntry("m", str(tmp_path / "missing.pgm"), 1, lm_with_offset(0))]
    m = build_manifest(sources, 0.2, load_image=read_image)
    assert [r.id for r in m] == ["g"]
    assert "skipping" in caplog.text


def test_manifest_roundtrip(tmp_path, rng):
    m = random_records(rng, 30)
    path = tmp_path / "m.jsonl"
    write_manifest(m, path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    first = json.loads(raw.splitlines()[1])
    assert set(first) == {"id", "path", "label", "lm", "detected", "rho", "sym"}
    back = read_manifest(path)
    assert back.tau == m.tau
    assert [r.to_json() for r in back] == [r.to_json() for r in m]


def test_manifest_rejects_inconsistent_flag():
    with pytest.raises(ManifestError):
        Manifest([FaceRecord("a", "", 0, lm_with_offset(0), 1.0, False)], 0.2)


def test_image_roundtrip(tmp_path, rng):
    for shape in [(5, 7), (5, 7, 3)]:
        img = rng.integers(0, 256, size=shape).astype(np.uint8)
        write_image(img, tmp_path / "x.pnm")
        assert np.array_equal(read_image(tmp_path / "x.pnm"), img)


@pytest.mark.parametrize("n,n_sym,p,n_split", [(100, 50, 0.3, 15), (100, 50, 0.0, 0), (100, 50, 1.0, 50)])
def test_plan_examples(n, n_sym, p, n_split):
    recs = [FaceRecord(f"{i:03d}", "", 0, lm_with_offset(0 if i < n_sym else 3), 1.0 if i < n_sym else 0.1, i < n_sym)
            for i in range(n)]
    plan = plan_epoch(Manifest(recs, 0.2), p, 3)
    assert plan.n_split == n_split
    assert plan.n_effective == n + n_split
    assert sum(plan.split_flags.values()) == n_split


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(0, 60), p=st.floats(0, 1))
def test_plan_invariants(seed, n, p):
    m = random_records(np.random.default_rng(seed), n)
    plan = plan_epoch(m, p, seed)
    assert plan.n_effective == n + round_half_up(p * m.n_sym)
    by_id = m.by_id()
    assert all(by_id[i].rho > m.tau for i, h in plan.split_flags.items() if h)
    again = plan_epoch(m, p, seed)
    assert again == plan


def test_split_count_mean_over_seeds(rng):
    m = random_records(rng, 80)
    counts = [plan_epoch(m, 0.3, s).n_split for s in range(1000)]
    # exact-count sampling: the mean equals the rounded target with zero variance
    assert np.mean(counts) == round_half_up(0.3 * m.n_sym)
    assert abs(np.mean(counts) - 0.3 * m.n_sym) <= 0.5


def _images_for(m, w=16):
    return {r.id: np.full((4, w), i % 250, np.uint8) for i, r in enumerate(m)}


def test_batches_all_pairs():
    recs = [FaceRecord(f"{i:03d}", "", 0, lm_with_offset(0), 1.0, True) for i in range(75)]
    m = Manifest(recs, 0.2)
    plan = plan_epoch(m, 1.0, 0)
    batches = assemble_batches(plan, m, 75, 1, _images_for(m))
    assert len(batches) == 1
    assert sum(it.n_images for it in batches[0]) == 150


def test_batches_no_splits():
    recs = [FaceRecord(f"{i:03d}", "", 0, lm_with_offset(0), 1.0, True) for i in range(75)]
    m = Manifest(recs, 0.2)
    batches = assemble_batches(plan_epoch(m, 0.0, 0), m, 75, 1, _images_for(m))
    assert sum(it.n_images for it in batches[0]) == 75


def test_batch_pair_contiguous():
    recs = [FaceRecord("a", "", 0, lm_with_offset(0), 1.0, True), FaceRecord("b", "", 1, lm_with_offset(3), 0.1, False)]
    m = Manifest(recs, 0.2)
    plan = plan_epoch(m, 1.0, 0)
    (batch,) = assemble_batches(plan, m, 2, 0, _images_for(m))
    x, labels, left, right, rho = batch_arrays(batch)
    assert x.shape[0] == 3
    assert right[0] == left[0] + 1
    assert labels[left[0]] == labels[right[0]] == 0
    assert rho.tolist() == [1.0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 50), slots=st.integers(1, 9))
def test_batches_are_a_permutation(seed, n, slots):
    m = random_records(np.random.default_rng(seed), n)
    plan = plan_epoch(m, 0.3, seed)
    batches = assemble_batches(plan, m, slots, seed + 1, _images_for(m))
    items = [it for b in batches for it in b]
    assert sorted(it.record_id for it in items) == [r.id for r in m]
    assert all(len(b) <= slots for b in batches)
    assert sum(it.n_images for it in items) == plan.n_effective
    assert {it.record_id for it in items if it.kind == "half_pair"} == {k for k, v in plan.split_flags.items() if v}
    again = assemble_batches(plan, m, slots, seed + 1, _images_for(m))
    assert [it.record_id for b in again for it in b] == [it.record_id for it in items]


def test_normalize_pixels():
    assert normalize_pixels(np.array([127.5, 255.0])).tolist() == [0.0, 0.99609375]


def test_augment_no_flip_keeps_geometry(rng):
    img = rng.integers(0, 256, size=(4, 16)).astype(np.uint8)
    rec = FaceRecord("a", "", 0, lm_with_offset(0), 1.0, True)
    item = make_item(rec, img, split=True)
    out = augment(item, 0.0, 0)
    assert np.array_equal(out.images[0], normalize_pixels(item.images[0]))
    assert np.array_equal(out.images[1], normalize_pixels(item.images[1]))


def test_flip_is_involution_and_swaps_roles(rng):
    img = rng.integers(0, 256, size=(4, 16)).astype(np.uint8)
    rec = FaceRecord("a", "", 0, lm_with_offset(0), 1.0, True)
    item = make_item(rec, img, split=True)
    once = flip_item(item)
    assert np.array_equal(once.images[0], mirror(item.images[1]))
    twice = flip_item(once)
    assert all(np.array_equal(a, b) for a, b in zip(twice.images, item.images))
    full = make_item(rec, img, split=False)
    assert np.array_equal(flip_item(flip_item(full)).images[0], img)


def test_augment_flip_always(rng):
    img = rng.integers(0, 256, size=(4, 16)).astype(np.uint8)
    item = make_item(FaceRecord("a", "", 0, lm_with_offset(0), 1.0, True), img, split=False)
    out = augment(item, 1.0, 0)
    assert np.array_equal(out.images[0], normalize_pixels(mirror(img)))
