"""Procedural grayscale face corpus with exact landmarks and controllable symmetry.

Each identity is a fixed layout of primitives (face ellipse, eyes, brows, nose
bar, mouth). Every asymmetric ingredient of an image (one-sided blemish, eye
contrast, lateral lighting, the non-mirrored part of the noise) is scaled by the
image's asymmetry level, so level 0 at pose 0 renders an exact mirror image.
The pose offset moves the nose tip, and part of the mouth, sideways while the
eyes stay put, so the three-point discrepancy equals ``|pose_offset|``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataman import Manifest, SourceEntry, build_manifest, write_image, write_manifest
from .symgeom import Landmarks

_ID_STREAM = 1 << 20


@dataclass(frozen=True)
class IdentitySpec:
    seed: int
    face_half_width: float
    face_half_height: float
    face_center_y: float
    skin: float
    background: float
    eye_y: float
    eye_half_sep: float
    eye_radius: float
    eye_value: float
    brow_gap: float
    brow_half_len: float
    brow_value: float
    nose_tip_y: float
    nose_half_width: float
    nose_value: float
    mouth_y: float
    mouth_half_width: float
    mouth_half_height: float
    mouth_value: float
    cheek_value: float
    blemish_x: float
    blemish_y: float


@dataclass(frozen=True)
class PoseDistribution:
    """With probability ``frontal_fraction`` the offset is 0, else ``±U(min_offset, max_offset)``."""

    frontal_fraction: float = 0.5
    min_offset: float = 2.0
    max_offset: float = 5.0

    def sample(self, rng: np.random.Generator) -> float:
        if rng.random() < self.frontal_fraction:
            return 0.0
        return float(rng.choice([-1.0, 1.0]) * rng.uniform(self.min_offset, self.max_offset))


@dataclass(frozen=True)
class AsymmetryDistribution:
    """Asymmetry level drawn uniformly from ``[low, high]`` (both within [0, 1])."""

    low: float = 0.0
    high: float = 0.5

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low, self.high)) if self.high > self.low else float(self.low)


@dataclass
class Corpus:
    images: np.ndarray  # (N, H, W) uint8
    landmarks: list[Landmarks]
    labels: np.ndarray
    ids: list[str]
    asymmetry: np.ndarray
    pose_offset: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def sample_identity(seed: int, identity: int, dims: tuple[int, int]) -> IdentitySpec:
    h, w = dims
    rng = np.random.default_rng(np.random.SeedSequence([seed, identity, _ID_STREAM]))
    u = rng.uniform
    eye_y = u(0.34, 0.44) * h
    half_sep = u(0.14, 0.22) * w
    return IdentitySpec(
        seed=seed,
        face_half_width=u(0.32, 0.44) * w,
        face_half_height=u(0.40, 0.48) * h,
        face_center_y=u(0.48, 0.54) * h,
        skin=u(110, 210),
        background=u(10, 70),
        eye_y=eye_y,
        eye_half_sep=half_sep,
        eye_radius=u(1.0, 2.6) * w / 32,
        eye_value=u(0, 70),
        brow_gap=u(2.0, 4.5) * h / 32,
        brow_half_len=u(1.5, 3.5) * w / 32,
        brow_value=u(0, 110),
        nose_tip_y=eye_y + u(0.16, 0.26) * h,
        nose_half_width=u(0.6, 1.8) * w / 32,
        nose_value=u(60, 250),
        mouth_y=u(0.70, 0.82) * h,
        mouth_half_width=u(0.08, 0.20) * w,
        mouth_half_height=u(0.6, 1.8) * h / 32,
        mouth_value=u(20, 120),
        cheek_value=u(-40, 40),
        blemish_x=u(0.12, 0.30) * w,
        blemish_y=u(0.45, 0.65) * h,
    )


def _soft(mask_dist: np.ndarray) -> np.ndarray:
    """Anti-aliased coverage from a signed distance (negative inside)."""
    return np.clip(0.5 - mask_dist, 0.0, 1.0)


def render_face(
    spec: IdentitySpec,
    dims: tuple[int, int],
    asymmetry: float,
    pose_offset: float,
    rng: np.random.Generator,
    noise_sigma: float = 6.0,
) -> tuple[np.ndarray, Landmarks]:
    """Render one image and its ground-truth landmarks."""
    h, w = dims
    cx = w / 2.0
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    dx = xs - cx
    dy_jit = rng.uniform(-0.8, 0.8)
    scale = rng.uniform(0.95, 1.05)

    img = np.full((h, w), spec.background, dtype=np.float64)

    # face ellipse
    r = np.sqrt((dx / (spec.face_half_width * scale)) ** 2 + ((ys - spec.face_center_y - dy_jit) / (spec.face_half_height * scale)) ** 2)
    face = _soft((r - 1.0) * spec.face_half_width)
    img += face * (spec.skin - spec.background)

    # symmetric cheeks
    d = np.sqrt((np.abs(dx) - spec.eye_half_sep * 1.1) ** 2 + (ys - spec.nose_tip_y - dy_jit) ** 2)
    img += face * spec.cheek_value * np.exp(-(d**2) / 8.0)
    # eyes and brows (eyes never move with pose)
    ey = spec.eye_y + dy_jit
    eye_d = np.sqrt((np.abs(dx) - spec.eye_half_sep) ** 2 + (ys - ey) ** 2) - spec.eye_radius * scale
    eye_cov = _soft(eye_d)
    eye_contrast = np.where(dx > 0, 1.0 - 0.5 * asymmetry, 1.0)
    img = img * (1 - eye_cov * eye_contrast) + spec.eye_value * eye_cov * eye_contrast
    brow_y = ey - spec.brow_gap
    brow_cov = _soft(np.abs(ys - brow_y) - 0.6) * _soft(np.abs(np.abs(dx) - spec.eye_half_sep) - spec.brow_half_len)
    img = img * (1 - brow_cov) + spec.brow_value * brow_cov

    # nose bar from under the eyes to the tip, leaning toward the pose offset
    top, tip = ey + 1.5, spec.nose_tip_y + dy_jit
    t = np.clip((ys - top) / max(tip - top, 1e-6), 0.0, 1.0)
    nose_x = cx + pose_offset * t
    nose_cov = _soft(np.abs(xs - nose_x) - spec.nose_half_width) * _soft(np.maximum(top - ys, ys - tip))
    img = img * (1 - nose_cov) + spec.nose_value * nose_cov

    # mouth
    mx = cx + 0.6 * pose_offset
    mr = np.sqrt(((xs - mx) / spec.mouth_half_width) ** 2 + ((ys - spec.mouth_y - dy_jit) / spec.mouth_half_height) ** 2)
    mouth_cov = _soft((mr - 1.0) * spec.mouth_half_height * 2)
    img = img * (1 - mouth_cov) + spec.mouth_value * mouth_cov

    # asymmetric ingredients, all proportional to the asymmetry level
    if asymmetry > 0:
        bd = np.sqrt((xs - spec.blemish_x) ** 2 + (ys - spec.blemish_y) ** 2)
        img -= face * asymmetry * 90.0 * np.exp(-(bd**2) / 2.0)
        img += asymmetry * rng.normal(0.0, 25.0) * (dx / w)

    # global lighting: brightness and a vertical gradient keep the mirror symmetry
    img = img * rng.uniform(0.85, 1.15) + rng.normal(0.0, 12.0) * ((ys - h / 2) / h)

    half = (w + 1) // 2
    sym_noise = rng.normal(0.0, noise_sigma, size=(h, half))
    sym_full = np.concatenate([sym_noise, sym_noise[:, : w - half][:, ::-1]], axis=1)
    img += sym_full
    if asymmetry > 0:
        img += asymmetry * rng.normal(0.0, noise_sigma, size=(h, w))

    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    lm = Landmarks(
        (cx - spec.eye_half_sep, ey),
        (cx + spec.eye_half_sep, ey),
        (cx + pose_offset, tip),
    )
    return out, lm


def generate_corpus(
    num_ids: int,
    imgs_per_id: int,
    dims: tuple[int, int] = (32, 32),
    asymmetry: AsymmetryDistribution = AsymmetryDistribution(),
    pose: PoseDistribution = PoseDistribution(),
    seed: int = 0,
    noise_sigma: float = 6.0,
) -> Corpus:
    """Deterministic corpus of ``num_ids * imgs_per_id`` images, grouped by identity."""
    h, w = dims
    if h < 16 or w < 16:
        raise ValueError("dims must be at least 16x16")
    if num_ids < 2:
        raise ValueError("need at least two identities")
    if w % 2:
        raise ValueError("width must be even so the frontal mirror axis falls on a column boundary")
    images, lms, labels, ids, asyms, poses = [], [], [], [], [], []
    for ident in range(num_ids):
        spec = sample_identity(seed, ident, dims)
        for k in range(imgs_per_id):
            rng = np.random.default_rng(np.random.SeedSequence([seed, ident, k]))
            a = asymmetry.sample(rng)
            off = pose.sample(rng)
            img, lm = render_face(spec, dims, a, off, rng, noise_sigma)
            images.append(img)
            lms.append(lm)
            labels.append(ident)
            ids.append(f"id{ident:04d}_img{k:04d}")
            asyms.append(a)
            poses.append(off)
    return Corpus(np.stack(images), lms, np.asarray(labels), ids, np.asarray(asyms), np.asarray(poses))


def train_test_indices(corpus: Corpus, holdout_per_id: int) -> tuple[np.ndarray, np.ndarray]:
    """The last ``holdout_per_id`` images of every identity form the test split."""
    train, test = [], []
    for label in np.unique(corpus.labels):
        idx = np.flatnonzero(corpus.labels == label)
        cut = len(idx) - holdout_per_id
        train.extend(idx[:cut])
        test.extend(idx[cut:])
    return np.asarray(train, dtype=int), np.asarray(test, dtype=int)


def corpus_manifest(corpus: Corpus, indices, tau: float, paths: list[str] | None = None) -> Manifest:
    paths = paths or [f"images/{i}.pgm" for i in corpus.ids]
    sources = [SourceEntry(corpus.ids[i], paths[i], int(corpus.labels[i]), corpus.landmarks[i]) for i in indices]
    return build_manifest(sources, tau)


def write_corpus(corpus: Corpus, out_dir: str | Path, tau: float = 0.2, holdout_per_id: int = 0) -> dict:
    """Write images, raw landmarks and pre-built train/test manifests under ``out_dir``.

    Returns a summary dict with the written paths and counts.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    paths = []
    for img, cid in zip(corpus.images, corpus.ids):
        rel = f"images/{cid}.pgm"
        write_image(img, out / rel)
        paths.append(str((out / rel).resolve()))
    with open(out / "landmarks.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for i, cid in enumerate(corpus.ids):
            lm = corpus.landmarks[i]
            fh.write(
                json.dumps(
                    {
                        "id": cid,
                        "path": paths[i],
                        "label": int(corpus.labels[i]),
                        "lm": lm.to_array().tolist(),
                        "detected": lm.detected,
                    }
                )
                + "\n"
            )
    train_idx, test_idx = train_test_indices(corpus, holdout_per_id)
    summary = {"n_images": len(corpus), "num_ids": int(len(np.unique(corpus.labels)))}
    train = corpus_manifest(corpus, train_idx, tau, paths)
    write_manifest(train, out / "manifest_train.jsonl")
    summary["train"] = {"path": str(out / "manifest_train.jsonl"), "n": len(train), "n_sym": train.n_sym}
    if len(test_idx):
        test = corpus_manifest(corpus, test_idx, tau, paths)
        write_manifest(test, out / "manifest_test.jsonl")
        summary["test"] = {"path": str(out / "manifest_test.jsonl"), "n": len(test), "n_sym": test.n_sym}
    return summary
