"""Face manifests, per-epoch split planning, batch assembly and augmentation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
from PIL import Image

from .symgeom import Landmarks, classify_symmetric, frontness_score, mirror, split_column, split_face

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "symface-manifest/1"
PIXEL_MEAN = 127.5
PIXEL_SCALE = 128.0


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class FaceRecord:
    id: str
    path: str
    label: int
    landmarks: Landmarks
    rho: float
    symmetric: bool

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "label": self.label,
            "lm": [list(p) for p in (self.landmarks.left_eye, self.landmarks.right_eye, self.landmarks.nose)],
            "detected": self.landmarks.detected,
            "rho": self.rho,
            "sym": self.symmetric,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "FaceRecord":
        try:
            lm = Landmarks.from_array(obj["lm"], detected=bool(obj["detected"]))
            return cls(str(obj["id"]), str(obj["path"]), int(obj["label"]), lm, float(obj["rho"]), bool(obj["sym"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest record: {obj!r}") from exc


@dataclass
class Manifest:
    records: list[FaceRecord]
    tau: float

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.id)
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise ManifestError(f"duplicate record id {r.id!r}")
            seen.add(r.id)
            if r.symmetric != (r.rho > self.tau):
                raise ManifestError(f"record {r.id!r}: sym={r.symmetric} disagrees with rho={r.rho} at tau={self.tau}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[FaceRecord]:
        return iter(self.records)

    @property
    def n_sym(self) -> int:
        return sum(r.symmetric for r in self.records)

    @property
    def num_classes(self) -> int:
        return len({r.label for r in self.records})

    def by_id(self) -> dict[str, FaceRecord]:
        return {r.id: r for r in self.records}

    def with_tau(self, tau: float) -> "Manifest":
        """Re-threshold every record at ``tau`` (rho values are unchanged)."""
        recs = [
            FaceRecord(r.id, r.path, r.label, r.landmarks, r.rho, classify_symmetric(r.rho, tau))
            for r in self.records
        ]
        return Manifest(recs, tau)


@dataclass(frozen=True)
class SourceEntry:
    """One image plus the (possibly undetected) landmarks an external detector produced."""

    id: str
    path: str
    label: int
    landmarks: Landmarks


def build_manifest(
    sources: Iterable[SourceEntry],
    tau: float,
    load_image: Callable[[str], object] | None = None,
) -> Manifest:
    """Score every source image and threshold it at ``tau``.

    If ``load_image`` is given it is called on each path; images it fails to read
    are logged and left out of the manifest.
    """
    records = []
    ids = set()
    for src in sources:
        if src.id in ids:
            raise ManifestError(f"duplicate record id {src.id!r}")
        ids.add(src.id)
        if load_image is not None:
            try:
                load_image(src.path)
            except (OSError, ValueError) as exc:
                logger.warning("skipping unreadable image %s (%s): %s", src.id, src.path, exc)
                continue
        rho = frontness_score(src.landmarks).rho
        records.append(FaceRecord(src.id, src.path, int(src.label), src.landmarks, rho, classify_symmetric(rho, tau)))
    return Manifest(records, tau)


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """JSON Lines: one header object carrying the schema tag and tau, then one record per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": MANIFEST_SCHEMA, "tau": manifest.tau}) + "\n")
        for r in manifest.records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    tau = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON") from exc
            if "schema" in obj:
                if obj["schema"] != MANIFEST_SCHEMA:
                    raise ManifestError(f"unsupported manifest schema {obj['schema']!r}")
                tau = float(obj["tau"])
                continue
            records.append(FaceRecord.from_json(obj))
    if tau is None:
        raise ManifestError(f"{path}: missing manifest header")
    return Manifest(records, tau)


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def write_image(img: np.ndarray, path: str | Path) -> None:
    """Write an 8-bit image as binary PGM (grayscale) or PPM (RGB)."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    # Pillow's PPM writer emits P5 for mode "L" and P6 for "RGB".
    Image.fromarray(arr).save(path, format="PPM")


# ---------------------------------------------------------------- epoch planning


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class EpochPlan:
    epoch_seed: int
    split_flags: dict[str, bool]
    n_total: int
    n_sym: int
    n_split: int
    p: float

    @property
    def n_effective(self) -> int:
        return self.n_total + self.n_split


def plan_epoch(manifest: Manifest, p: float, seed: int) -> EpochPlan:
    """Choose exactly ``round(p * N_sym)`` symmetric records to split this epoch."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    sym_ids = [r.id for r in manifest.records if r.symmetric]
    k = min(round_half_up(p * len(sym_ids)), len(sym_ids))
    rng = np.random.default_rng(seed)
    chosen = set()
    if k:
        chosen = {sym_ids[i] for i in rng.choice(len(sym_ids), size=k, replace=False)}
    flags = {r.id: r.id in chosen for r in manifest.records}
    return EpochPlan(int(seed), flags, len(manifest), len(sym_ids), k, float(p))


# ---------------------------------------------------------------- batches


@dataclass(frozen=True)
class BatchItem:
    kind: str  # "full" | "half_pair"
    images: tuple[np.ndarray, ...]
    label: int
    rho: float
    record_id: str = ""

    @property
    def n_images(self) -> int:
        return len(self.images)


ImageSource = Mapping[str, np.ndarray] | Callable[[FaceRecord], np.ndarray]


def image_loader(images: ImageSource) -> Callable[[FaceRecord], np.ndarray]:
    if callable(images):
        return images
    return lambda rec: images[rec.id]


def make_item(record: FaceRecord, image: np.ndarray, split: bool) -> BatchItem:
    if not split:
        return BatchItem("full", (image,), record.label, record.rho, record.id)
    pair = split_face(image, split_column(record.landmarks, image.shape[1]))
    return BatchItem("half_pair", (pair.left_padded, pair.right_padded), record.label, record.rho, record.id)


def assemble_batches(
    plan: EpochPlan,
    manifest: Manifest,
    batch_size_slots: int,
    seed: int,
    images: ImageSource,
) -> list[list[BatchItem]]:
    """Shuffle every record into slots; split records become one two-image half pair."""
    if batch_size_slots < 1:
        raise ValueError("batch_size_slots must be >= 1")
    load = image_loader(images)
    order = np.random.default_rng(seed).permutation(len(manifest.records))
    items = []
    for i in order:
        rec = manifest.records[i]
        items.append(make_item(rec, load(rec), plan.split_flags.get(rec.id, False)))
    return [items[i : i + batch_size_slots] for i in range(0, len(items), batch_size_slots)]


def normalize_pixels(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float64) - PIXEL_MEAN) / PIXEL_SCALE


def flip_item(item: BatchItem) -> BatchItem:
    """Mirror an item; a mirrored left hemi face becomes the right one and vice versa."""
    if item.kind == "full":
        images = (mirror(item.images[0]),)
    else:
        left, right = item.images
        images = (mirror(right), mirror(left))
    return BatchItem(item.kind, images, item.label, item.rho, item.record_id)


def augment(item: BatchItem, flip_prob: float, rng: np.random.Generator | int | None) -> BatchItem:
    """Normalize pixels to roughly [-1, 1] and mirror with probability ``flip_prob``."""
    if not 0.0 <= flip_prob <= 1.0:
        raise ValueError("flip_prob must be in [0, 1]")
    rng = np.random.default_rng(rng)
    out = BatchItem(item.kind, tuple(normalize_pixels(im) for im in item.images), item.label, item.rho, item.record_id)
    if flip_prob > 0 and rng.random() < flip_prob:
        out = flip_item(out)
    return out


def batch_arrays(batch: Sequence[BatchItem]):
    """Stack a batch into one image array, per-row labels, and pair row indices.

    Returns ``(images, labels, left_rows, right_rows, pair_rho)``; half pairs occupy
    two adjacent rows.
    """
    images, labels, left_rows, right_rows, rho = [], [], [], [], []
    for item in batch:
        if item.kind == "half_pair":
            left_rows.append(len(images))
            right_rows.append(len(images) + 1)
            rho.append(item.rho)
        images.extend(item.images)
        labels.extend([item.label] * item.n_images)
    return (
        np.stack(images) if images else np.zeros((0,)),
        np.asarray(labels, dtype=np.intp),
        np.asarray(left_rows, dtype=np.intp),
        np.asarray(right_rows, dtype=np.intp),
        np.asarray(rho, dtype=np.float64),
    )
