"""Three-point frontness scoring and vertical hemi-face splitting.

Landmark coordinates are continuous pixel coordinates: column ``c`` of an image
covers ``[c, c + 1)`` on the x axis, so a face whose mirror axis sits between
columns ``W/2 - 1`` and ``W/2`` has its nose at ``x = W/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidLandmarksError(ValueError):
    pass


class DegenerateSplitError(ValueError):
    pass


class InvalidPairError(ValueError):
    pass


@dataclass(frozen=True)
class Landmarks:
    """Two eyes and a nose tip, ``(x, y)`` in pixels; eyes are stored left-to-right."""

    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    nose: tuple[float, float]
    detected: bool = True

    def __post_init__(self):
        le = tuple(float(v) for v in self.left_eye)
        re = tuple(float(v) for v in self.right_eye)
        if le[0] > re[0]:
            le, re = re, le
        object.__setattr__(self, "left_eye", le)
        object.__setattr__(self, "right_eye", re)
        object.__setattr__(self, "nose", tuple(float(v) for v in self.nose))

    @classmethod
    def undetected(cls) -> "Landmarks":
        return cls((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), detected=False)

    @classmethod
    def from_array(cls, points, detected: bool = True) -> "Landmarks":
        """Build from a ``(3, 2)`` array ordered left eye, right eye, nose."""
        pts = np.asarray(points, dtype=float).reshape(3, 2)
        return cls(tuple(pts[0]), tuple(pts[1]), tuple(pts[2]), detected=detected)

    def to_array(self) -> np.ndarray:
        return np.array([self.left_eye, self.right_eye, self.nose], dtype=float)

    def check_bounds(self, height: int, width: int) -> None:
        if not self.detected:
            return
        pts = self.to_array()
        if not np.all(np.isfinite(pts)):
            raise InvalidLandmarksError("non-finite landmark coordinate")
        if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > width) or np.any(pts[:, 1] < 0) or np.any(
            pts[:, 1] > height
        ):
            raise InvalidLandmarksError(f"landmarks outside a {height}x{width} image")


@dataclass(frozen=True)
class FrontnessScore:
    discrepancy: float
    rho: float


@dataclass(frozen=True)
class SplitPair:
    left_padded: np.ndarray
    right_padded: np.ndarray
    split_column: int
    source_dims: tuple[int, int]


def frontness_score(lm: Landmarks) -> FrontnessScore:
    """Horizontal nose-to-eye-midpoint discrepancy and its frontness coefficient.

    Undetected landmarks score ``rho = 0.0`` with an infinite discrepancy.
    """
    if not lm.detected:
        return FrontnessScore(math.inf, 0.0)
    xs = (lm.left_eye[0], lm.right_eye[0], lm.nose[0])
    if not all(math.isfinite(v) for v in (*xs, lm.left_eye[1], lm.right_eye[1], lm.nose[1])):
        raise InvalidLandmarksError("non-finite landmark coordinate")
    d = abs(xs[2] - (xs[0] + xs[1]) / 2.0)
    return FrontnessScore(d, 1.0 / (1.0 + d * d))


def classify_symmetric(rho: float, tau: float) -> bool:
    """True when ``rho`` strictly exceeds ``tau``."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")
    return rho > tau


def split_column(lm: Landmarks, width: int) -> int:
    """Integer split column for a nose at continuous ``x``, rounded half up and kept in ``[1, W-1]``."""
    col = int(math.floor(lm.nose[0] + 0.5))
    return min(max(col, 1), width - 1)


def _center_offset(width: int, content: int) -> int:
    return (width - content) // 2


def split_face(img: np.ndarray, n_x: int) -> SplitPair:
    """Split ``img`` into columns ``[0, n_x)`` and ``[n_x, W)``, each centred on a zero canvas."""
    img = np.asarray(img)
    if img.ndim < 2:
        raise ValueError("image must be at least 2-D (H, W[, C])")
    h, w = img.shape[:2]
    if not 1 <= n_x <= w - 1:
        raise DegenerateSplitError(f"split column {n_x} leaves an empty half (W={w})")
    left = np.zeros_like(img)
    right = np.zeros_like(img)
    wl, wr = n_x, w - n_x
    ol, or_ = _center_offset(w, wl), _center_offset(w, wr)
    left[:, ol : ol + wl] = img[:, :n_x]
    right[:, or_ : or_ + wr] = img[:, n_x:]
    return SplitPair(left, right, int(n_x), (h, w))


def content_slices(pair: SplitPair) -> tuple[slice, slice]:
    """Column slices of the content regions inside the left and right canvases."""
    _, w = pair.source_dims
    wl, wr = pair.split_column, w - pair.split_column
    ol, or_ = _center_offset(w, wl), _center_offset(w, wr)
    return slice(ol, ol + wl), slice(or_, or_ + wr)


def unsplit(pair: SplitPair) -> np.ndarray:
    """Strip the padding from both halves and rejoin them column-wise."""
    h, w = pair.source_dims
    for half in (pair.left_padded, pair.right_padded):
        if half.shape[:2] != (h, w):
            raise InvalidPairError(f"half has dims {half.shape[:2]}, expected {(h, w)}")
    if pair.left_padded.shape != pair.right_padded.shape:
        raise InvalidPairError("halves differ in shape")
    if not 1 <= pair.split_column <= w - 1:
        raise InvalidPairError(f"split column {pair.split_column} invalid for W={w}")
    ls, rs = content_slices(pair)
    return np.concatenate([pair.left_padded[:, ls], pair.right_padded[:, rs]], axis=1)


def mirror(img: np.ndarray) -> np.ndarray:
    """Horizontal mirror (left-right flip)."""
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])
