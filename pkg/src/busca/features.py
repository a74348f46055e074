"""Appearance embeddings for detections.

Two sources are supported: a built-in extractor that turns an image crop
into pooled color statistics projected to F dimensions, and a loader for
precomputed per-detection feature files written by an external model.
Downstream code only relies on the contract: finite F-vector, unit norm.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .core import BBox

MAGIC = b"BUSF"

_GRID = 8  # pooled grid is _GRID x _GRID per channel
_HIST_BINS = 48  # total histogram bins across the 3 channels
_RAW_DIM = _GRID * _GRID * 3 + _HIST_BINS


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    crop_w: int = 128
    crop_h: int = 384

    def __post_init__(self):
        if self.crop_w <= 0 or self.crop_h <= 0:
            raise ValueError("patch extent must be positive")


_projection_cache: Dict[Tuple[int, int], np.ndarray] = {}


def _projection(f_dim: int, seed: int) -> np.ndarray:
    key = (f_dim, seed)
    if key not in _projection_cache:
        rng = np.random.default_rng(seed)
        _projection_cache[key] = rng.standard_normal((f_dim, _RAW_DIM)) / np.sqrt(_RAW_DIM)
    return _projection_cache[key]


def _resize_nearest(patch: np.ndarray, w: int, h: int) -> np.ndarray:
    ph, pw = patch.shape[:2]
    rows = np.minimum((np.arange(h) * ph) // h, ph - 1)
    cols = np.minimum((np.arange(w) * pw) // w, pw - 1)
    return patch[rows][:, cols]


def extract(
    image: np.ndarray,
    box: BBox,
    spec: PatchSpec = PatchSpec(),
    f_dim: int = 512,
    seed: int = 7,
) -> np.ndarray:
    """Unit-norm appearance vector of the image region under ``box``.

    The crop is clamped to the image; a box with no overlap at all is an
    error. Deterministic for fixed (image, box, seed).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None].repeat(3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3 or img.size == 0:
        raise FeatureError(f"expected H x W x 3 image, got shape {image.shape}")
    if img.max() > 1.0:
        img = img / 255.0
    ih, iw = img.shape[:2]
    x1 = int(np.floor(max(box.x1, 0.0)))
    y1 = int(np.floor(max(box.y1, 0.0)))
    x2 = int(np.ceil(min(box.x2, iw)))
    y2 = int(np.ceil(min(box.y2, ih)))
    if x2 <= x1 or y2 <= y1:
        raise FeatureError(f"box {box} does not intersect {iw}x{ih} image")
    patch = _resize_nearest(img[y1:y2, x1:x2], spec.crop_w, spec.crop_h)

    # Pooled grid: mean intensity of each cell, per channel.
    cells = patch.reshape(_GRID, spec.crop_h // _GRID, _GRID, spec.crop_w // _GRID, 3)
    grid = cells.mean(axis=(1, 3)).ravel()
    # Per-channel histogram, normalized to a distribution.
    per_channel = _HIST_BINS // 3
    hists = [
        np.histogram(patch[:, :, c], bins=per_channel, range=(0.0, 1.0))[0] for c in range(3)
    ]
    hist = np.concatenate(hists).astype(np.float64) / patch[:, :, 0].size

    raw = np.concatenate([grid, hist])
    vec = _projection(f_dim, seed) @ raw
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        raise FeatureError("degenerate descriptor (zero projection)")
    return (vec / norm).astype(np.float32)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two feature vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise FeatureError("cosine similarity of zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ----------------------------------------------------------------------------
# Binary feature files
# ----------------------------------------------------------------------------


def write_features(path, entries: Dict[Tuple[int, int], np.ndarray], f_dim: int) -> None:
    """Write a (frame, det_index) -> vector map in the binary layout."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", f_dim))
        for (frame, det_index) in sorted(entries):
            vec = np.asarray(entries[(frame, det_index)], dtype="<f4")
            if vec.shape != (f_dim,):
                raise FeatureError(
                    f"vector for frame {frame} det {det_index} has shape {vec.shape}, "
                    f"expected ({f_dim},)"
                )
            fh.write(struct.pack("<II", frame, det_index))
            fh.write(vec.tobytes())


def load_features(path, f_dim: int) -> Dict[Tuple[int, int], np.ndarray]:
    """Read a feature file back into a (frame, det_index) -> vector map.

    Raises on a bad magic, an F that disagrees with ``f_dim``, or a
    truncated record.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FeatureError(f"{path}: not a feature file (bad magic)")
    (file_dim,) = struct.unpack_from("<I", data, 4)
    if file_dim != f_dim:
        raise FeatureError(f"{path}: feature dim {file_dim} does not match configured {f_dim}")
    rec_size = 8 + 4 * f_dim
    body = data[8:]
    if len(body) % rec_size != 0:
        raise FeatureError(f"{path}: truncated record ({len(body)} bytes over {rec_size}-byte records)")
    out: Dict[Tuple[int, int], np.ndarray] = {}
    for off in range(0, len(body), rec_size):
        frame, det_index = struct.unpack_from("<II", body, off)
        vec = np.frombuffer(body, dtype="<f4", count=f_dim, offset=off + 8)
        out[(frame, det_index)] = vec.copy()
    return out
