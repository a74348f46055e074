"""Spatio-temporal encoding of tokens relative to a track anchor.

Every token entering the decision model carries, besides appearance, a
three-channel description of where and when it sits relative to the
track's last observation (the anchor): a time offset, a log size ratio,
and a log normalized center distance. Each channel is then expanded into
a sinusoidal embedding block, which is what the model consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BBox


@dataclass(frozen=True)
class Anchor:
    """Reference observation all interplay values are measured against."""

    bbox: BBox
    t: int


@dataclass(frozen=True)
class SteConfig:
    sigma_t: float = 2.0
    sigma_s: float = 15.0
    sigma_d: float = 15.0
    d_model: int = 512
    epsilon_d: float = 1e-6  # floor on normalized center distance
    # Saturation magnitudes for the synthetic far-away token.
    t_sat: float = 100.0
    s_sat: float = 10.0
    d_sat: float = 10.0

    def __post_init__(self):
        if self.d_model < 3:
            raise ValueError(f"d_model too small for three channels: {self.d_model}")
        if self.epsilon_d <= 0:
            raise ValueError("epsilon_d must be positive")


def block_dim(d_model: int) -> int:
    """Per-channel embedding width: d_model / 3, rounded down to even."""
    d = d_model // 3
    return d - (d % 2)


def interplay_map(bbox: BBox, t: int, anchor: Anchor, cfg: SteConfig) -> np.ndarray:
    """Raw (e_t, e_s, e_d) interplay channels of a token against the anchor.

    The distance channel normalizes center offsets by the anchor extent and
    floors the squared distance at epsilon_d**2, so a token exactly on the
    anchor maps to sigma_d * ln(epsilon_d) instead of -inf.
    """
    ab = anchor.bbox
    e_t = cfg.sigma_t * (t - anchor.t)
    e_s = cfg.sigma_s * (math.log(bbox.w / ab.w) + math.log(bbox.h / ab.h))
    r2 = ((bbox.cx - ab.cx) / ab.w) ** 2 + ((bbox.cy - ab.cy) / ab.h) ** 2
    r2 = max(r2, cfg.epsilon_d**2)
    e_d = cfg.sigma_d * 0.5 * math.log(r2)
    return np.array([e_t, e_s, e_d], dtype=np.float64)


def saturated_interplay(cfg: SteConfig) -> np.ndarray:
    """Interplay triple of a token maximally far from any real anchor."""
    return np.array(
        [-cfg.sigma_t * cfg.t_sat, cfg.sigma_s * cfg.s_sat, cfg.sigma_d * cfg.d_sat],
        dtype=np.float64,
    )


def embed_project(channels: np.ndarray, d_model: int) -> np.ndarray:
    """Expand an interplay triple into a d_model sinusoidal embedding.

    Each channel owns one block of ``block_dim(d_model)`` entries filled
    with interleaved sin/cos at geometrically spaced frequencies; leftover
    dimensions at the tail stay zero.
    """
    channels = np.asarray(channels, dtype=np.float64)
    if channels.shape != (3,):
        raise ValueError(f"expected 3 channels, got shape {channels.shape}")
    d = block_dim(d_model)
    half = d // 2
    out = np.zeros(d_model, dtype=np.float64)
    # 10000^(2i/D) for i = 0 .. D/2-1
    div = np.power(10000.0, 2.0 * np.arange(half) / d)
    for c in range(3):
        args = channels[c] / div
        out[c * d : (c + 1) * d : 2] = np.sin(args)
        out[c * d + 1 : (c + 1) * d : 2] = np.cos(args)
    return out


def ste(bbox: BBox, t: int, anchor: Anchor, cfg: SteConfig) -> np.ndarray:
    """Full encoding: interplay channels followed by sinusoidal expansion."""
    return embed_project(interplay_map(bbox, t, anchor, cfg), cfg.d_model)
