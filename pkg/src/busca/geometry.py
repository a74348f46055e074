"""Box overlap and the spatial neighborhood measure used for context selection.

The neighborhood between a track and a candidate box is judged by a scaled
center distance: plain euclidean distance between centers, inflated by how
much the two boxes differ in size. A track only "sees" boxes whose scaled
distance falls inside a radius grown from its own extent.
"""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

from .core import BBox, Observation


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def neighbor_distance(a: BBox, b: BBox) -> float:
    """Center distance scaled by the size ratio of the two boxes.

    The ratio term is symmetric and always >= 1, so disparate sizes push
    boxes apart even when their centers are close.
    """
    eucl = math.hypot(a.cx - b.cx, a.cy - b.cy)
    ra = math.sqrt(a.w * a.h)
    rb = math.sqrt(b.w * b.h)
    ratio = max(ra / rb, rb / ra)
    return eucl * ratio


def neighbor_radius(box: BBox, zeta: float = 1.0) -> float:
    """Radius of the neighborhood around ``box``.

    Geometric mean of the box extent after padding each side by
    ``zeta * (w + h)``.
    """
    pad = zeta * (box.w + box.h)
    return math.sqrt((box.w + pad) * (box.h + pad))


def select_neighbors(
    anchor: BBox,
    pool: Sequence[Tuple[int, Observation]],
    q: int,
    zeta: float = 1.0,
) -> List[Tuple[int, Observation]]:
    """Up to ``q`` pool entries strictly inside the anchor's neighborhood.

    ``pool`` holds (track_id, observation) pairs. Entries are ranked by
    scaled distance to the anchor; ties fall back to track id so the
    selection is deterministic.
    """
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    radius = neighbor_radius(anchor, zeta)
    inside = [
        (neighbor_distance(anchor, obs.bbox), tid, obs)
        for tid, obs in pool
        if neighbor_distance(anchor, obs.bbox) < radius
    ]
    inside.sort(key=lambda e: (e[0], e[1]))
    return [(tid, obs) for _, tid, obs in inside[:q]]
