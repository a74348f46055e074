"""Synthetic tracking world.

Generates ground-truth trajectories with occlusion-aware visibility,
corrupts them into detector output (drops, jitter, confidence decay,
optional low-confidence clutter), and draws training samples for the
decision model: observation windows with controlled corruption plus
proposal sets labelled candidate / miss / hallucination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import BBox, Detection, Observation
from .geometry import iou, neighbor_distance, neighbor_radius
from .proposals import Proposal, ProposalKind


@dataclass(frozen=True)
class SceneConfig:
    width: float = 1920.0
    height: float = 1080.0
    n_objects: int = 20
    n_frames: int = 600
    speed_min: float = 2.0
    speed_max: float = 6.0
    velocity_jitter: float = 0.05  # per-frame velocity perturbation, px/frame
    size_min: float = 60.0  # box height range
    size_max: float = 140.0
    aspect_min: float = 0.35  # w/h
    aspect_max: float = 0.55
    # Detector model.
    miss_rate_base: float = 0.02
    miss_rate_occluded: float = 0.4  # applies when visibility < 0.5
    bbox_noise: float = 1.0  # px, gaussian on center and extent
    conf_noise: float = 0.03
    clutter_rate: float = 0.0  # expected spurious detections per frame
    clutter_conf_min: float = 0.02
    clutter_conf_max: float = 0.09
    clutter_spread: float = 80.0  # px, clutter center offset from its source box
    # Appearance model.
    feature_dim: int = 64
    appearance_noise: float = 0.08  # base per-frame noise, grows with occlusion
    seed: int = 0

    def __post_init__(self):
        for name in ("miss_rate_base", "miss_rate_occluded"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {v}")
        if self.width <= 0 or self.height <= 0 or self.n_frames <= 0 or self.n_objects <= 0:
            raise ValueError("scene dimensions must be positive")


@dataclass(frozen=True)
class GtBox:
    obj_id: int
    bbox: BBox
    visibility: float


@dataclass
class Scene:
    config: SceneConfig
    frames: List[List[GtBox]]  # index 0 = frame 0
    appearance: Dict[Tuple[int, int], np.ndarray]  # (frame, obj_id) -> unit vector

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def boxes_of(self, obj_id: int) -> Dict[int, GtBox]:
        return {f: g for f, row in enumerate(self.frames) for g in row if g.obj_id == obj_id}


def _rng_streams(seed: int, n: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_scene(cfg: SceneConfig) -> Scene:
    """Bouncing piecewise-linear trajectories with pairwise visibility.

    Objects persist across the whole clip. Depth is fixed by id: a larger
    id is in front of a smaller one, and visibility is one minus the
    largest single-occluder coverage of the box.
    """
    rng = _rng_streams(cfg.seed, 3)[0]
    n = cfg.n_objects
    heights = rng.uniform(cfg.size_min, cfg.size_max, size=n)
    widths = heights * rng.uniform(cfg.aspect_min, cfg.aspect_max, size=n)
    margin_x = widths / 2.0
    margin_y = heights / 2.0
    pos = np.stack(
        [
            rng.uniform(margin_x, cfg.width - margin_x),
            rng.uniform(margin_y, cfg.height - margin_y),
        ],
        axis=1,
    )
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max, size=n)
    vel = np.stack([np.cos(angle), np.sin(angle)], axis=1) * speed[:, None]

    base_app = rng.normal(size=(n, cfg.feature_dim))
    base_app /= np.linalg.norm(base_app, axis=1, keepdims=True)

    frames: List[List[GtBox]] = []
    appearance: Dict[Tuple[int, int], np.ndarray] = {}
    for f in range(cfg.n_frames):
        boxes = [
            BBox(cx=float(pos[i, 0]), cy=float(pos[i, 1]), w=float(widths[i]), h=float(heights[i]))
            for i in range(n)
        ]
        row: List[GtBox] = []
        for i in range(n):
            vis = 1.0
            for j in range(i + 1, n):  # larger id occludes smaller
                ov = _coverage(boxes[i], boxes[j])
                vis = min(vis, 1.0 - ov)
            row.append(GtBox(obj_id=i + 1, bbox=boxes[i], visibility=vis))
            noise = cfg.appearance_noise * (0.3 + 0.7 * (1.0 - vis))
            vec = base_app[i] + noise * rng.normal(size=cfg.feature_dim)
            appearance[(f, i + 1)] = (vec / np.linalg.norm(vec)).astype(np.float32)
        frames.append(row)

        if cfg.velocity_jitter > 0:
            vel += rng.normal(0.0, cfg.velocity_jitter, size=vel.shape)
        pos += vel
        # Bounce at the walls so objects never leave the frame.
        for axis, lo, hi in ((0, margin_x, cfg.width - margin_x), (1, margin_y, cfg.height - margin_y)):
            under = pos[:, axis] < lo
            over = pos[:, axis] > hi
            pos[under, axis] = 2 * lo[under] - pos[under, axis]
            pos[over, axis] = 2 * hi[over] - pos[over, axis]
            vel[under | over, axis] *= -1.0
    return Scene(config=cfg, frames=frames, appearance=appearance)


def _coverage(back: BBox, front: BBox) -> float:
    ix = min(back.x2, front.x2) - max(back.x1, front.x1)
    iy = min(back.y2, front.y2) - max(back.y1, front.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    return (ix * iy) / back.area


def inject_detector(scene: Scene, cfg: Optional[SceneConfig] = None) -> List[List[Detection]]:
    """Corrupt ground truth into per-frame detector output.

    Each box survives with its miss rate (occlusion-dependent), gets
    jittered, and carries a confidence that decays with occlusion.
    Clutter detections, when enabled, sit strictly inside the
    low-confidence band so they only matter to recovery strategies that
    dig below the tracker's thresholds.
    """
    cfg = cfg or scene.config
    rng = _rng_streams(cfg.seed, 3)[1]
    out: List[List[Detection]] = []
    for f, row in enumerate(scene.frames):
        dets: List[Detection] = []
        for g in row:
            rate = cfg.miss_rate_occluded if g.visibility < 0.5 else cfg.miss_rate_base
            if rng.random() < rate:
                continue
            b = g.bbox
            if cfg.bbox_noise > 0:
                cx = b.cx + rng.normal(0.0, cfg.bbox_noise)
                cy = b.cy + rng.normal(0.0, cfg.bbox_noise)
                w = max(b.w + rng.normal(0.0, cfg.bbox_noise), 2.0)
                h = max(b.h + rng.normal(0.0, cfg.bbox_noise), 2.0)
                b = BBox(cx, cy, w, h)
            # Confidence tracks visibility all the way down: a nearly
            # hidden object that still fires lands below every matching
            # threshold, where only a leftover-detection pass can see it.
            conf = 0.05 + 0.9 * g.visibility + rng.normal(0.0, cfg.conf_noise)
            conf = float(np.clip(conf, 0.02, 1.0))
            dets.append(Detection(bbox=b, confidence=conf, appearance=scene.appearance[(f, g.obj_id)]))
        n_clutter = rng.poisson(cfg.clutter_rate) if cfg.clutter_rate > 0 else 0
        for _ in range(n_clutter):
            src = row[rng.integers(len(row))].bbox
            shift = rng.uniform(-cfg.clutter_spread, cfg.clutter_spread, size=2)
            scale = rng.uniform(0.7, 1.3)
            cx = float(np.clip(src.cx + shift[0], 1.0, cfg.width - 1.0))
            cy = float(np.clip(src.cy + shift[1], 1.0, cfg.height - 1.0))
            b = BBox(cx, cy, max(src.w * scale, 2.0), max(src.h * scale, 2.0))
            conf = float(rng.uniform(cfg.clutter_conf_min, cfg.clutter_conf_max))
            vec = rng.normal(size=cfg.feature_dim)
            vec /= np.linalg.norm(vec)
            dets.append(Detection(bbox=b, confidence=conf, appearance=vec.astype(np.float32)))
        out.append(dets)
    return out


# ----------------------------------------------------------------------------
# Training samples
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BuilderConfig:
    z: int = 11  # window length before alteration
    gap_max: int = 10  # max frames between consecutive window observations
    target_horizon: int = 20  # target frame within this many frames of the window end
    n_proposals: int = 5  # real-object proposals per sample (positive included)
    miss_prob: float = 0.15
    eliminate_prob: float = 0.01  # chance of the proposal-dropping branch
    alter_prob: float = 0.01  # per-observation corruption chance
    alien_frac: float = 0.05  # alien share flagging the window unreliable
    neg_iou: float = 0.5  # negatives must overlap the positive less than this
    zeta: float = 1.0


@dataclass
class TrainingSample:
    window: List[Observation]
    proposals: List[Proposal]  # separator-interleaved, miss/halluc included
    target_index: int  # into the scoreable (non-separator) order
    # Bookkeeping for distribution tests.
    n_altered: int
    n_alien: int
    window_len_initial: int
    miss_branch: bool
    is_halluc: bool

    @property
    def scoreable_kinds(self) -> List[ProposalKind]:
        return [p.kind for p in self.proposals if p.kind != ProposalKind.SEP]


def _sample_window_frames(rng: np.random.Generator, cfg: BuilderConfig, n_frames: int) -> Tuple[List[int], int]:
    """Window frame indices (ascending) and a target frame after them."""
    gaps = [1 if rng.random() < 0.7 else int(rng.integers(2, cfg.gap_max + 1)) for _ in range(cfg.z - 1)]
    span = sum(gaps)
    dt = int(rng.integers(1, cfg.target_horizon + 1))
    if span + dt > n_frames - 1:
        raise ValueError("scene too short for the sampled window")
    last = int(rng.integers(span, n_frames - dt))
    frames = [last]
    for g in reversed(gaps):
        frames.append(frames[-1] - g)
    frames.reverse()
    return frames, last + dt


def build_training_sample(scene: Scene, rng: np.random.Generator, cfg: BuilderConfig = BuilderConfig()) -> TrainingSample:
    """Draw one labelled sample from a scene.

    The window is the chosen identity's recent trajectory, possibly
    corrupted: each observation is independently dropped or swapped for a
    different identity's observation. Proposals are objects near the
    track at a future target frame, with the identity's own annotation as
    the positive unless the no-positive branch fired. The target label
    follows the corruption: too many alien observations mark the window
    unreliable, an absent positive makes the miss token correct.
    """
    s_cfg = scene.config
    if s_cfg.n_objects < 2:
        raise ValueError("need at least 2 identities to build samples")
    for _ in range(64):
        try:
            frames, t_target = _sample_window_frames(rng, cfg, scene.n_frames)
        except ValueError:
            continue  # gap draw did not fit the clip; try again
        tau = int(rng.integers(1, s_cfg.n_objects + 1))
        by_frame = {g.obj_id: g for g in scene.frames[t_target]}
        if tau not in by_frame:
            continue  # identity absent at the target; resample

        altered = [rng.random() < cfg.alter_prob for _ in frames]
        removed = [a and rng.random() < 0.5 for a in altered]
        # A removal that would stretch a gap past the cap falls back to
        # replacement, so emitted windows always honor the constraint.
        alive = list(range(len(frames)))
        for i, r in enumerate(removed):
            if not r:
                continue
            pos = alive.index(i)
            left = alive[pos - 1] if pos > 0 else None
            right = alive[pos + 1] if pos + 1 < len(alive) else None
            if left is not None and right is not None and frames[right] - frames[left] > cfg.gap_max:
                removed[i] = False
            else:
                alive.pop(pos)

        window: List[Observation] = []
        n_alien = 0
        n_altered = sum(altered)
        for i, f in enumerate(frames):
            if removed[i]:
                continue
            if altered[i]:
                others = [g for g in scene.frames[f] if g.obj_id != tau]
                alien = others[int(rng.integers(len(others)))]
                window.append(
                    Observation(alien.bbox, f, appearance=scene.appearance[(f, alien.obj_id)])
                )
                n_alien += 1
                continue
            gt = next(g for g in scene.frames[f] if g.obj_id == tau)
            window.append(Observation(gt.bbox, f, appearance=scene.appearance[(f, tau)]))
        if not window:
            continue
        for a, b in zip(window, window[1:]):
            assert b.t - a.t <= cfg.gap_max, f"window gap {b.t - a.t} exceeds {cfg.gap_max}"

        is_halluc = n_alien / len(window) >= cfg.alien_frac
        miss_branch = rng.random() < cfg.miss_prob

        ref_box = by_frame[tau].bbox  # where tau actually is at the target frame
        anchor_box = window[-1].bbox
        radius = neighbor_radius(anchor_box, cfg.zeta)
        candidates = []
        for g in scene.frames[t_target]:
            if g.obj_id == tau:
                continue
            d = neighbor_distance(anchor_box, g.bbox)
            if d < radius and iou(g.bbox, ref_box) < cfg.neg_iou:
                candidates.append((d, g.obj_id, g))
        candidates.sort(key=lambda e: (e[0], e[1]))

        chosen: List[Tuple[int, GtBox]] = []
        if not miss_branch:
            chosen.append((tau, by_frame[tau]))
        chosen += [(oid, g) for _, oid, g in candidates[: cfg.n_proposals - len(chosen)]]

        if rng.random() < cfg.eliminate_prob:
            chosen = [c for c in chosen if rng.random() >= 0.5]

        proposals: List[Proposal] = []
        target_kind_index: Optional[int] = None

        def _push(p: Proposal) -> None:
            proposals.append(p)
            proposals.append(Proposal(ProposalKind.SEP, p.bbox, p.t))

        scoreable = 0
        for oid, g in chosen:
            kind = ProposalKind.CANDIDATE if oid == tau else ProposalKind.CONTEXTUAL
            if oid == tau:
                target_kind_index = scoreable
            _push(Proposal(kind, g.bbox, t_target, scene.appearance[(t_target, oid)]))
            scoreable += 1
        last = window[-1]
        miss_index = scoreable
        _push(Proposal(ProposalKind.MISS, last.bbox, last.t))
        halluc_index = scoreable + 1
        _push(Proposal(ProposalKind.HALLUC, last.bbox, last.t))

        if is_halluc:
            target = halluc_index
        elif target_kind_index is None:
            target = miss_index
        else:
            target = target_kind_index

        return TrainingSample(
            window=window,
            proposals=proposals,
            target_index=target,
            n_altered=n_altered,
            n_alien=n_alien,
            window_len_initial=cfg.z,
            miss_branch=miss_branch or target_kind_index is None,
            is_halluc=is_halluc,
        )
    raise RuntimeError("failed to draw a valid sample after 64 attempts")
