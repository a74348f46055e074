"""Shared reference implementations and crafted models used by several
test modules."""

from typing import List, Optional, Tuple

import numpy as np

from busca.model import ModelConfig, init_model


def brute_force_assignment(
    cost: np.ndarray,
    gate: float = np.inf,
    allowed: Optional[np.ndarray] = None,
) -> List[Tuple[int, int]]:
    """Exhaustive counterpart of busca.assignment.hungarian.

    Enumerates every partial matching and keeps the best under the same
    ordering the solver promises: most pairs first, then lowest total
    cost, then the lexicographically smallest pair list. Only usable for
    tiny matrices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if allowed is None:
        mask = cost < gate
    else:
        mask = np.asarray(allowed, dtype=bool)
    best = None

    def extend(row, used, pairs, total):
        nonlocal best
        if row == n:
            key = (-len(pairs), total, pairs)
            if best is None or key < best:
                best = key
            return
        extend(row + 1, used, pairs, total)
        for c in range(m):
            if c in used or not mask[row, c]:
                continue
            extend(row + 1, used | {c}, pairs + [(row, c)], total + cost[row, c])

    extend(0, frozenset(), [], 0.0)
    assert best is not None
    return best[2]


def tiny_config(**over) -> ModelConfig:
    base = dict(
        d_model=8,
        n_layers=1,
        n_heads=2,
        ffn_dim=16,
        dropout=0.0,
        feature_dim=8,
        label_smoothing=0.1,
    )
    base.update(over)
    return ModelConfig(**base)


def zeroed_model(cfg: Optional[ModelConfig] = None, dtype=np.float32):
    """Model with every weight zero (layer-norm gains stay one).

    All scoreable logits tie at zero, so argmax lands on the first
    scoreable token, which is always the candidate: an accept-everything
    judge with fully predictable behavior.
    """
    model = init_model(cfg or tiny_config(), seed=0, dtype=dtype)
    for name, arr in model.params.items():
        if name.rsplit(".", 1)[-1] != "g":
            model.params[name] = np.zeros_like(arr)
    return model


def miss_forcing_model():
    """Hand-wired weights giving the miss token the only positive logit.

    Works when sequences are assembled without the spatio-temporal
    encoding and every real token carries a constant appearance vector:
    constants normalize to zero under layer norm, so their logits are
    exactly zero, while the alternating miss embedding survives with a
    positive score.
    """
    cfg = tiny_config()  # feature_dim == d_model, so identity maps line up
    model = zeroed_model(cfg)
    d = cfg.d_model
    pattern = np.tile([1.0, -1.0], d // 2)
    model.params["in.w"] = np.eye(d, dtype=np.float32)
    model.params["head.w1"] = np.eye(d, dtype=np.float32)
    model.params["head.w2"] = pattern.astype(np.float32)
    model.params["tok.miss"] = (10.0 * pattern).astype(np.float32)
    return model


def flat_appearance(f: int = 8) -> np.ndarray:
    """Constant vector; layer norm flattens it to zero activations."""
    return np.full(f, 0.5, dtype=np.float32)
