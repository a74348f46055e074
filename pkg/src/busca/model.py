"""Decision transformer scoring proposals against a track's history.

The model consumes one token per history observation plus one per
proposal (real candidates, the two learned outcome tokens, and separator
registers). Every token vector is the projected appearance plus its
spatio-temporal encoding; no role information enters the network, which
is what makes the scoring head indifferent to proposal count and order.

Everything is plain numpy with hand-written backprop. Parameters live in
a flat name -> array dict so the trainer, the serializer, and the
gradient checks can all iterate uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Observation
from .proposals import Proposal, ProposalKind
from .ste import Anchor, SteConfig, embed_project, interplay_map, saturated_interplay


class ModelError(RuntimeError):
    pass


class Role(IntEnum):
    TRACK_OBS = 0
    CANDIDATE = 1
    CONTEXTUAL = 2
    MISS = 3
    HALLUC = 4
    SEP = 5


_KIND_TO_ROLE = {
    ProposalKind.CANDIDATE: Role.CANDIDATE,
    ProposalKind.CONTEXTUAL: Role.CONTEXTUAL,
    ProposalKind.MISS: Role.MISS,
    ProposalKind.HALLUC: Role.HALLUC,
    ProposalKind.SEP: Role.SEP,
}

SCOREABLE_ROLES = (Role.CANDIDATE, Role.CONTEXTUAL, Role.MISS, Role.HALLUC)

_LEARNED_PARAM = {Role.MISS: "tok.miss", Role.HALLUC: "tok.halluc", Role.SEP: "tok.sep"}


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 512
    n_layers: int = 4
    n_heads: int = 4
    ffn_dim: int = 1024
    dropout: float = 0.1
    feature_dim: int = 512
    label_smoothing: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        if min(self.d_model, self.n_layers, self.n_heads, self.ffn_dim, self.feature_dim) <= 0:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout outside [0, 1): {self.dropout}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing outside [0, 1): {self.label_smoothing}")


@dataclass
class DecisionModel:
    config: ModelConfig
    params: Dict[str, np.ndarray]

    @property
    def dtype(self):
        return self.params["in.w"].dtype


def param_names(cfg: ModelConfig) -> List[str]:
    """Canonical parameter order; serialization and init both follow it."""
    names = ["in.w", "in.b", "tok.miss", "tok.halluc", "tok.sep"]
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        names += [p + "ln1.g", p + "ln1.b"]
        names += [p + f"attn.{n}" for n in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]
        names += [p + "ln2.g", p + "ln2.b"]
        names += [p + "ffn.w1", p + "ffn.b1", p + "ffn.w2", p + "ffn.b2"]
    names += ["final_ln.g", "final_ln.b", "head.w1", "head.b1", "head.w2", "head.b2"]
    return names


def param_shape(name: str, cfg: ModelConfig) -> Tuple[int, ...]:
    d, f, ff = cfg.d_model, cfg.feature_dim, cfg.ffn_dim
    base = name.split(".", 1)[-1] if name.startswith("layer") else name
    shapes = {
        "in.w": (f, d),
        "in.b": (d,),
        "tok.miss": (f,),
        "tok.halluc": (f,),
        "tok.sep": (f,),
        "ln1.g": (d,),
        "ln1.b": (d,),
        "attn.wq": (d, d),
        "attn.wk": (d, d),
        "attn.wv": (d, d),
        "attn.wo": (d, d),
        "attn.bq": (d,),
        "attn.bk": (d,),
        "attn.bv": (d,),
        "attn.bo": (d,),
        "ln2.g": (d,),
        "ln2.b": (d,),
        "ffn.w1": (d, ff),
        "ffn.b1": (ff,),
        "ffn.w2": (ff, d),
        "ffn.b2": (d,),
        "final_ln.g": (d,),
        "final_ln.b": (d,),
        "head.w1": (d, d),
        "head.b1": (d,),
        "head.w2": (d,),
        "head.b2": (1,),
    }
    return shapes[base]


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> DecisionModel:
    """Fresh model: Gaussian(0, init_std) weights, zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name in param_names(cfg):
        shape = param_shape(name, cfg)
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf.startswith("b") and not name.startswith("tok."):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, cfg.init_std, size=shape)
        params[name] = arr.astype(dtype)
    return DecisionModel(config=cfg, params=params)


# ----------------------------------------------------------------------------
# Token assembly
# ----------------------------------------------------------------------------


@dataclass
class TokenSequence:
    """Model-ready view of one track window plus its proposal set.

    ``appearances`` rows for learned tokens are zero; the forward pass
    substitutes the trainable embeddings by role, so their gradients reach
    the token parameters.
    """

    appearances: np.ndarray  # (T, F)
    ste: np.ndarray  # (T, d_model), zeros when the encoding is disabled
    roles: np.ndarray  # (T,) of Role values
    scoreable: np.ndarray  # (J,) token indices receiving a logit

    @property
    def n_tokens(self) -> int:
        return len(self.roles)

    @property
    def n_scoreable(self) -> int:
        return len(self.scoreable)


def assemble(
    window: Sequence[Observation],
    proposals: Sequence[Proposal],
    anchor: Anchor,
    model: DecisionModel,
    ste_cfg: SteConfig,
    use_ste: bool = True,
) -> TokenSequence:
    """Fuse a track window and its proposals into one token sequence.

    Window tokens come first (oldest to newest), then proposals in their
    given order. Real tokens must carry appearance vectors of the
    configured dimension F.
    """
    if not window:
        raise ValueError("empty track window")
    cfg = model.config
    if ste_cfg.d_model != cfg.d_model:
        raise ValueError(
            f"encoding width {ste_cfg.d_model} does not match model d_model {cfg.d_model}"
        )
    n = len(window) + len(proposals)
    apps = np.zeros((n, cfg.feature_dim), dtype=np.float64)
    stes = np.zeros((n, cfg.d_model), dtype=np.float64)
    roles = np.zeros(n, dtype=np.int64)

    def _set_app(i: int, vec: Optional[np.ndarray], what: str) -> None:
        if vec is None:
            raise ValueError(f"{what} carries no appearance vector")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (cfg.feature_dim,):
            raise ValueError(f"{what}: appearance dim {vec.shape} != ({cfg.feature_dim},)")
        apps[i] = vec

    for i, obs in enumerate(window):
        roles[i] = Role.TRACK_OBS
        _set_app(i, obs.appearance, f"window observation t={obs.t}")
        if use_ste:
            stes[i] = embed_project(interplay_map(obs.bbox, obs.t, anchor, ste_cfg), cfg.d_model)

    for j, prop in enumerate(proposals):
        i = len(window) + j
        role = _KIND_TO_ROLE[prop.kind]
        roles[i] = role
        if role in _LEARNED_PARAM:
            if prop.appearance is not None:
                raise ValueError(f"{prop.kind.name} token must not carry an appearance vector")
        else:
            _set_app(i, prop.appearance, f"{prop.kind.name} proposal")
        if use_ste:
            if role == Role.HALLUC:
                channels = saturated_interplay(ste_cfg)
            else:
                channels = interplay_map(prop.bbox, prop.t, anchor, ste_cfg)
            stes[i] = embed_project(channels, cfg.d_model)

    scoreable = np.where(np.isin(roles, SCOREABLE_ROLES))[0]
    if len(scoreable) == 0:
        raise ValueError("no scoreable proposals in sequence")
    return TokenSequence(appearances=apps, ste=stes, roles=roles, scoreable=scoreable)


# ----------------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------------

_NEG = -1e30  # additive mask for padded keys / absent logits
_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, cache, g):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    return dx, dg, db


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


@dataclass
class _BatchCache:
    """Everything the backward pass needs, kept per forward call."""

    a_eff: np.ndarray
    key_mask: np.ndarray
    layers: List[dict] = field(default_factory=list)
    final_ln: tuple = ()
    h_final: Optional[np.ndarray] = None
    head: tuple = ()
    gather: tuple = ()
    role_masks: Dict[str, np.ndarray] = field(default_factory=dict)


def pack_batch(seqs: Sequence[TokenSequence], cfg: ModelConfig):
    """Pad sequences to a common length; returns dense batch arrays."""
    b = len(seqs)
    t_max = max(s.n_tokens for s in seqs)
    j_max = max(s.n_scoreable for s in seqs)
    apps = np.zeros((b, t_max, cfg.feature_dim))
    stes = np.zeros((b, t_max, cfg.d_model))
    roles = np.full((b, t_max), -1, dtype=np.int64)
    key_mask = np.zeros((b, t_max), dtype=bool)
    score_idx = np.full((b, j_max), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        n = s.n_tokens
        apps[i, :n] = s.appearances
        stes[i, :n] = s.ste
        roles[i, :n] = s.roles
        key_mask[i, :n] = True
        score_idx[i, : s.n_scoreable] = s.scoreable
    return apps, stes, roles, key_mask, score_idx


def forward_batch(
    model: DecisionModel,
    apps: np.ndarray,
    stes: np.ndarray,
    roles: np.ndarray,
    key_mask: np.ndarray,
    score_idx: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, _BatchCache]:
    """Run the encoder and head over a padded batch.

    Returns per-sequence logits (B, J_max) with absent slots at -inf, and
    the cache consumed by :func:`backward_batch`.
    """
    p = model.params
    cfg = model.config
    dt = model.dtype
    keep = 1.0 - cfg.dropout
    if train_mode and cfg.dropout > 0.0 and rng is None:
        raise ValueError("dropout active but no rng supplied")

    apps = apps.astype(dt)
    cache = _BatchCache(a_eff=None, key_mask=key_mask)

    # Substitute trainable embeddings into the learned-token rows.
    a_eff = apps.copy()
    for role, pname in _LEARNED_PARAM.items():
        mask = roles == int(role)
        cache.role_masks[pname] = mask
        if mask.any():
            a_eff[mask] = p[pname]
    cache.a_eff = a_eff

    x = a_eff @ p["in.w"] + p["in.b"] + stes.astype(dt)
    x = x * key_mask[:, :, None]

    bias = np.where(key_mask, 0.0, _NEG).astype(dt)[:, None, None, :]
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)

    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        lc: dict = {"x0": x}
        y1, c1 = _ln_forward(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        lc["ln1"] = c1
        lc["y1"] = y1
        q = y1 @ p[pre + "attn.wq"] + p[pre + "attn.bq"]
        k = y1 @ p[pre + "attn.wk"] + p[pre + "attn.bk"]
        v = y1 @ p[pre + "attn.wv"] + p[pre + "attn.bv"]
        qh, kh, vh = (_split_heads(z, cfg.n_heads) for z in (q, k, v))
        s = qh @ kh.transpose(0, 1, 3, 2) * scale + bias
        a = _softmax(s, axis=-1)
        ctx = _merge_heads(a @ vh)
        proj = ctx @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
        if train_mode and cfg.dropout > 0.0:
            m1 = (rng.random(proj.shape) < keep).astype(dt) / keep
            proj = proj * m1
            lc["drop1"] = m1
        x = x + proj
        lc.update(qh=qh, kh=kh, vh=vh, attn=a, ctx=ctx)

        lc["x1"] = x
        y2, c2 = _ln_forward(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        lc["ln2"] = c2
        lc["y2"] = y2
        f1 = y2 @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
        g = _gelu(f1)
        f2 = g @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
        if train_mode and cfg.dropout > 0.0:
            m2 = (rng.random(f2.shape) < keep).astype(dt) / keep
            f2 = f2 * m2
            lc["drop2"] = m2
        x = x + f2
        lc.update(f1=f1, g=g)
        cache.layers.append(lc)

    h, cf = _ln_forward(x, p["final_ln.g"], p["final_ln.b"])
    cache.final_ln = cf
    cache.h_final = h

    # Shared head over scoreable positions only.
    b_idx, j_idx = np.nonzero(score_idx >= 0)
    t_idx = score_idx[b_idx, j_idx]
    hs = h[b_idx, t_idx]
    h1 = hs @ p["head.w1"] + p["head.b1"]
    hg = _gelu(h1)
    flat_logits = hg @ p["head.w2"] + p["head.b2"][0]
    cache.head = (hs, h1, hg)
    cache.gather = (b_idx, j_idx, t_idx)

    logits = np.full(score_idx.shape, _NEG, dtype=dt)
    logits[b_idx, j_idx] = flat_logits
    if not np.all(np.isfinite(flat_logits)):
        raise ModelError("non-finite logits; model state or inputs are corrupt")
    return logits, cache


def backward_batch(
    model: DecisionModel, cache: _BatchCache, dlogits: np.ndarray
) -> Dict[str, np.ndarray]:
    """Gradients of sum(dlogits * logits) w.r.t. every parameter."""
    p = model.params
    cfg = model.config
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)

    b_idx, j_idx, t_idx = cache.gather
    hs, h1, hg = cache.head
    dflat = dlogits[b_idx, j_idx]
    grads["head.b2"][0] = dflat.sum()
    grads["head.w2"][:] = hg.T @ dflat
    dhg = np.outer(dflat, p["head.w2"])
    dh1 = dhg * _gelu_grad(h1)
    grads["head.w1"][:] = hs.T @ dh1
    grads["head.b1"][:] = dh1.sum(axis=0)
    dhs = dh1 @ p["head.w1"].T

    dh = np.zeros_like(cache.h_final)
    np.add.at(dh, (b_idx, t_idx), dhs)

    dx, dg, db = _ln_backward(dh, cache.final_ln, p["final_ln.g"])
    grads["final_ln.g"][:] = dg
    grads["final_ln.b"][:] = db

    for i in reversed(range(cfg.n_layers)):
        pre = f"layer{i}."
        lc = cache.layers[i]

        df2 = dx * lc["drop2"] if "drop2" in lc else dx
        g_flat = lc["g"].reshape(-1, cfg.ffn_dim)
        grads[pre + "ffn.w2"][:] = g_flat.T @ df2.reshape(-1, cfg.d_model)
        grads[pre + "ffn.b2"][:] = df2.sum(axis=(0, 1))
        dg_act = df2 @ p[pre + "ffn.w2"].T
        df1 = dg_act * _gelu_grad(lc["f1"])
        y2_flat = lc["y2"].reshape(-1, cfg.d_model)
        grads[pre + "ffn.w1"][:] = y2_flat.T @ df1.reshape(-1, cfg.ffn_dim)
        grads[pre + "ffn.b1"][:] = df1.sum(axis=(0, 1))
        dy2 = df1 @ p[pre + "ffn.w1"].T
        dx1_ln, dgam, dbet = _ln_backward(dy2, lc["ln2"], p[pre + "ln2.g"])
        grads[pre + "ln2.g"][:] = dgam
        grads[pre + "ln2.b"][:] = dbet
        dx = dx + dx1_ln

        dproj = dx * lc["drop1"] if "drop1" in lc else dx
        ctx_flat = lc["ctx"].reshape(-1, cfg.d_model)
        grads[pre + "attn.wo"][:] = ctx_flat.T @ dproj.reshape(-1, cfg.d_model)
        grads[pre + "attn.bo"][:] = dproj.sum(axis=(0, 1))
        dctx = dproj @ p[pre + "attn.wo"].T
        dctxh = _split_heads(dctx, cfg.n_heads)
        da = dctxh @ lc["vh"].transpose(0, 1, 3, 2)
        dvh = lc["attn"].transpose(0, 1, 3, 2) @ dctxh
        a = lc["attn"]
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
        dqh = ds @ lc["kh"] * scale
        dkh = ds.transpose(0, 1, 3, 2) @ lc["qh"] * scale
        dq, dk, dv = (_merge_heads(z) for z in (dqh, dkh, dvh))
        y1_flat = lc["y1"].reshape(-1, cfg.d_model)
        for nm, dz in (("wq", dq), ("wk", dk), ("wv", dv)):
            grads[pre + f"attn.{nm}"][:] = y1_flat.T @ dz.reshape(-1, cfg.d_model)
            grads[pre + "attn.b" + nm[1]][:] = dz.sum(axis=(0, 1))
        dy1 = dq @ p[pre + "attn.wq"].T + dk @ p[pre + "attn.wk"].T + dv @ p[pre + "attn.wv"].T
        dx0_ln, dgam, dbet = _ln_backward(dy1, lc["ln1"], p[pre + "ln1.g"])
        grads[pre + "ln1.g"][:] = dgam
        grads[pre + "ln1.b"][:] = dbet
        dx = dx + dx0_ln

    dx = dx * cache.key_mask[:, :, None]
    a_flat = cache.a_eff.reshape(-1, cfg.feature_dim)
    grads["in.w"][:] = a_flat.T @ dx.reshape(-1, cfg.d_model)
    grads["in.b"][:] = dx.sum(axis=(0, 1))
    da = dx @ p["in.w"].T
    for pname, mask in cache.role_masks.items():
        if mask.any():
            grads[pname][:] = da[mask].sum(axis=0)
    return grads


# ----------------------------------------------------------------------------
# Decisions and loss
# ----------------------------------------------------------------------------


class Outcome(IntEnum):
    UPDATE_WITH_CANDIDATE = 0
    PAUSE = 1


@dataclass(frozen=True)
class Decision:
    probabilities: np.ndarray  # (J,), aligned with scoreable order
    kinds: Tuple[Role, ...]
    argmax: int
    outcome: Outcome


def forward(seq: TokenSequence, model: DecisionModel) -> Decision:
    """Score one assembled sequence and decide the track's fate."""
    apps, stes, roles, key_mask, score_idx = pack_batch([seq], model.config)
    logits, _ = forward_batch(model, apps, stes, roles, key_mask, score_idx)
    probs = _softmax(logits[0].astype(np.float64))
    kinds = tuple(Role(seq.roles[i]) for i in seq.scoreable)
    top = int(np.argmax(probs))
    outcome = (
        Outcome.UPDATE_WITH_CANDIDATE if kinds[top] == Role.CANDIDATE else Outcome.PAUSE
    )
    return Decision(probabilities=probs, kinds=kinds, argmax=top, outcome=outcome)


def smoothed_targets(j: int, target_index: int, eps: float) -> np.ndarray:
    if j < 2:
        raise ValueError(f"need at least 2 scoreable proposals, got {j}")
    if not 0 <= target_index < j:
        raise ValueError(f"target {target_index} outside 0..{j - 1}")
    q = np.full(j, eps / (j - 1))
    q[target_index] = 1.0 - eps
    return q


def loss(decision_logits: np.ndarray, target_index: int, eps: float = 0.1) -> float:
    """Label-smoothed cross-entropy of one logit row."""
    val, _ = loss_and_grad(np.asarray(decision_logits, dtype=np.float64), target_index, eps)
    return float(val)


def loss_and_grad(logits: np.ndarray, target_index: int, eps: float) -> Tuple[float, np.ndarray]:
    j = len(logits)
    q = smoothed_targets(j, target_index, eps)
    m = logits.max()
    shifted = logits - m
    logz = np.log(np.exp(shifted).sum())
    log_p = shifted - logz
    val = float(-(q * log_p).sum())
    grad = np.exp(log_p) - q
    return val, grad


def batch_loss_and_grad(
    logits: np.ndarray, score_idx: np.ndarray, targets: np.ndarray, eps: float
) -> Tuple[float, np.ndarray]:
    """Mean smoothed CE over a padded batch; gradient matches the mean."""
    b = logits.shape[0]
    dlogits = np.zeros_like(logits, dtype=np.float64)
    total = 0.0
    for i in range(b):
        j = int((score_idx[i] >= 0).sum())
        val, grad = loss_and_grad(logits[i, :j].astype(np.float64), int(targets[i]), eps)
        total += val
        dlogits[i, :j] = grad / b
    return total / b, dlogits
