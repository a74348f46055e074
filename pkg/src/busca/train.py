"""Training loop for the decision model: AdamW, stepped LR, smoothed CE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    DecisionModel,
    TokenSequence,
    backward_batch,
    batch_loss_and_grad,
    forward_batch,
    pack_batch,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    batch_size: int = 256
    lr: float = 2e-5
    weight_decay: float = 1e-5
    lr_drop_epoch: int = 20  # epochs after which lr is divided by the factor
    lr_drop_factor: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (0-based)."""
        if epoch >= self.lr_drop_epoch:
            return self.lr / self.lr_drop_factor
        return self.lr


class AdamW:
    """Decoupled weight decay Adam over a parameter dict."""

    def __init__(self, params: Dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name in params:
            g = grads[name].astype(params[name].dtype)
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            params[name] -= lr * (mhat / (np.sqrt(vhat) + c.adam_eps) + c.weight_decay * params[name])


def evaluate(
    model: DecisionModel,
    sequences: Sequence[TokenSequence],
    targets: Sequence[int],
    batch_size: int = 256,
) -> Tuple[float, float]:
    """(mean loss, accuracy) of the model on a labelled set, dropout off."""
    eps = model.config.label_smoothing
    total, correct = 0.0, 0
    n = len(sequences)
    for lo in range(0, n, batch_size):
        chunk = list(sequences[lo : lo + batch_size])
        tgt = np.asarray(targets[lo : lo + batch_size])
        apps, stes, roles, km, sidx = pack_batch(chunk, model.config)
        logits, _ = forward_batch(model, apps, stes, roles, km, sidx)
        val, _ = batch_loss_and_grad(logits, sidx, tgt, eps)
        total += val * len(chunk)
        correct += int((np.argmax(logits, axis=1) == tgt).sum())
    return total / n, correct / n


def train(
    sequences: Sequence[TokenSequence],
    targets: Sequence[int],
    model: DecisionModel,
    cfg: TrainConfig,
    holdout: Optional[Tuple[Sequence[TokenSequence], Sequence[int]]] = None,
) -> Tuple[DecisionModel, List[dict]]:
    """Optimize ``model`` in place; returns it with a per-epoch history.

    History rows carry the mean training loss of the epoch, the lr used,
    and held-out loss/accuracy when a holdout set is given. Fully
    deterministic for a fixed cfg.seed.
    """
    if len(sequences) == 0:
        raise ValueError("empty training set")
    if len(sequences) != len(targets):
        raise ValueError(f"{len(sequences)} sequences vs {len(targets)} targets")
    targets = np.asarray(targets, dtype=np.int64)
    eps = model.config.label_smoothing
    opt = AdamW(model.params, cfg)
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    history: List[dict] = []
    n = len(sequences)

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            chunk = [sequences[i] for i in idx]
            apps, stes, roles, km, sidx = pack_batch(chunk, model.config)
            logits, cache = forward_batch(
                model, apps, stes, roles, km, sidx, train_mode=True, rng=drop_rng
            )
            val, dlogits = batch_loss_and_grad(logits, sidx, targets[idx], eps)
            if not np.isfinite(val):
                raise TrainingDiverged(
                    f"loss became {val} at epoch {epoch}, step {lo // cfg.batch_size}"
                )
            epoch_loss += val * len(idx)
            grads = backward_batch(model, cache, dlogits)
            opt.step(model.params, grads, lr)
        row = {"epoch": epoch, "loss": epoch_loss / n, "lr": lr}
        if holdout is not None:
            hl, ha = evaluate(model, holdout[0], holdout[1], cfg.batch_size)
            row["holdout_loss"] = hl
            row["holdout_accuracy"] = ha
        history.append(row)
    return model, history
