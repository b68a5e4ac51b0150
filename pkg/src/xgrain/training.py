"""Adam with cosine-decayed learning rates, and the toy training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationConfig
from .errors import ParameterError, TrainingError
from .evaluation import evaluate
from .numerics import make_rng
from .objective import ALL_ON, ContrastToggles, Model

logger = logging.getLogger(__name__)


def cosine_lr(base: float, step: int, total: int) -> float:
    """Cosine decay from ``base`` at step 0 to zero at step ``total``."""
    if total <= 0:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * min(step, total) / total))


class Adam:
    """Adam (beta1=0.9, beta2=0.999, eps=1e-8) over a dict of named arrays.

    ``groups`` maps a tensor name to its base learning rate; updates are
    applied in place.
    """

    def __init__(self, params: dict[str, np.ndarray], base_lrs: dict[str, float],
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.base_lrs = base_lrs
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr_factor: float = 1.0) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            lr = self.base_lrs[name] * lr_factor
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr:
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    l_v2t: float
    l_t2v: float
    val_r1: float
    lr: float

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "l_v2t": self.l_v2t,
                "l_t2v": self.l_t2v, "val_r1": self.val_r1, "lr": self.lr}


@dataclass
class TrainResult:
    model: Model
    initial: EpochRecord
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        """Training loss before any update followed by the loss after each epoch."""
        return [self.initial.loss] + [r.loss for r in self.history]


def _batches(count: int, size: int, order: np.ndarray | None = None):
    idx = np.arange(count) if order is None else order
    return [idx[i : i + size] for i in range(0, count, size)]


def evaluate_loss(model, frames, words, cfg, toggles, batch_size):
    """Mean loss over fixed consecutive batches of the training set."""
    parts = []
    for b in _batches(len(frames), batch_size):
        rep, _ = model.loss_and_grads([frames[i] for i in b], [words[i] for i in b], cfg, toggles,
                                      need_grads=False)
        parts.append((rep.l_v2t, rep.l_t2v, len(b)))
    total = sum(n for *_, n in parts)
    v2t = sum(a * n for a, _, n in parts) / total
    t2v = sum(b * n for _, b, n in parts) / total
    return v2t + t2v, v2t, t2v


def validation_r1(model, frames, words, cfg, toggles) -> float:
    if not frames:
        return float("nan")
    return evaluate(model.similarity(frames, words, cfg, toggles), "t2v").r1


def train_toy(train_frames, train_words, val_frames=(), val_words=(), *, epochs: int = 30,
              lr_encoder: float = 1e-3, lr_heads: float = 1e-2, seed: int = 0,
              batch_size: int = 16, cfg: AggregationConfig | None = None,
              toggles: ContrastToggles = ALL_ON, model: Model | None = None,
              layers: int = 3, heads: int = 2, scale: float = 100.0, train_scale: bool = False,
              use_encoder: bool = True, log=None) -> TrainResult:
    """Train heads, temporal encoder (and optionally the logit scale) with Adam.

    Learning rates decay with a cosine schedule over all steps. After every
    epoch the full training loss (fixed batches) and held-out t2v R@1 are
    recorded; ``log`` (a text stream) receives one JSON object per epoch.
    Deterministic for a given seed.
    """
    if len(train_frames) != len(train_words) or not train_frames:
        raise ParameterError("training set needs matching, nonzero video and text counts")
    if epochs < 0 or batch_size < 1:
        raise ParameterError("epochs must be >= 0 and batch_size >= 1")
    cfg = cfg or AggregationConfig()
    rng = make_rng(seed)
    train_frames = [np.asarray(f, dtype=np.float64) for f in train_frames]
    train_words = [np.asarray(w, dtype=np.float64) for w in train_words]
    if model is None:
        dim = train_frames[0].shape[1]
        max_frames = max(max(f.shape[0] for f in train_frames),
                         max((f.shape[0] for f in val_frames), default=1))
        model = Model.init(dim, rng, layers=layers, heads=heads, max_frames=max_frames,
                           scale=scale, use_encoder=use_encoder, train_scale=train_scale)

    params = model.named_tensors()
    base = {k: (lr_encoder if k.startswith("encoder.") else lr_heads) for k in params}
    opt = Adam(params, base)
    n = len(train_frames)
    steps_per_epoch = len(_batches(n, batch_size))
    total_steps = epochs * steps_per_epoch

    def record(epoch, lr):
        loss, v2t, t2v = evaluate_loss(model, train_frames, train_words, cfg, toggles, batch_size)
        if not math.isfinite(loss):
            raise TrainingError("loss is not finite", epoch=epoch)
        rec = EpochRecord(epoch, loss, v2t, t2v, validation_r1(model, val_frames, val_words, cfg, toggles), lr)
        if log is not None:
            print(json.dumps(rec.to_json()), file=log, flush=True)
        return rec

    result = TrainResult(model, record(0, lr_heads))
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for b in _batches(n, batch_size, order):
            factor = cosine_lr(1.0, step, total_steps)
            try:
                _, grads = model.loss_and_grads([train_frames[i] for i in b], [train_words[i] for i in b],
                                                cfg, toggles)
            except ArithmeticError as exc:
                raise TrainingError(str(exc), epoch=epoch) from exc
            opt.step(grads, factor)
            if model.train_scale:
                model.clamp_scale()
            step += 1
        result.history.append(record(epoch, lr_heads * cosine_lr(1.0, step, total_steps)))
    return result
