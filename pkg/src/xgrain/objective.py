"""Fused pair similarity, batch score matrices and the symmetric InfoNCE loss.

The trainable model at toy scale is: one linear projection per modality, the
temporal encoder on the video side, L2 normalization of every token row,
normalized-mean pooling to coarse vectors, the four contrasts, aggregation,
fusion of the enabled scores, and a multiplicative logit scale before the
loss. ``Model.loss_and_grads`` runs all of it forward and backward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .aggregation import AggregatedScores, AggregationConfig
from .encoder import (
    TemporalEncoderParams,
    TextFeatures,
    VideoFeatures,
    encode_frames,
    encode_frames_backward,
    init_params,
)
from .errors import NumericError, ParameterError, ShapeError
from .numerics import as_matrix, logsumexp, softmax_axis, unit, unit_backward

DEFAULT_SCALE = 100.0
SCALE_BOUNDS = (1.0, 200.0)


@dataclass(frozen=True)
class ContrastToggles:
    use_vs: bool = True
    use_vw: bool = True
    use_fs: bool = True
    use_fw: bool = True

    def __post_init__(self):
        if not any(self.flags):
            raise ParameterError("at least one contrast must be enabled")

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.use_vs, self.use_vw, self.use_fs, self.use_fw)

    @classmethod
    def parse(cls, spec: str) -> "ContrastToggles":
        """Build from a comma list such as ``"vs,fw"``."""
        names = {s.strip() for s in spec.split(",") if s.strip()}
        unknown = names - {"vs", "vw", "fs", "fw"}
        if unknown:
            raise ParameterError(f"unknown contrast(s): {', '.join(sorted(unknown))}")
        return cls(*(k in names for k in ("vs", "vw", "fs", "fw")))

    def __str__(self):
        return ",".join(k for k, on in zip(("vs", "vw", "fs", "fw"), self.flags) if on)


ALL_ON = ContrastToggles()


@dataclass(frozen=True)
class TrainingBatch:
    videos: list[VideoFeatures]
    texts: list[TextFeatures]

    def __post_init__(self):
        if len(self.videos) != len(self.texts) or not self.videos:
            raise ShapeError(f"batch needs equal, nonzero counts; got {len(self.videos)} videos "
                             f"and {len(self.texts)} texts")

    @property
    def size(self) -> int:
        return len(self.videos)


@dataclass(frozen=True)
class LossReport:
    l_v2t: float
    l_t2v: float
    l_total: float
    score_matrix: np.ndarray


def pair_similarity(a: AggregatedScores, t: ContrastToggles = ALL_ON) -> float:
    vals = [s for s, on in zip(a.as_tuple(), t.flags) if on]
    return sum(vals) / len(vals)


def score_matrix(batch: TrainingBatch, cfg: AggregationConfig, t: ContrastToggles = ALL_ON,
                 scale: float = DEFAULT_SCALE, chunk: int | None = None, threads: int = 1) -> np.ndarray:
    """``scale`` times the fused similarity of every (video i, text j) in the batch."""
    v = grid.pack(batch.videos)
    tx = grid.pack(batch.texts)
    return scale * grid.score_grid(v, tx, cfg, t, chunk=chunk, threads=threads)


def info_nce(scores) -> LossReport:
    """Symmetric InfoNCE with the diagonal as positives."""
    s = as_matrix(scores, "score matrix")
    b = s.shape[0]
    if s.shape[1] != b or b == 0:
        raise ShapeError(f"score matrix must be square and non-empty, got {s.shape}")
    diag = np.diagonal(s)
    # fixed summation order keeps the result bit-stable
    l_v2t = float(np.sum(logsumexp(s, axis=1) - diag)) / b
    l_t2v = float(np.sum(logsumexp(s, axis=0) - diag)) / b
    # each term is -log p with p <= 1; clip the last-ulp rounding below zero
    l_v2t, l_t2v = max(l_v2t, 0.0), max(l_t2v, 0.0)
    return LossReport(l_v2t, l_t2v, l_v2t + l_t2v, s)


def info_nce_grad(scores: np.ndarray) -> np.ndarray:
    """d l_total / d scores."""
    b = scores.shape[0]
    eye = np.eye(b)
    return (softmax_axis(scores, 1.0, axis=1) - eye + softmax_axis(scores, 1.0, axis=0) - eye) / b


# -- trainable model ------------------------------------------------------------

def _random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


@dataclass
class Model:
    """Toy-scale trainable stack: projection heads, temporal encoder, logit scale."""

    encoder: TemporalEncoderParams
    video_head: np.ndarray
    text_head: np.ndarray
    scale: np.ndarray = field(default_factory=lambda: np.array([DEFAULT_SCALE]))
    use_encoder: bool = True
    train_scale: bool = False

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, layers: int = 3, heads: int = 2,
             max_frames: int = 12, scale: float = DEFAULT_SCALE, use_encoder: bool = True,
             train_scale: bool = False, head_init: str = "identity",
             head_gain: float | None = None) -> "Model":
        """Build a model with a freshly initialized encoder.

        Heads start as ``head_gain`` times the identity (aligned modalities, the
        stand-in for pretrained towers) or times a random orthogonal matrix.
        The default gain sqrt(dim) maps unit-norm rows to rows with unit-variance
        entries, the scale the layer-normed residual branches produce.
        """
        enc = init_params(dim, layers, heads, max_frames, rng)
        gain = math.sqrt(dim) if head_gain is None else float(head_gain)
        if head_init == "identity":
            vh, th = np.eye(dim), np.eye(dim)
        elif head_init == "orthogonal":
            vh, th = _random_orthogonal(dim, rng), _random_orthogonal(dim, rng)
        else:
            raise ParameterError(f"unknown head_init {head_init!r}")
        return cls(enc, gain * vh, gain * th, np.array([float(scale)]), use_encoder, train_scale)

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_tensors().items()}
        out["head.video"] = self.video_head
        out["head.text"] = self.text_head
        if self.train_scale:
            out["scale"] = self.scale
        return out

    def copy(self) -> "Model":
        return Model(self.encoder.copy(), self.video_head.copy(), self.text_head.copy(),
                     self.scale.copy(), self.use_encoder, self.train_scale)

    def clamp_scale(self) -> None:
        np.clip(self.scale, *SCALE_BOUNDS, out=self.scale)

    # forward ------------------------------------------------------------------

    def _video_forward(self, frames: list[np.ndarray]):
        lengths = [f.shape[0] for f in frames]
        n_max = max(lengths)
        d = self.dim
        fine = np.zeros((len(frames), n_max, d))
        groups = []
        for n in sorted(set(lengths)):
            idx = [i for i, ln in enumerate(lengths) if ln == n]
            x = np.stack([frames[i] for i in idx])
            proj = x @ self.video_head
            enc, ecache = encode_frames(proj, self.encoder, self.use_encoder)
            fine[idx, :n] = enc
            groups.append((n, idx, x, ecache))
        mask = np.arange(n_max)[None, :] < np.array(lengths)[:, None]
        return self._pool(fine, mask), groups

    def _text_forward(self, words: list[np.ndarray]):
        x, mask = grid.pad(words)
        return self._pool(x @ self.text_head, mask), x

    @staticmethod
    def _pool(raw, mask):
        rows, rnorm = unit(raw)
        rows = rows * mask[..., None]
        counts = mask.sum(axis=1, keepdims=True)
        mean = rows.sum(axis=1) / counts
        coarse, cnorm = unit(mean)
        packed = grid.Packed(rows, mask, coarse)
        return packed, (rows, rnorm, counts, coarse, cnorm)

    @staticmethod
    def _pool_backward(dfine, dcoarse, pool_cache, mask):
        rows, rnorm, counts, coarse, cnorm = pool_cache
        dmean = unit_backward(dcoarse, coarse, cnorm)
        drows = (dfine + (dmean / counts)[:, None, :]) * mask[..., None]
        return unit_backward(drows, rows, rnorm)

    def features(self, frames: list[np.ndarray], words: list[np.ndarray]) -> tuple[grid.Packed, grid.Packed]:
        (v, _), _ = self._video_forward(frames)
        (t, _), _ = self._text_forward(words)
        return v, t

    def similarity(self, frames, words, cfg: AggregationConfig, toggles: ContrastToggles = ALL_ON,
                   chunk: int | None = None) -> np.ndarray:
        """Unscaled fused similarity matrix (videos x texts) under this model."""
        v, t = self.features(frames, words)
        return grid.score_grid(v, t, cfg, toggles, chunk=chunk)

    def loss_and_grads(self, frames, words, cfg: AggregationConfig, toggles: ContrastToggles = ALL_ON,
                       need_grads: bool = True):
        """Forward the batch (pair i = frames[i], words[i]) and backprop the loss.

        Returns ``(report, grads)``; ``grads`` matches ``named_tensors()``
        key for key, or is ``None`` when ``need_grads`` is false.
        """
        if len(frames) != len(words) or not frames:
            raise ShapeError("loss needs equal, nonzero numbers of videos and texts")
        (v, vcache), groups = self._video_forward(frames)
        (t, tcache), wx = self._text_forward(words)
        sims = grid.similarities(v, t)
        scores, acache = grid.aggregate(sims, v.mask, t.mask, cfg)
        fused = grid.fuse(scores, toggles)
        scale = float(self.scale[0])
        report = info_nce(scale * fused)
        if not need_grads:
            return report, None

        dlogits = info_nce_grad(report.score_matrix)
        grads = {}
        if self.train_scale:
            grads["scale"] = np.array([np.sum(dlogits * fused)])
        dfused = scale * dlogits
        dsims = grid.aggregate_backward(grid.fuse_backward(dfused, toggles), acache)
        dvf, dvc, dtf, dtc = grid.similarities_backward(dsims, v, t)

        # text side
        draw_t = self._pool_backward(dtf, dtc, tcache, t.mask)
        grads["head.text"] = np.einsum("bwd,bwe->de", wx, draw_t)

        # video side
        draw_v = self._pool_backward(dvf, dvc, vcache, v.mask)
        enc_grads = self.encoder.zeros_like()
        dvh = np.zeros_like(self.video_head)
        for n, idx, x, ecache in groups:
            dproj, g = encode_frames_backward(draw_v[idx, :n], self.encoder, ecache)
            for name, val in g.named_tensors().items():
                enc_grads.named_tensors()[name] += val
            dvh += np.einsum("gnd,gne->de", x, dproj)
        grads["head.video"] = dvh
        for name, val in enc_grads.named_tensors().items():
            grads[f"encoder.{name}"] = val

        for name, val in grads.items():
            if not np.all(np.isfinite(val)):
                raise NumericError(f"non-finite gradient for {name}")
        return report, {k: grads[k] for k in self.named_tensors()}


def loss_backward(model: Model, frames, words, cfg: AggregationConfig,
                  toggles: ContrastToggles = ALL_ON) -> dict[str, np.ndarray]:
    """Gradients of the symmetric InfoNCE loss for every trainable tensor of ``model``."""
    return model.loss_and_grads(frames, words, cfg, toggles)[1]
