"""Temporal transformer over frame features, with mean pooling and backprop.

The encoder adds learned position embeddings to a video's frame rows and runs
them through a stack of pre-norm residual blocks::

    x = x + MHA(LN1(x))
    x = x + W2 gelu(W1 LN2(x) + b1) + b2

There is no final layer norm, so a stack with zeroed attention and
feed-forward weights is exactly the identity on ``frames + positions``.
The coarse video vector is the L2-normalized mean of the fine rows.

All internal routines work on a batch of equal-length videos shaped
``(G, n, dim)``; the single-video API wraps them with ``G = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheMismatchError, ParameterError, ShapeError
from .numerics import softmax_axis, unit, unit_backward

LN_EPS = 1e-5
FFN_EXPANSION = 4
LAYER_KEYS = (
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
)
_GELU_K = math.sqrt(2.0 / math.pi)


@dataclass
class TemporalEncoderParams:
    dim: int
    heads: int
    max_frames: int
    position: np.ndarray
    layers: list[dict[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ParameterError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.max_frames < 1:
            raise ParameterError(f"max_frames must be >= 1, got {self.max_frames}")
        if self.position.shape != (self.max_frames, self.dim):
            raise ShapeError(
                f"position embeddings have shape {self.position.shape}, "
                f"expected {(self.max_frames, self.dim)}"
            )
        for i, layer in enumerate(self.layers):
            missing = set(LAYER_KEYS) - set(layer)
            if missing:
                raise ParameterError(f"layer {i} is missing {sorted(missing)}")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Every trainable tensor keyed by a stable dotted name (views, not copies)."""
        out = {"position": self.position}
        for i, layer in enumerate(self.layers):
            for key in LAYER_KEYS:
                out[f"layers.{i}.{key}"] = layer[key]
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], heads: int) -> "TemporalEncoderParams":
        position = np.array(tensors["position"], dtype=np.float64)
        layers = []
        i = 0
        while f"layers.{i}.wq" in tensors:
            layers.append({k: np.array(tensors[f"layers.{i}.{k}"], dtype=np.float64) for k in LAYER_KEYS})
            i += 1
        return cls(position.shape[1], heads, position.shape[0], position, layers)

    def copy(self) -> "TemporalEncoderParams":
        return TemporalEncoderParams(
            self.dim, self.heads, self.max_frames, self.position.copy(),
            [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
        )

    def zeros_like(self) -> "TemporalEncoderParams":
        return TemporalEncoderParams(
            self.dim, self.heads, self.max_frames, np.zeros_like(self.position),
            [{k: np.zeros_like(v) for k, v in layer.items()} for layer in self.layers],
        )


def init_params(dim: int, layers: int = 3, heads: int = 2, max_frames: int = 12,
                rng: np.random.Generator | None = None) -> TemporalEncoderParams:
    """Randomly initialize an encoder.

    Weight matrices are drawn from U(-1/sqrt(dim), 1/sqrt(dim)) in the order
    position, then per layer wq, wk, wv, wo, w1, w2. Biases and layer-norm
    offsets start at zero, layer-norm gains at one, and position embeddings
    from N(0, 0.01^2).
    """
    if heads < 1 or dim < 1 or dim % heads:
        raise ParameterError(f"dim {dim} is not divisible by heads {heads}")
    if layers < 0 or max_frames < 1:
        raise ParameterError("layers must be >= 0 and max_frames >= 1")
    if rng is None:
        raise ParameterError("init_params needs an explicit rng")
    bound = 1.0 / math.sqrt(dim)
    hidden = FFN_EXPANSION * dim
    position = rng.normal(0.0, 0.01, size=(max_frames, dim))
    stack = []
    for _ in range(layers):
        w = {name: rng.uniform(-bound, bound, size=(dim, dim)) for name in ("wq", "wk", "wv", "wo")}
        w["w1"] = rng.uniform(-bound, bound, size=(dim, hidden))
        w["w2"] = rng.uniform(-bound, bound, size=(hidden, dim))
        layer = {
            "ln1_g": np.ones(dim), "ln1_b": np.zeros(dim),
            "bq": np.zeros(dim), "bk": np.zeros(dim), "bv": np.zeros(dim), "bo": np.zeros(dim),
            "ln2_g": np.ones(dim), "ln2_b": np.zeros(dim),
            "b1": np.zeros(hidden), "b2": np.zeros(dim),
            **w,
        }
        stack.append(layer)
    return TemporalEncoderParams(dim, heads, max_frames, position, stack)


@dataclass(frozen=True)
class VideoFeatures:
    fine: np.ndarray
    coarse: np.ndarray

    @property
    def n(self) -> int:
        return self.fine.shape[0]

    @property
    def dim(self) -> int:
        return self.fine.shape[1]


@dataclass(frozen=True)
class TextFeatures:
    fine: np.ndarray
    coarse: np.ndarray

    @property
    def m(self) -> int:
        return self.fine.shape[0]

    @property
    def dim(self) -> int:
        return self.fine.shape[1]


def text_features(words) -> TextFeatures:
    """Fine word rows as given; coarse vector is the normalized mean of the rows."""
    fine = np.ascontiguousarray(getattr(words, "tokens", words), dtype=np.float64)
    if fine.ndim != 2 or fine.shape[0] < 1:
        raise ShapeError(f"word matrix must be (m>=1, dim), got {fine.shape}")
    coarse, _ = unit(fine.mean(axis=0))
    return TextFeatures(fine, coarse)


# -- building blocks ---------------------------------------------------------

def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    sigma = np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc / sigma
    return xhat * g + b, (xhat, sigma)


def _layer_norm_backward(dy, g, cache):
    xhat, sigma = cache
    d = dy.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = (dxhat - dxhat.mean(axis=-1, keepdims=True)
          - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) / sigma
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_K * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    dt = (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _split_heads(x, heads):
    g, n, d = x.shape
    return x.reshape(g, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    g, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(g, n, h * dh)


def _linear_backward(dy, x, w):
    """Gradients of y = x @ w + b over arbitrary leading axes."""
    d_in, d_out = w.shape
    dw = x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    db = dy.reshape(-1, d_out).sum(axis=0)
    return dy @ w.T, dw, db


def _block_forward(x, layer, heads):
    a, ln1 = _layer_norm(x, layer["ln1_g"], layer["ln1_b"])
    q = _split_heads(a @ layer["wq"] + layer["bq"], heads)
    k = _split_heads(a @ layer["wk"] + layer["bk"], heads)
    v = _split_heads(a @ layer["wv"] + layer["bv"], heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    attn = softmax_axis(q @ k.transpose(0, 1, 3, 2) * scale, 1.0, axis=-1)
    ctx = _merge_heads(attn @ v)
    x1 = x + ctx @ layer["wo"] + layer["bo"]
    f, ln2 = _layer_norm(x1, layer["ln2_g"], layer["ln2_b"])
    h = f @ layer["w1"] + layer["b1"]
    u, t = _gelu(h)
    x2 = x1 + u @ layer["w2"] + layer["b2"]
    cache = (a, ln1, q, k, v, attn, ctx, f, ln2, h, t, u)
    return x2, cache


def _block_backward(dx2, layer, heads, cache):
    a, ln1, q, k, v, attn, ctx, f, ln2, h, t, u = cache
    g = {}
    # feed-forward branch
    du, g["w2"], g["b2"] = _linear_backward(dx2, u, layer["w2"])
    dh = _gelu_backward(du, h, t)
    df, g["w1"], g["b1"] = _linear_backward(dh, f, layer["w1"])
    dx1_ln, g["ln2_g"], g["ln2_b"] = _layer_norm_backward(df, layer["ln2_g"], ln2)
    dx1 = dx2 + dx1_ln
    # attention branch
    dctx, g["wo"], g["bo"] = _linear_backward(dx1, ctx, layer["wo"])
    dctx = _split_heads(dctx, heads)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
    dscores *= 1.0 / math.sqrt(q.shape[-1])
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    da = np.zeros_like(a)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dpart, g["w" + name], g["b" + name] = _linear_backward(_merge_heads(dproj), a, layer["w" + name])
        da += dpart
    dx_ln, g["ln1_g"], g["ln1_b"] = _layer_norm_backward(da, layer["ln1_g"], ln1)
    return dx1 + dx_ln, g


# -- batched forward/backward --------------------------------------------------

@dataclass
class EncoderCache:
    params_id: int
    enabled: bool
    shape: tuple
    blocks: list = field(default_factory=list)
    fine: np.ndarray | None = None
    pooled: tuple | None = None


def encode_frames(x: np.ndarray, p: TemporalEncoderParams, enabled: bool = True):
    """Run the encoder on equal-length videos ``x`` of shape (G, n, dim).

    Returns ``(fine, cache)``; ``fine`` has the same shape as ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"frame batch must be (G, n, dim), got {x.shape}")
    _, n, d = x.shape
    if d != p.dim:
        raise ShapeError(f"frames have dim {d}, encoder expects {p.dim}")
    if n < 1 or n > p.max_frames:
        raise ShapeError(f"{n} frames given, encoder accepts 1..{p.max_frames}")
    cache = EncoderCache(id(p), enabled, x.shape)
    if not enabled:
        return x.copy(), cache
    h = x + p.position[:n]
    for layer in p.layers:
        h, c = _block_forward(h, layer, p.heads)
        cache.blocks.append(c)
    return h, cache


def encode_frames_backward(dfine: np.ndarray, p: TemporalEncoderParams, cache: EncoderCache):
    """Backprop ``dfine`` through ``encode_frames``.

    Returns ``(dx, grads)`` where ``grads`` is a ``TemporalEncoderParams`` of
    gradients (all zeros when the encoder was disabled).
    """
    if cache.params_id != id(p) or dfine.shape != cache.shape:
        raise CacheMismatchError(
            f"gradient of shape {dfine.shape} does not match cached forward of shape {cache.shape}"
        )
    grads = p.zeros_like()
    if not cache.enabled:
        return dfine.copy(), grads
    if len(cache.blocks) != p.num_layers:
        raise CacheMismatchError("cached forward has a different layer count")
    dh = dfine
    for i in range(p.num_layers - 1, -1, -1):
        dh, g = _block_backward(dh, p.layers[i], p.heads, cache.blocks[i])
        for key, val in g.items():
            grads.layers[i][key] += val
    n = cache.shape[1]
    grads.position[:n] += dh.sum(axis=0)
    return dh, grads


# -- single-video API -------------------------------------------------------

def _frame_matrix(frames) -> np.ndarray:
    m = np.ascontiguousarray(getattr(frames, "tokens", frames), dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"frames must be a 2-D matrix, got shape {m.shape}")
    return m


def encode_video_forward(frames, p: TemporalEncoderParams, enabled: bool = True):
    """Like ``encode_video`` but also returns the cache needed for backward."""
    x = _frame_matrix(frames)
    fine, cache = encode_frames(x[None], p, enabled)
    fine = fine[0]
    pooled, norm = unit(fine.mean(axis=0))
    cache.fine = fine
    cache.pooled = (pooled, norm)
    return VideoFeatures(fine, pooled), cache


def encode_video(frames, p: TemporalEncoderParams, enabled: bool = True) -> VideoFeatures:
    """Encode one video's frame matrix (or ``TokenSequence``) into fine and coarse features."""
    return encode_video_forward(frames, p, enabled)[0]


def encode_video_backward(grad_fine, grad_coarse, cache: EncoderCache, p: TemporalEncoderParams):
    """Gradients of a scalar loss w.r.t. parameters and input frames.

    ``grad_fine`` is (n, dim) and ``grad_coarse`` is (dim,); either may be
    ``None`` for zero. Returns ``(param_grads, grad_frames)``.
    """
    if cache.fine is None:
        raise CacheMismatchError("cache did not come from encode_video_forward")
    n, d = cache.fine.shape
    total = np.zeros((n, d)) if grad_fine is None else np.array(grad_fine, dtype=np.float64)
    if total.shape != (n, d):
        raise CacheMismatchError(f"grad_fine shape {total.shape} does not match cached {(n, d)}")
    if grad_coarse is not None:
        pooled, norm = cache.pooled
        dmean = unit_backward(np.asarray(grad_coarse, dtype=np.float64), pooled, norm)
        total = total + dmean / n
    dx, grads = encode_frames_backward(total[None], p, cache)
    return grads, dx[0]
