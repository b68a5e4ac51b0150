"""Batched similarity grids with padding masks, plus their backward passes.

Videos and texts of different lengths are zero-padded to a common length and
carry a boolean mask. Every reduction ignores masked entries, so a grid cell
computed here equals the per-pair result from ``contrast`` and
``aggregation`` (the tests check this cell by cell).

Shapes: ``Bv`` videos with up to ``n`` frames, ``Bt`` texts with up to ``m``
words, feature size ``d``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .aggregation import AggregationConfig
from .errors import ShapeError
from .numerics import softmax_axis


@dataclass(frozen=True)
class Packed:
    fine: np.ndarray    # (B, L, d), zero rows where mask is False
    mask: np.ndarray    # (B, L) bool
    coarse: np.ndarray  # (B, d)

    @property
    def size(self) -> int:
        return self.fine.shape[0]

    @property
    def dim(self) -> int:
        return self.fine.shape[2]

    def rows(self, sl: slice) -> "Packed":
        return Packed(self.fine[sl], self.mask[sl], self.coarse[sl])


def pad(mats: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack 2-D arrays of varying row count into (B, L, d) plus a mask."""
    if not mats:
        raise ShapeError("nothing to pack")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise ShapeError(f"mixed feature dims: {sorted(dims)}")
    d = dims.pop()
    length = max(m.shape[0] for m in mats)
    out = np.zeros((len(mats), length, d))
    mask = np.zeros((len(mats), length), dtype=bool)
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
        mask[i, : m.shape[0]] = True
    return out, mask


def pack(features) -> Packed:
    """Pack a list of ``VideoFeatures`` or ``TextFeatures``."""
    features = list(features)
    fine, mask = pad([f.fine for f in features])
    coarse = np.stack([f.coarse for f in features])
    return Packed(fine, mask, coarse)


# -- contrast -----------------------------------------------------------------

def similarities(v: Packed, t: Packed) -> dict[str, np.ndarray]:
    if v.dim != t.dim:
        raise ShapeError(f"video dim {v.dim} does not match text dim {t.dim}")
    return {
        "s_vs": v.coarse @ t.coarse.T,
        "s_vw": np.einsum("id,jwd->ijw", v.coarse, t.fine),
        "s_fs": np.einsum("ifd,jd->ijf", v.fine, t.coarse),
        "s_fw": np.einsum("ifd,jwd->ijfw", v.fine, t.fine),
    }


def similarities_backward(ds: dict[str, np.ndarray], v: Packed, t: Packed):
    """Returns (d_video_fine, d_video_coarse, d_text_fine, d_text_coarse)."""
    dvc = ds["s_vs"] @ t.coarse + np.einsum("ijw,jwd->id", ds["s_vw"], t.fine)
    dtc = ds["s_vs"].T @ v.coarse + np.einsum("ijf,ifd->jd", ds["s_fs"], v.fine)
    dvf = np.einsum("ijf,jd->ifd", ds["s_fs"], t.coarse) + np.einsum("ijfw,jwd->ifd", ds["s_fw"], t.fine)
    dtf = np.einsum("ijw,id->jwd", ds["s_vw"], v.coarse) + np.einsum("ijfw,ifd->jwd", ds["s_fw"], v.fine)
    return dvf * v.mask[..., None], dvc, dtf * t.mask[..., None], dtc


# -- masked reducers ------------------------------------------------------------

def _attn(x, mask, tau, axis):
    z = np.where(mask, x, -np.inf)
    w = softmax_axis(z, tau, axis=axis)
    return np.sum(w * np.where(mask, x, 0.0), axis=axis), w


def _attn_backward(g, x, a, w, tau, axis):
    g = np.expand_dims(g, axis)
    a = np.expand_dims(a, axis)
    return g * w * (1.0 + (np.where(w > 0, x, a) - a) / tau)


def _mean(x, mask, axis):
    count = mask.sum(axis=axis, keepdims=True)
    w = np.broadcast_to(mask / count, x.shape)
    return np.sum(np.where(mask, x, 0.0), axis=axis) / np.squeeze(count, axis), w


def _max(x, mask, axis):
    z = np.where(mask, x, -np.inf)
    idx = np.argmax(z, axis=axis)
    w = np.zeros(x.shape)
    np.put_along_axis(w, np.expand_dims(idx, axis), 1.0, axis=axis)
    return np.take_along_axis(z, np.expand_dims(idx, axis), axis=axis).squeeze(axis), w


def _reduce(kind, x, mask, tau, axis):
    mask = np.broadcast_to(mask, x.shape)
    if kind == "attention":
        return _attn(x, mask, tau, axis)
    if kind == "mean":
        return _mean(x, mask, axis)
    return _max(x, mask, axis)


def _reduce_backward(kind, g, x, a, w, tau, axis):
    if kind == "attention":
        return _attn_backward(g, x, a, w, tau, axis)
    # mean and max are linear in x given their (sub)gradient weights
    return np.expand_dims(g, axis) * w


# -- aggregation ----------------------------------------------------------------

def aggregate(sims: dict[str, np.ndarray], vmask: np.ndarray, tmask: np.ndarray,
              cfg: AggregationConfig):
    """Aggregate a similarity grid to four (Bv, Bt) score arrays.

    Returns ``(scores, cache)`` where ``scores`` maps ``s_vs``, ``s_vw_agg``,
    ``s_fs_agg`` and ``s_fw_agg`` to arrays.
    """
    if cfg.method == "attention":
        first = second = "attention"
    else:
        first, second = cfg.reducers
    tau = cfg.tau
    wm = tmask[None, :, :]              # (1, Bt, m) word mask over s_vw
    fm = vmask[:, None, :]              # (Bv, 1, n) frame mask over s_fs
    rows = vmask[:, None, :, None]      # frames valid in s_fw
    cols = tmask[None, :, None, :]      # words valid in s_fw

    s_vw = sims["s_vw"]
    s_fs = sims["s_fs"]
    s_fw = sims["s_fw"]
    vw_agg, vw_w = _reduce(first, s_vw, wm, tau, -1)
    fs_agg, fs_w = _reduce(first, s_fs, fm, tau, -1)
    s_vid, vid_w = _reduce(first, s_fw, rows, tau, -2)   # (Bv, Bt, m)
    s_sen, sen_w = _reduce(first, s_fw, cols, tau, -1)   # (Bv, Bt, n)
    vid2, vid2_w = _reduce(second, s_vid, wm, tau, -1)
    sen2, sen2_w = _reduce(second, s_sen, fm, tau, -1)
    scores = {
        "s_vs": sims["s_vs"],
        "s_vw_agg": vw_agg,
        "s_fs_agg": fs_agg,
        "s_fw_agg": (vid2 + sen2) / 2,
    }
    cache = dict(
        first=first, second=second, tau=tau, sims=sims,
        vw=(vw_agg, vw_w), fs=(fs_agg, fs_w), vid=(s_vid, vid_w), sen=(s_sen, sen_w),
        vid2=(vid2, vid2_w), sen2=(sen2, sen2_w),
    )
    return scores, cache


def aggregate_backward(dscores: dict[str, np.ndarray], cache) -> dict[str, np.ndarray]:
    first, second, tau, sims = cache["first"], cache["second"], cache["tau"], cache["sims"]
    d_vw = _reduce_backward(first, dscores["s_vw_agg"], sims["s_vw"], *cache["vw"], tau, -1)
    d_fs = _reduce_backward(first, dscores["s_fs_agg"], sims["s_fs"], *cache["fs"], tau, -1)
    half = dscores["s_fw_agg"] / 2
    s_vid, _ = cache["vid"]
    s_sen, _ = cache["sen"]
    d_vid = _reduce_backward(second, half, s_vid, *cache["vid2"], tau, -1)
    d_sen = _reduce_backward(second, half, s_sen, *cache["sen2"], tau, -1)
    d_fw = (_reduce_backward(first, d_vid, sims["s_fw"], *cache["vid"], tau, -2)
            + _reduce_backward(first, d_sen, sims["s_fw"], *cache["sen"], tau, -1))
    return {"s_vs": dscores["s_vs"], "s_vw": d_vw, "s_fs": d_fs, "s_fw": d_fw}


TOGGLE_KEYS = ("s_vs", "s_vw_agg", "s_fs_agg", "s_fw_agg")


def fuse(scores: dict[str, np.ndarray], toggles) -> np.ndarray:
    """Mean of the enabled aggregated scores (shape (Bv, Bt))."""
    keys = [k for k, on in zip(TOGGLE_KEYS, toggles.flags) if on]
    return sum(scores[k] for k in keys) / len(keys)


def fuse_backward(dfused: np.ndarray, toggles) -> dict[str, np.ndarray]:
    k = sum(toggles.flags)
    return {key: (dfused / k if on else np.zeros_like(dfused))
            for key, on in zip(TOGGLE_KEYS, toggles.flags)}


def score_grid(v: Packed, t: Packed, cfg: AggregationConfig, toggles,
               chunk: int | None = None, threads: int = 1) -> np.ndarray:
    """Fused (unscaled) similarity for every video/text combination.

    ``chunk`` bounds how many video rows are materialized at once (memory is
    about chunk * Bt * n * m doubles); ``threads`` > 1 scores chunks
    concurrently. The result does not depend on either setting.
    """
    def rows(start):
        vs = v.rows(slice(start, start + step))
        scores, _ = aggregate(similarities(vs, t), vs.mask, t.mask, cfg)
        return fuse(scores, toggles)

    step = v.size if not chunk else max(1, int(chunk))
    starts = range(0, v.size, step)
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(rows, starts))
    else:
        parts = [rows(s) for s in starts]
    return np.concatenate(parts, axis=0)
