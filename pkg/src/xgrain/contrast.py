"""Video-sentence, video-word, sentence-frame and frame-word similarities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import TextFeatures, VideoFeatures
from .errors import ShapeError
from .numerics import matmul


@dataclass(frozen=True)
class SimilarityBundle:
    """Raw similarities for one (video, text) pair.

    ``s_vw`` has one entry per word, ``s_fs`` one per frame and ``s_fw`` is
    frames x words.
    """

    s_vs: float
    s_vw: np.ndarray
    s_fs: np.ndarray
    s_fw: np.ndarray

    @property
    def n(self) -> int:
        return self.s_fw.shape[0]

    @property
    def m(self) -> int:
        return self.s_fw.shape[1]


def contrast_pair(v: VideoFeatures, t: TextFeatures) -> SimilarityBundle:
    if v.dim != t.dim:
        raise ShapeError(f"video dim {v.dim} does not match text dim {t.dim}")
    vc = v.coarse[:, None]
    tc = t.coarse[:, None]
    return SimilarityBundle(
        s_vs=float(matmul(vc.T, tc)[0, 0]),
        s_vw=matmul(t.fine, vc)[:, 0],
        s_fs=matmul(v.fine, tc)[:, 0],
        s_fw=matmul(v.fine, t.fine.T),
    )


def contrast_batch(videos, texts) -> list[list[SimilarityBundle]]:
    """All pairwise bundles; ``grid[i][j]`` pairs ``videos[i]`` with ``texts[j]``.

    Memory is O(len(videos) * len(texts) * n * m) doubles; use
    ``xgrain.grid`` for batched scoring at larger sizes.
    """
    videos, texts = list(videos), list(texts)
    if not videos or not texts:
        raise ShapeError("contrast_batch needs at least one video and one text")
    dims = {v.dim for v in videos} | {t.dim for t in texts}
    if len(dims) != 1:
        raise ShapeError(f"mixed feature dims in batch: {sorted(dims)}")
    return [[contrast_pair(v, t) for t in texts] for v in videos]
