"""Score paired corpora end to end without training.

Load-time policy: every token row is L2-normalized; the coarse vector of a
video or sentence is the normalized mean of its normalized rows. With no
trained model the temporal encoder is the identity.
"""

from __future__ import annotations

import numpy as np

from . import grid
from .aggregation import AggregationConfig
from .encoder import TextFeatures, VideoFeatures
from .numerics import unit
from .objective import ALL_ON, ContrastToggles, Model
from .store import Corpus, PairList, l2_normalize_rows


def sequence_features(tokens) -> tuple[np.ndarray, np.ndarray]:
    fine, _ = l2_normalize_rows(tokens)
    coarse, _ = unit(fine.mean(axis=0))
    return fine, coarse


def video_features(tokens) -> VideoFeatures:
    return VideoFeatures(*sequence_features(tokens))


def text_features(tokens) -> TextFeatures:
    return TextFeatures(*sequence_features(tokens))


def paired_tokens(videos: Corpus, texts: Corpus, pairs: PairList | None = None):
    """Frame and word matrices in pair order (positional pairing if ``pairs`` is None)."""
    if pairs is None:
        if len(videos) != len(texts):
            raise ValueError(f"{len(videos)} videos and {len(texts)} texts cannot be paired by position")
        return [v.tokens for v in videos], [t.tokens for t in texts]
    vi, ti = pairs.resolve(videos, texts)
    return [videos[i].tokens for i in vi], [texts[j].tokens for j in ti]


def similarity_matrix(frames, words, cfg: AggregationConfig, toggles: ContrastToggles = ALL_ON,
                      model: Model | None = None, chunk: int | None = None, threads: int = 1) -> np.ndarray:
    """Unscaled fused similarity, rows = videos, columns = texts."""
    if model is not None:
        return model.similarity(frames, words, cfg, toggles, chunk=chunk)
    v = grid.pack([video_features(f) for f in frames])
    t = grid.pack([text_features(w) for w in words])
    return grid.score_grid(v, t, cfg, toggles, chunk=chunk, threads=threads)
