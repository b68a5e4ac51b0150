"""Collapsing similarity vectors and matrices to scalars.

Attention aggregation weights each entry by a temperature softmax of the
entries themselves and returns the weighted sum. For a frames x words matrix
this happens twice: over frames for each word and over words for each frame,
then again over each of the two resulting vectors, and the two scalars are
averaged. The Mean/Max baselines follow the same two-stage, two-sided layout
with fixed reducers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contrast import SimilarityBundle
from .errors import ParameterError, ShapeError
from .numerics import as_matrix, as_vector, reduce, softmax_stable

METHODS = ("attention", "mean_mean", "mean_max", "max_mean", "max_max")
DEFAULT_TAU = 0.01


@dataclass(frozen=True)
class AggregationConfig:
    method: str = "attention"
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown aggregation {self.method!r}; choose from {', '.join(METHODS)}")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ParameterError(f"tau must be positive, got {self.tau}")

    @property
    def reducers(self) -> tuple[str, str]:
        """(stage-1, stage-2) reducers for a baseline method."""
        if self.method == "attention":
            raise ParameterError("attention has no fixed reducers")
        first, second = self.method.split("_")
        return first, second


@dataclass(frozen=True)
class AggregatedScores:
    s_vs: float
    s_vw_agg: float
    s_fs_agg: float
    s_fw_agg: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.s_vs, self.s_vw_agg, self.s_fs_agg, self.s_fw_agg)


def attn_agg_vector(x, tau: float) -> float:
    """Softmax(x / tau)-weighted sum of the entries of ``x``."""
    x = as_vector(x)
    if x.size == 0:
        raise ShapeError("cannot aggregate an empty vector")
    return float(np.dot(softmax_stable(x, tau), x))


def attn_agg_matrix(s_fw, tau: float) -> float:
    s = as_matrix(s_fw)
    n, m = s.shape
    if n == 0 or m == 0:
        raise ShapeError(f"cannot aggregate an empty {n}x{m} matrix")
    s_vid = np.array([attn_agg_vector(s[:, j], tau) for j in range(m)])
    s_sen = np.array([attn_agg_vector(s[i, :], tau) for i in range(n)])
    return (attn_agg_vector(s_vid, tau) + attn_agg_vector(s_sen, tau)) / 2


def baseline_agg_matrix(s_fw, first: str, second: str) -> float:
    s = as_matrix(s_fw)
    n, m = s.shape
    if n == 0 or m == 0:
        raise ShapeError(f"cannot aggregate an empty {n}x{m} matrix")
    per_word = np.array([reduce(s[:, j], first) for j in range(m)])
    per_frame = np.array([reduce(s[i, :], first) for i in range(n)])
    return (reduce(per_word, second) + reduce(per_frame, second)) / 2


def aggregate_bundle(b: SimilarityBundle, cfg: AggregationConfig) -> AggregatedScores:
    if cfg.method == "attention":
        return AggregatedScores(
            float(b.s_vs),
            attn_agg_vector(b.s_vw, cfg.tau),
            attn_agg_vector(b.s_fs, cfg.tau),
            attn_agg_matrix(b.s_fw, cfg.tau),
        )
    first, second = cfg.reducers
    return AggregatedScores(
        float(b.s_vs),
        reduce(b.s_vw, first),
        reduce(b.s_fs, first),
        baseline_agg_matrix(b.s_fw, first, second),
    )
