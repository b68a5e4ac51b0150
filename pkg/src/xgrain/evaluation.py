"""Ranking metrics for square score matrices (ground truth on the diagonal)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import as_matrix

KS = (1, 5, 10)
DIRECTIONS = ("t2v", "v2t")


@dataclass(frozen=True)
class RetrievalMetrics:
    r_at: dict[int, float]
    mdr: float
    mnr: float
    n_queries: int
    direction: str | None = None

    @property
    def r1(self) -> float:
        return self.r_at[1]

    @property
    def r5(self) -> float:
        return self.r_at[5]

    @property
    def r10(self) -> float:
        return self.r_at[10]

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "r1": self.r_at[1],
            "r5": self.r_at[5],
            "r10": self.r_at[10],
            "mdr": self.mdr,
            "mnr": self.mnr,
            "n_queries": self.n_queries,
        }


def ranks(scores, direction: str) -> np.ndarray:
    """1-based rank of the ground-truth candidate for every query.

    Rows are videos and columns are texts. For ``t2v`` query i is text i and
    the candidates are the videos in column i; for ``v2t`` it is row i. Ties
    go to the lower candidate index.
    """
    s = as_matrix(scores, "score matrix")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"score matrix must be square, got {s.shape}")
    if direction not in DIRECTIONS:
        raise ParameterError(f"direction must be 't2v' or 'v2t', got {direction!r}")
    cand = s.T if direction == "t2v" else s   # cand[q, c] = score of candidate c for query q
    b = cand.shape[0]
    target = np.diagonal(cand)[:, None]
    better = (cand > target).sum(axis=1)
    lower_index = np.tril(np.ones((b, b), dtype=bool), k=-1)   # c < q
    tied_before = ((cand == target) & lower_index).sum(axis=1)
    return 1 + better + tied_before


def metrics_from_ranks(rank_list, direction: str | None = None) -> RetrievalMetrics:
    r = np.asarray(rank_list, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ShapeError("need a non-empty list of ranks")
    if np.any(r < 1):
        raise ParameterError("ranks are 1-based")
    r_at = {k: 100.0 * float(np.count_nonzero(r <= k)) / r.size for k in KS}
    return RetrievalMetrics(r_at, float(np.median(r)), float(r.mean()), int(r.size), direction)


def evaluate(scores, direction: str) -> RetrievalMetrics:
    return metrics_from_ranks(ranks(scores, direction), direction)


def evaluate_both(scores) -> dict[str, RetrievalMetrics]:
    return {d: evaluate(scores, d) for d in DIRECTIONS}
