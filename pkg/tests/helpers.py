"""Shared builders for the test suite."""

import numpy as np

from xgrain.store import Corpus, TokenSequence


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numeric gradient of scalar f() w.r.t. x (perturbed in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def random_corpus(rng, max_items=6, max_tokens=5, max_dim=8) -> Corpus:
    """Random corpus whose values are exactly representable in float32, ids include non-ascii."""
    dim = int(rng.integers(1, max_dim + 1))
    items = []
    for k in range(int(rng.integers(1, max_items + 1))):
        n = int(rng.integers(1, max_tokens + 1))
        tokens = rng.normal(size=(n, dim)).astype(np.float32).astype(np.float64)
        items.append(TokenSequence(f"it{k}-é{rng.integers(1000)}", tokens))
    return Corpus(dim, tuple(items))
