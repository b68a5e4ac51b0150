"""Central finite-difference verification of ``Model.loss_and_grads``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AggregationConfig
from .numerics import make_rng
from .objective import ALL_ON, ContrastToggles, Model

DEFAULT_H = 1e-3
DEFAULT_TOL = 1e-4
# Tensors larger than this are probed at a seeded sample of entries.
MAX_COORDS = 32
# Gradient magnitudes below this are treated as zero when forming relative errors.
ABS_FLOOR = 1e-6

# With h = 1e-3 the central-difference truncation error grows like (h / tau)^2,
# which reaches ~1e-4 at tau = 0.01; the suite runs at tau = 0.1.
CHECK_TAU = 0.1
CHECK_SCALE = 100.0


@dataclass
class ToyInstance:
    model: Model
    frames: list[np.ndarray]
    words: list[np.ndarray]


def toy_instance(seed: int, batch: int = 4, n: int = 3, m: int = 4, dim: int = 8,
                 layers: int = 3, heads: int = 2, scale: float = CHECK_SCALE,
                 train_scale: bool = True) -> ToyInstance:
    """Seeded random model and batch; every parameter is perturbed off its init.

    Inputs are unnormalized N(0, 1) rows so the residual stream is O(1) per
    entry, as it is for real (pre-normalization) encoder features.
    """
    rng = make_rng(seed)
    model = Model.init(dim, rng, layers=layers, heads=heads, max_frames=max(n, 1),
                       scale=scale, train_scale=train_scale, head_init="orthogonal", head_gain=1.0)
    for name, t in model.named_tensors().items():
        if name != "scale":
            t += rng.normal(0.0, 0.05, size=t.shape)
    frames = [rng.normal(size=(n, dim)) for _ in range(batch)]
    words = [rng.normal(size=(m, dim)) for _ in range(batch)]
    return ToyInstance(model, frames, words)


def sample_coords(shape, max_coords: int | None, rng: np.random.Generator) -> np.ndarray:
    """Flat indices to probe: all of them, or a seeded sample of ``max_coords``."""
    size = int(np.prod(shape))
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


def numeric_grads(model: Model, frames, words, cfg, toggles=ALL_ON, h: float = DEFAULT_H,
                  coords: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Central differences of the loss; entries outside ``coords`` are NaN."""
    def loss():
        return model.loss_and_grads(frames, words, cfg, toggles, need_grads=False)[0].l_total

    out = {}
    for name, t in model.named_tensors().items():
        flat = t.reshape(-1)  # a view: writes go through to the model
        probe = np.arange(flat.size) if coords is None else coords[name]
        g = np.full(flat.size, np.nan)
        for i in probe:
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            g[i] = (up - down) / (2 * h)
        out[name] = g.reshape(t.shape)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| over probed entries, divided by the larger gradient magnitude.

    Unprobed entries of ``numeric`` are NaN and ignored; the analytic
    magnitude is taken over the whole tensor.
    """
    probed = ~np.isnan(numeric)
    a, n = analytic[probed], numeric[probed]
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(n).max(initial=0.0), ABS_FLOOR)
    return float(np.abs(a - n).max(initial=0.0) / denom)


def check_instance(inst: ToyInstance, cfg: AggregationConfig | None = None,
                   toggles: ContrastToggles = ALL_ON, h: float = DEFAULT_H,
                   corrupt: bool = False, max_coords: int | None = MAX_COORDS,
                   seed: int = 0) -> dict[str, float]:
    """Relative error per named tensor.

    ``corrupt`` perturbs one analytic gradient entry (a negative control).
    """
    cfg = cfg or AggregationConfig("attention", CHECK_TAU)
    _, analytic = inst.model.loss_and_grads(inst.frames, inst.words, cfg, toggles)
    rng = make_rng(seed)
    coords = {name: sample_coords(t.shape, max_coords, rng) for name, t in analytic.items()}
    if corrupt:
        g = analytic["head.video"]
        g.flat[coords["head.video"][0]] += 1e-2 * max(1.0, np.abs(g).max())
    numeric = numeric_grads(inst.model, inst.frames, inst.words, cfg, toggles, h, coords)
    return {name: relative_error(analytic[name], numeric[name]) for name in analytic}


def run_suite(seed: int = 0, instances: int = 10, batch: int = 4, n: int = 3, m: int = 4,
              dim: int = 8, h: float = DEFAULT_H, corrupt: bool = False,
              cfg: AggregationConfig | None = None) -> dict[str, float]:
    """Max relative error per tensor over ``instances`` seeded toy batches."""
    worst: dict[str, float] = {}
    for k in range(instances):
        inst = toy_instance(seed + k, batch=batch, n=n, m=m, dim=dim)
        errs = check_instance(inst, cfg=cfg, h=h, corrupt=corrupt and k == 0, seed=seed + k)
        for name, e in errs.items():
            worst[name] = max(worst.get(name, 0.0), e)
    return worst
