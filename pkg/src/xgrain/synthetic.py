"""Planted-alignment video/text corpora.

Pair k shares a latent unit topic vector z_k. A fixed number of its frames
and words are "relevant": normalize(z_k + sigma * noise). The rest are
independent random unit vectors. Relevance masks are returned alongside so
aggregators can be compared against the ideal filter that only looks at the
relevant cells.

Draw order from the seeded generator, per pair in order: z_k (dim normals),
the relevant frame indices, one dim-normal draw per frame (noise for relevant
frames, the direction itself for irrelevant ones), then the relevant word
indices and one draw per word.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .numerics import make_rng, unit
from .store import Corpus, PairList, TokenSequence


@dataclass(frozen=True)
class SynthConfig:
    num_pairs: int = 64
    dim: int = 32
    frames_per_video: int = 12
    words_per_text: int = 8
    relevant_frac: float = 0.25
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("num_pairs", "dim", "frames_per_video", "words_per_text"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not 0 < self.relevant_frac <= 1:
            raise ParameterError(f"relevant_frac must be in (0, 1], got {self.relevant_frac}")
        if not self.noise_sigma >= 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def relevant_frames(self) -> int:
        return _relevant_count(self.relevant_frac, self.frames_per_video)

    @property
    def relevant_words(self) -> int:
        return _relevant_count(self.relevant_frac, self.words_per_text)


def _relevant_count(frac: float, total: int) -> int:
    # guard against 0.1 * 30 == 3.0000000000000004 rounding up to 4
    return max(1, min(total, math.ceil(frac * total - 1e-9)))


@dataclass(frozen=True)
class PairMask:
    pair_id: str
    relevant_frames: tuple[int, ...]
    relevant_words: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "relevant_frames": list(self.relevant_frames),
            "relevant_words": list(self.relevant_words),
        }


@dataclass(frozen=True)
class SynthDataset:
    videos: Corpus
    texts: Corpus
    pairs: PairList
    masks: tuple[PairMask, ...]
    topics: np.ndarray

    @property
    def frames(self) -> list[np.ndarray]:
        return [it.tokens for it in self.videos]

    @property
    def words(self) -> list[np.ndarray]:
        return [it.tokens for it in self.texts]


def _tokens(rng, z, count, n_relevant, sigma):
    relevant = np.sort(rng.choice(count, size=n_relevant, replace=False))
    is_rel = np.zeros(count, dtype=bool)
    is_rel[relevant] = True
    rows = np.empty((count, z.size))
    for i in range(count):
        g = rng.normal(size=z.size)
        rows[i] = z + sigma * g if is_rel[i] else g
    rows, _ = unit(rows)
    return rows, tuple(int(i) for i in relevant)


def generate(cfg: SynthConfig) -> SynthDataset:
    rng = make_rng(cfg.seed)
    videos, texts, pairs, masks, topics = [], [], [], [], []
    for k in range(cfg.num_pairs):
        z, _ = unit(rng.normal(size=cfg.dim))
        frames, rel_f = _tokens(rng, z, cfg.frames_per_video, cfg.relevant_frames, cfg.noise_sigma)
        words, rel_w = _tokens(rng, z, cfg.words_per_text, cfg.relevant_words, cfg.noise_sigma)
        vid, tid = f"v{k:05d}", f"t{k:05d}"
        videos.append(TokenSequence(vid, frames))
        texts.append(TokenSequence(tid, words))
        pairs.append((vid, tid))
        masks.append(PairMask(f"p{k:05d}", rel_f, rel_w))
        topics.append(z)
    return SynthDataset(
        Corpus(cfg.dim, tuple(videos)),
        Corpus(cfg.dim, tuple(texts)),
        PairList(tuple(pairs)),
        tuple(masks),
        np.array(topics),
    )


def oracle_score(frames, words, relevant_frames, relevant_words) -> float:
    """Mean frame-word dot product over relevant x relevant cells only."""
    f = np.asarray(frames, dtype=np.float64)[list(relevant_frames)]
    w = np.asarray(words, dtype=np.float64)[list(relevant_words)]
    if len(f) == 0 or len(w) == 0:
        raise ParameterError("oracle score needs at least one relevant frame and word")
    return float((f @ w.T).mean())


def write_masks(masks, path) -> None:
    Path(path).write_text(json.dumps([m.to_json() for m in masks], indent=1) + "\n", encoding="utf-8")


def read_masks(path) -> tuple[PairMask, ...]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return tuple(
            PairMask(str(d["pair_id"]), tuple(int(i) for i in d["relevant_frames"]),
                     tuple(int(i) for i in d["relevant_words"]))
            for d in raw
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed masks sidecar: {exc}", path=path) from exc
