"""Token-sequence corpora, pair lists, and their on-disk formats.

Corpus file (little-endian)::

    b"XGEB"  u32 version=1  u32 dim  u64 item_count
    per item: u16 id_len, id bytes (utf-8), u32 token_count, token_count*dim f32

Pair list: utf-8 text, one ``video_id<TAB>text_id`` per line; blank lines and
lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, UnsupportedVersionError

logger = logging.getLogger(__name__)

CORPUS_MAGIC = b"XGEB"
CORPUS_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class TokenSequence:
    """One video (rows are frames) or one sentence (rows are words)."""

    id: str
    tokens: np.ndarray

    def __post_init__(self):
        tokens = np.ascontiguousarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ShapeError(f"tokens of {self.id!r} must be 2-D, got shape {tokens.shape}")
        if tokens.shape[0] < 1:
            raise ShapeError(f"sequence {self.id!r} has no tokens")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class Corpus:
    dim: int
    items: tuple[TokenSequence, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if self.dim < 1:
            raise FormatError(f"corpus dim must be >= 1, got {self.dim}")
        if not items:
            raise FormatError("corpus has no items")
        index = {}
        for pos, item in enumerate(items):
            if item.dim != self.dim:
                raise ShapeError(f"item {item.id!r} has dim {item.dim}, corpus dim is {self.dim}")
            if item.id in index:
                raise FormatError(f"duplicate id {item.id!r}")
            if not np.all(np.isfinite(item.tokens)):
                raise FormatError(f"item {item.id!r} contains non-finite values")
            index[item.id] = pos
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, key) -> TokenSequence:
        if isinstance(key, str):
            return self.items[self._index[key]]
        return self.items[key]

    def position(self, item_id: str) -> int:
        return self._index[item_id]

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.dim == other.dim
            and len(self) == len(other)
            and all(
                a.id == b.id and np.array_equal(a.tokens, b.tokens)
                for a, b in zip(self.items, other.items)
            )
        )


@dataclass(frozen=True)
class PairList:
    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        pairs = tuple((str(v), str(t)) for v, t in self.pairs)
        if len(set(pairs)) != len(pairs):
            seen = set()
            for p in pairs:
                if p in seen:
                    raise FormatError(f"pair {p[0]!r}/{p[1]!r} listed twice")
                seen.add(p)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def resolve(self, videos: Corpus, texts: Corpus) -> tuple[list[int], list[int]]:
        """Map each pair to (video position, text position), checking every id exists."""
        vi, ti = [], []
        for v, t in self.pairs:
            if v not in videos._index:
                raise FormatError(f"pair references unknown video id {v!r}")
            if t not in texts._index:
                raise FormatError(f"pair references unknown text id {t!r}")
            vi.append(videos.position(v))
            ti.append(texts.position(t))
        return vi, ti


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def encode_corpus(corpus: Corpus) -> bytes:
    if len(corpus) == 0:
        raise FormatError("corpus has no items")
    chunks = [_HEADER.pack(CORPUS_MAGIC, CORPUS_VERSION, corpus.dim, len(corpus))]
    for item in corpus.items:
        raw_id = item.id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise FormatError(f"id of {len(raw_id)} bytes exceeds the 65535-byte limit")
        chunks.append(_U16.pack(len(raw_id)))
        chunks.append(raw_id)
        chunks.append(_U32.pack(item.count))
        chunks.append(item.tokens.astype("<f4").tobytes())
    return b"".join(chunks)


def write_corpus(corpus: Corpus, path) -> None:
    """Write ``corpus`` to ``path``. Values are stored as float32."""
    _atomic_write(Path(path), encode_corpus(corpus))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated file while reading {what} ({n} bytes needed, "
                f"{len(self.buf) - self.pos} left)",
                path=self.path,
                offset=self.pos,
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def decode_corpus(buf: bytes, path=None) -> Corpus:
    r = _Reader(buf, path)
    magic, version, dim, count = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if magic != CORPUS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CORPUS_MAGIC!r}", path=path, offset=0)
    if version != CORPUS_VERSION:
        raise UnsupportedVersionError(f"unsupported corpus version {version}", path=path, offset=4)
    if dim == 0:
        raise FormatError("dim is 0", path=path, offset=8)
    if count == 0:
        raise FormatError("item count is 0", path=path, offset=12)
    # Every item needs at least 6 + 4*dim bytes; reject impossible counts before looping.
    if count * (6 + 4 * dim) > len(buf) - r.pos:
        raise FormatError(
            f"declared {count} items of dim {dim} cannot fit in {len(buf)} bytes",
            path=path,
            offset=12,
        )
    items = []
    seen = set()
    for k in range(count):
        (id_len,) = _U16.unpack(r.take(2, f"id length of item {k}"))
        id_at = r.pos
        try:
            item_id = r.take(id_len, f"id of item {k}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"id of item {k} is not valid utf-8", path=path, offset=id_at) from exc
        if item_id in seen:
            raise FormatError(f"duplicate id {item_id!r}", path=path, offset=id_at)
        seen.add(item_id)
        count_at = r.pos
        (n_tok,) = _U32.unpack(r.take(4, f"token count of item {k}"))
        if n_tok == 0:
            raise FormatError(f"item {item_id!r} has zero tokens", path=path, offset=count_at)
        values_at = r.pos
        raw = r.take(4 * n_tok * dim, f"values of item {item_id!r}")
        with np.errstate(invalid="ignore"):   # signalling NaNs are caught just below
            tokens = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(n_tok, dim)
        if not np.all(np.isfinite(tokens)):
            raise FormatError(f"item {item_id!r} contains non-finite values", path=path, offset=values_at)
        items.append(TokenSequence(item_id, tokens))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last item", path=path, offset=r.pos)
    return Corpus(dim, tuple(items))


def read_corpus(path) -> Corpus:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode_corpus(buf, path)


def read_pairs(path) -> PairList:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise FormatError("pair list is not valid utf-8", path=path) from exc
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise FormatError(f"line {lineno}: expected 'video_id<TAB>text_id'", path=path)
        pairs.append((fields[0], fields[1]))
    return PairList(tuple(pairs))


def write_pairs(pairs: PairList, path) -> None:
    lines = [f"{v}\t{t}\n" for v, t in pairs]
    _atomic_write(Path(path), "".join(lines).encode("utf-8"))


def l2_normalize_rows(m) -> tuple[np.ndarray, np.ndarray]:
    """Scale each row to unit Euclidean norm.

    Returns the normalized matrix and a boolean mask of rows that were zero
    (those rows are left as zeros).
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    zero = norms[..., 0] == 0
    out = m / np.where(norms == 0, 1.0, norms)
    if zero.any():
        logger.warning("%d zero row(s) left unnormalized", int(zero.sum()))
    return out, zero


def normalize_corpus(corpus: Corpus) -> Corpus:
    """L2-normalize every token row (the load-time policy for similarity scoring)."""
    items = []
    for item in corpus.items:
        rows, _ = l2_normalize_rows(item.tokens)
        items.append(TokenSequence(item.id, rows))
    return Corpus(corpus.dim, tuple(items))
