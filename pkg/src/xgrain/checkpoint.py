"""Named-tensor checkpoint files for trained models.

Layout (little-endian)::

    b"XGEP"  u32 version=1
    records until end of file:
        u16 name_len, name (utf-8), u32 rank, rank x u32 dims, prod(dims) f32

Scalars are rank-0 records. Model hyperparameters that are not tensors are
stored as ``config.*`` scalars.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import TemporalEncoderParams
from .errors import FormatError, UnsupportedVersionError
from .objective import Model
from .store import _atomic_write, _Reader

PARAMS_MAGIC = b"XGEP"
PARAMS_VERSION = 1
_HEAD = struct.Struct("<4sI")


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [_HEAD.pack(PARAMS_MAGIC, PARAMS_VERSION)]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    return b"".join(chunks)


def decode_tensors(buf: bytes, path=None) -> dict[str, np.ndarray]:
    r = _Reader(buf, path)
    magic, version = _HEAD.unpack(r.take(_HEAD.size, "header"))
    if magic != PARAMS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PARAMS_MAGIC!r}", path=path, offset=0)
    if version != PARAMS_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", path=path, offset=4)
    out = {}
    while r.pos < len(buf):
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        at = r.pos
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid utf-8", path=path, offset=at) from exc
        (rank,) = struct.unpack("<I", r.take(4, f"rank of {name}"))
        if rank > 8:
            raise FormatError(f"tensor {name!r} has implausible rank {rank}", path=path, offset=r.pos - 4)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * count, f"data of {name}"), dtype="<f4")
        out[name] = data.astype(np.float64).reshape(dims)
    return out


def save_model(model: Model, path) -> None:
    tensors = {f"encoder.{k}": v for k, v in model.encoder.named_tensors().items()}
    tensors["head.video"] = model.video_head
    tensors["head.text"] = model.text_head
    tensors["scale"] = model.scale
    tensors["config.heads"] = np.array(model.encoder.heads, dtype=np.float64)
    tensors["config.use_encoder"] = np.array(float(model.use_encoder))
    tensors["config.train_scale"] = np.array(float(model.train_scale))
    _atomic_write(Path(path), encode_tensors(tensors))


def load_model(path) -> Model:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    t = decode_tensors(buf, path)
    try:
        heads = int(t["config.heads"])
        enc = TemporalEncoderParams.from_named(
            {k[len("encoder."):]: v for k, v in t.items() if k.startswith("encoder.")}, heads)
        return Model(enc, t["head.video"], t["head.text"], np.array(t["scale"]).reshape(1),
                     bool(t["config.use_encoder"]), bool(t["config.train_scale"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint is missing or has malformed tensors: {exc}", path=path) from exc
