"""Binary weight files.

Layout (little-endian): magic ``C3DMWTS1``; u32 tensor count; then per tensor a
u32 name length, the UTF-8 name, u32 rank, ``rank`` u32 dims and float32 data.
Model hyper-parameters travel as a ``meta.model`` tensor; checkpoints may add
``meta.step`` and ``adam.m.*`` / ``adam.v.*`` moment tensors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ParamSet
from .optim import AdamState

MAGIC_PREFIX = b"C3DMWTS"
VERSION = b"1"
MAGIC = MAGIC_PREFIX + VERSION


_POOLS = ("flatten", "keypoints")


class WeightFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class WeightVersionError(WeightFormatError):
    pass


def _config_vector(cfg: ModelConfig) -> np.ndarray:
    return np.array(
        [cfg.image_size, *cfg.channels, cfg.enc_hidden, cfg.embed_dim, cfg.action_dim,
         cfg.n_chains, cfg.temb_dim, int(cfg.use_t), cfg.den_hidden, cfg.ctx_hidden,
         cfg.residual_gain, _POOLS.index(cfg.pool)],
        dtype=np.float32,
    )


def _config_from_vector(v: np.ndarray) -> ModelConfig:
    if v.shape != (15,):
        raise WeightFormatError(f"meta.model has shape {v.shape}, expected (15,)", 8)
    x = [int(round(float(e))) for e in v]
    if not 0 <= x[14] < len(_POOLS):
        raise WeightFormatError(f"unknown pooling code {x[14]}", 8)
    # the gain is stored as f32; round back to the decimal it was written from
    gain = float(np.format_float_positional(v[13], precision=7, unique=True))
    return ModelConfig(image_size=x[0], channels=tuple(x[1:5]), enc_hidden=x[5], embed_dim=x[6],
                       action_dim=x[7], n_chains=x[8], temb_dim=x[9], use_t=bool(x[10]), den_hidden=x[11],
                       ctx_hidden=x[12], residual_gain=gain, pool=_POOLS[x[14]])


def write_tensors(path, tensors: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path) -> dict:
    buf = Path(path).read_bytes()
    if len(buf) < 8 or buf[:7] != MAGIC_PREFIX:
        raise WeightFormatError("bad magic bytes", 0)
    if buf[7:8] != VERSION:
        raise WeightVersionError(f"unsupported weight file version {buf[7:8]!r}, expected {VERSION!r}", 7)
    pos = 8

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFormatError(f"truncated file while reading {what}", pos)
        out = buf[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        start = pos
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise WeightFormatError("tensor name is not valid UTF-8", start) from None
        if name in tensors:
            raise WeightFormatError(f"duplicate tensor name {name!r}", start)
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name!r}"), dtype="<f4").reshape(dims)
        tensors[name] = data.astype(np.float32)
    if pos != len(buf):
        raise WeightFormatError("trailing bytes after last tensor", pos)
    return tensors


def save_params(params: ParamSet, path, adam: AdamState | None = None) -> None:
    tensors = {"meta.model": _config_vector(params.config)}
    tensors.update(params)
    if adam is not None:
        tensors["meta.step"] = np.array([adam.step], dtype=np.float32)
        for k in params:
            if k in adam.m:
                tensors[f"adam.m.{k}"] = adam.m[k]
                tensors[f"adam.v.{k}"] = adam.v[k]
    write_tensors(path, tensors)


def load_checkpoint(path):
    """Return ``(params, step, moments)``; ``step`` is 0 for plain weight files."""
    tensors = read_tensors(path)
    if "meta.model" not in tensors:
        raise WeightFormatError("missing meta.model tensor", 8)
    cfg = _config_from_vector(tensors.pop("meta.model"))
    step = int(tensors.pop("meta.step")[0]) if "meta.step" in tensors else 0
    m = {k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")}
    params = ParamSet({k: t for k, t in tensors.items() if not k.startswith("adam.")}, cfg)
    return params, step, (m, v)


def load_params(path) -> ParamSet:
    return load_checkpoint(path)[0]
