"""Versioned binary checkpoint for named parameter tensors.

Layout: magic "LTSP" | version u16 LE | count u32 LE, then per tensor:
name length u16 LE | UTF-8 name | rank u8 | rank x extent u32 LE |
float64 LE values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

CKPT_MAGIC = b"LTSP"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def save_params(params: dict[str, Tensor], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path: str | Path, requires_grad: bool = True) -> dict[str, Tensor]:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    params: dict[str, Tensor] = {}
    off = 10
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
            off += 8 * n
            if name in params:
                raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
            params[name] = Tensor(values.reshape(shape).copy(), requires_grad=requires_grad)
    except CheckpointError:
        raise
    except (struct.error, ValueError):
        raise CheckpointError(f"{path}: truncated record") from None
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after {count} tensors")
    return params
