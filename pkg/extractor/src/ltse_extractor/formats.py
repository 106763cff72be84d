"""File contracts shared with the training framework.

The extractor talks to the trainer exclusively through two formats: the
descriptions JSONL it reads and the LTSE embedding table it writes. Both
are reimplemented here from the format definitions so the packages stay
decoupled.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"LTSE"
EMBED_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a_64(text: str) -> str:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return f"{h:016x}"


class KeyCollisionError(ValueError):
    """Two different texts map to the same content key."""


def read_descriptions(path: str | Path) -> list[tuple[str, str]]:
    """(key, text) pairs in file order; identical texts are deduplicated,
    a key shared by different texts aborts."""
    seen: dict[str, str] = {}
    ordered: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key, text = obj["key"], obj["text"]
            if fnv1a_64(text) != key:
                raise ValueError(f"{path}:{line_no}: key does not match text hash")
            if key in seen:
                if seen[key] != text:
                    raise KeyCollisionError(f"{path}:{line_no}: key {key} reused by a different text")
                continue
            seen[key] = text
            ordered.append((key, text))
    return ordered


def write_embedding_file(entries: dict[str, np.ndarray], dim: int, path: str | Path) -> None:
    """Write the binary table atomically (temp file + rename)."""
    if not entries:
        raise ValueError("refusing to write an empty embedding table")
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".ltse.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(EMBED_MAGIC)
            fh.write(struct.pack("<HHII", EMBED_VERSION, 0, dim, len(entries)))
            for key, vec in entries.items():
                if vec.shape != (dim,):
                    raise ValueError(f"vector for {key} has shape {vec.shape}, expected ({dim},)")
                fh.write(struct.pack("<Q", int(key, 16)))
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
