"""Window descriptions, lag statistics, deterministic fallback embeddings,
and the binary embedding-table file format.

Descriptions are keyed by a 64-bit FNV-1a content hash so that embedding
tables computed offline can be joined back to windows without storing the
full text.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"LTSE"
EMBED_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


class EmbeddingFileError(ValueError):
    """Malformed embedding file: bad magic, version, truncation, duplicates."""


class MissingKeyError(KeyError):
    """Lookup of a description key that the table does not contain."""


def fnv1a_64(text: str) -> str:
    """FNV-1a 64-bit hash of the UTF-8 text, as 16 lowercase hex chars."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return f"{h:016x}"


@dataclass(frozen=True)
class Description:
    """A textual window description plus its content key."""

    key: str
    text: str

    @classmethod
    def from_text(cls, text: str) -> "Description":
        return cls(key=fnv1a_64(text), text=text)


@dataclass
class TemplateConfig:
    task_description: str = "This is a univariate time series window"
    precision: int = 4
    include_content: bool = True
    include_stats: bool = True
    include_min_max_median: bool = True
    include_lags: bool = True
    lag_count: int = 5

    def __post_init__(self):
        if self.lag_count < 1:
            raise ValueError("lag_count must be >= 1")
        if self.precision < 0:
            raise ValueError("precision must be >= 0")


def compute_lags(series: np.ndarray, k: int = 5) -> tuple[list[int], bool]:
    """Top-k most positively autocorrelated lags of a 1-D series.

    Autocorrelation is computed through the FFT of the mean-removed series;
    lag 0 is excluded and candidates are restricted to [1, L//2]. Ranking is
    on the signed autocorrelation (a pure period-p sine must yield p, not its
    anti-correlated half period); ties break toward the smaller lag, with
    values quantized to 9 decimals of the peak so FFT round-off cannot mask
    a tie. A constant series has no autocorrelation structure; it yields
    lags [1..k] and the degenerate flag.
    """
    x = np.asarray(series, dtype=np.float64)
    L = x.size
    if L < 2 * k:
        raise ValueError(f"series of length {L} too short for {k} lags (need >= {2 * k})")
    centered = x - x.mean()
    if np.allclose(centered, 0.0):
        return list(range(1, k + 1)), True
    spectrum = np.fft.rfft(centered)
    acf = np.fft.irfft(spectrum * np.conj(spectrum), n=L)
    max_lag = L // 2
    scale = float(np.max(np.abs(acf[1 : max_lag + 1]))) or 1.0
    quantized = np.round(acf[1 : max_lag + 1] / scale, 9)
    order = sorted(range(1, max_lag + 1), key=lambda lag: (-quantized[lag - 1], lag))
    return order[:k], False


def _fmt(value: float, precision: int) -> str:
    return f"{value:.{precision}f}"


def render_description(window: np.ndarray, cfg: TemplateConfig) -> Description:
    """Render the canonical single-line description of one window.

    The output is a pure function of (window, cfg): fixed-point numbers, no
    exponent notation, clause order fixed. Golden tests may lock the exact
    bytes.
    """
    x = np.asarray(window, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("window contains non-finite values")
    parts = [f"{cfg.task_description}."]
    if cfg.include_content:
        content = ", ".join(_fmt(v, cfg.precision) for v in x)
        parts.append(f" The content is: {content}.")
    if cfg.include_stats:
        clauses = []
        if cfg.include_min_max_median:
            clauses.append(f"min value {_fmt(float(np.min(x)), cfg.precision)}")
            clauses.append(f"max value {_fmt(float(np.max(x)), cfg.precision)}")
            clauses.append(f"median value {_fmt(float(np.median(x)), cfg.precision)}")
        if cfg.include_lags:
            lags, _ = compute_lags(x, cfg.lag_count)
            clauses.append(f"top {cfg.lag_count} lags [{', '.join(str(l) for l in lags)}]")
        if clauses:
            parts.append(f" Input statistics: {', '.join(clauses)}.")
    return Description.from_text("".join(parts))


def fallback_embed(description: Description, dim: int, seed: int) -> np.ndarray:
    """Deterministic stand-in embedding: unit-norm gaussian keyed by
    (content key, seed). Enables fully offline training and tests."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng([int(description.key, 16), seed & _U64])
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class EmbeddingTable:
    """Map from description content-key to a fixed-dimension vector.

    Vectors pass through float32 on insert so that the on-disk format
    round-trips bit-exactly; in memory they are float64.
    """

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, key: str, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"vector shape {v.shape} does not match dim {self.dim}")
        self.entries[key] = v.astype(np.float32).astype(np.float64)

    def lookup(self, key: str) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise MissingKeyError(f"embedding table has no entry for key {key}") from None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries


def write_embedding_file(table: EmbeddingTable, path: str | Path) -> None:
    if len(table) == 0:
        raise ValueError("refusing to write an empty embedding table")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<HHII", EMBED_VERSION, 0, table.dim, len(table)))
        for key, vec in table.entries.items():
            fh.write(struct.pack("<Q", int(key, 16)))
            fh.write(vec.astype("<f4").tobytes())


def load_embedding_file(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != EMBED_MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic")
    version, _reserved, dim, count = struct.unpack("<HHII", raw[4:16])
    if version != EMBED_VERSION:
        raise EmbeddingFileError(f"{path}: unsupported version {version}")
    record = 8 + 4 * dim
    if len(raw) != 16 + count * record:
        raise EmbeddingFileError(
            f"{path}: truncated or oversized ({len(raw)} bytes for {count} records of {record})"
        )
    table = EmbeddingTable(dim=dim)
    off = 16
    for _ in range(count):
        (key_int,) = struct.unpack_from("<Q", raw, off)
        key = f"{key_int:016x}"
        if key in table.entries:
            raise EmbeddingFileError(f"{path}: duplicate key {key}")
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off + 8)
        table.entries[key] = vec.astype(np.float64)
        off += record
    return table


def write_descriptions_jsonl(descriptions: list[Description], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in descriptions:
            fh.write(json.dumps({"key": d.key, "text": d.text}) + "\n")


def read_descriptions_jsonl(path: str | Path) -> list[Description]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if set(obj) != {"key", "text"}:
                raise ValueError(f"{path}:{line_no}: expected keys 'key' and 'text'")
            if fnv1a_64(obj["text"]) != obj["key"]:
                raise ValueError(f"{path}:{line_no}: key does not match text hash")
            out.append(Description(key=obj["key"], text=obj["text"]))
    return out
