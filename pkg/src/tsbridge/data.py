"""Dataset loading, chronological splitting, windowing, normalization,
imputation masking, and the synthetic weighted-sine generator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed dataset input (missing file, ragged row, bad cell, NaN)."""


@dataclass
class TimeSeriesDataset:
    """T x C matrix of real values with named channels."""

    channel_names: list[str]
    values: np.ndarray
    timestamps: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D (T x C), got shape {self.values.shape}")
        if self.values.shape[1] != len(self.channel_names):
            raise DataError(
                f"{len(self.channel_names)} channel names for {self.values.shape[1]} columns"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class TimeSeriesBatch:
    """A batch of input windows, targets, and (for imputation) a mask.

    ``mask`` is True where the input is observed; masked entries of ``x``
    are zeroed. MI estimation over a batch needs at least two samples.
    """

    x: np.ndarray  # N x L x C
    y: np.ndarray  # N x H x C (forecast) or N x L x C (imputation target)
    starts: np.ndarray  # N window start indices
    mask: np.ndarray | None = None  # N x L x C booleans, imputation only

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class NormStats:
    """Per-channel z-score statistics, computed on the train region only."""

    mean: np.ndarray
    std: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def fit(cls, train_values: np.ndarray) -> "NormStats":
        mean = train_values.mean(axis=0)
        std = train_values.std(axis=0)
        warnings = []
        degenerate = std <= 0.0
        if np.any(degenerate):
            for idx in np.nonzero(degenerate)[0]:
                warnings.append(f"channel {idx} has zero variance; std set to 1")
            std = np.where(degenerate, 1.0, std)
        return cls(mean=mean, std=std, warnings=warnings)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class SplitConfig:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fracs):
            raise ValueError(f"fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(fracs)}")

    def boundaries(self, length: int) -> tuple[int, int]:
        train_end = int(round(length * self.train_fraction))
        val_end = int(round(length * (self.train_fraction + self.val_fraction)))
        return train_end, val_end


def load_csv(path: str | Path, has_timestamp_column: bool = False) -> TimeSeriesDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = header[1:] if has_timestamp_column else header
        if not names:
            raise DataError(f"{path}: no value columns")
        rows: list[list[float]] = []
        timestamps: list[str] = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}"
                )
            cells = row[1:] if has_timestamp_column else row
            if has_timestamp_column:
                timestamps.append(row[0])
            parsed = []
            for col, cell in zip(names, cells):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}, column '{col}': cannot parse {cell!r}"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(f"{path}: row {row_no}, column '{col}': non-finite value")
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return TimeSeriesDataset(
        channel_names=list(names),
        values=np.array(rows, dtype=np.float64),
        timestamps=timestamps if has_timestamp_column else None,
    )


def save_csv(dataset: TimeSeriesDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if dataset.timestamps is not None:
            writer.writerow(["date"] + dataset.channel_names)
            for ts, row in zip(dataset.timestamps, dataset.values):
                writer.writerow([ts] + [repr(float(v)) for v in row])
        else:
            writer.writerow(dataset.channel_names)
            for row in dataset.values:
                writer.writerow([repr(float(v)) for v in row])


def make_windows(
    values: np.ndarray, input_len: int, horizon: int, stride: int = 1
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous (input, target) window pairs ordered by start index.

    The target window immediately follows the input in time. Count is
    floor((T - L - H) / stride) + 1.
    """
    if input_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("input_len, horizon, and stride must all be >= 1")
    T = values.shape[0]
    needed = input_len + horizon
    if T < needed:
        raise DataError(f"series of length {T} too short: need at least {needed} timesteps")
    out = []
    for start in range(0, T - needed + 1, stride):
        x = values[start : start + input_len]
        y = values[start + input_len : start + needed]
        out.append((x, y))
    return out


def make_impute_windows(values: np.ndarray, input_len: int, stride: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sliding windows for imputation: the target is the window itself
    (masking happens per batch)."""
    if input_len < 1 or stride < 1:
        raise ValueError("input_len and stride must be >= 1")
    T = values.shape[0]
    if T < input_len:
        raise DataError(f"series of length {T} too short: need at least {input_len} timesteps")
    return [
        (values[s : s + input_len], values[s : s + input_len])
        for s in range(0, T - input_len + 1, stride)
    ]


def mask_for_imputation(batch: TimeSeriesBatch, ratio: float, seed) -> TimeSeriesBatch:
    """Obscure round(ratio * L) timepoints per sample per channel.

    Masks are drawn independently per (sample, channel) by a generator
    seeded with ``seed``; masked entries of x are zeroed. The returned
    batch's y holds the unmasked input.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    n, L, c = batch.x.shape
    n_masked = int(round(ratio * L))
    rng = np.random.default_rng(seed)
    mask = np.ones((n, L, c), dtype=bool)
    for i in range(n):
        for j in range(c):
            drop = rng.choice(L, size=n_masked, replace=False)
            mask[i, drop, j] = False
    x = batch.x.copy()
    x[~mask] = 0.0
    return TimeSeriesBatch(x=x, y=batch.x.copy(), starts=batch.starts, mask=mask)


SYNTH_TRAIN_WEIGHTS = (0.1, 0.2, 0.3, 0.4)
SYNTH_TRAIN_FREQS = (1 / 40, 1 / 45, 1 / 50, 1 / 55)
SYNTH_TRAIN_PHASES = (0.0, 1.0, 2.0, 3.0)
SYNTH_TEST_WEIGHTS = (1.0,)
SYNTH_TEST_FREQS = (1 / 20,)
SYNTH_TEST_PHASES = (2.5,)
SYNTH_NOISE = 0.1
SYNTH_LENGTH = 10_000


def synth_generate(
    length: int = SYNTH_LENGTH,
    weights=SYNTH_TRAIN_WEIGHTS,
    freqs=SYNTH_TRAIN_FREQS,
    phases=SYNTH_TRAIN_PHASES,
    noise: float = SYNTH_NOISE,
    seed: int = 0,
) -> TimeSeriesDataset:
    """Weighted-sine benchmark series: sum_i w_i sin(f_i t + p_i) + noise."""
    weights, freqs, phases = map(np.asarray, (weights, freqs, phases))
    if not (weights.shape == freqs.shape == phases.shape):
        raise ValueError(
            f"parameter lists must share a length, got {weights.shape}, "
            f"{freqs.shape}, {phases.shape}"
        )
    if noise < 0:
        raise ValueError("noise level must be >= 0")
    t = np.arange(length, dtype=np.float64)
    clean = np.sum(weights[:, None] * np.sin(freqs[:, None] * t[None, :] + phases[:, None]), axis=0)
    if noise > 0:
        clean = clean + noise * np.random.default_rng(seed).standard_normal(length)
    return TimeSeriesDataset(channel_names=["value"], values=clean[:, None])


def sample_batch_indices(n_windows: int, batch_size: int, seed: int, iteration: int) -> np.ndarray:
    """Uniform-with-replacement window indices, reproducible from
    (seed, iteration)."""
    rng = np.random.default_rng([seed, 0x5A17, iteration])
    return rng.integers(0, n_windows, size=batch_size)


def gather_batch(
    windows: list[tuple[np.ndarray, np.ndarray]], indices: np.ndarray
) -> TimeSeriesBatch:
    x = np.stack([windows[i][0] for i in indices])
    y = np.stack([windows[i][1] for i in indices])
    return TimeSeriesBatch(x=x, y=y, starts=np.asarray(indices))
