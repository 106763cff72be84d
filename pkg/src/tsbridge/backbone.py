"""Predictive backbones: a simplified period-mixing model (FFT period
detection + dense axis mixing over period/cycle grids) and a linear
baseline. Both expose the pooled hidden representation consumed by the
mutual-information estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class PeriodSet:
    """Dominant periods by descending spectral amplitude."""

    periods: list[int]
    amplitudes: list[float]


@dataclass
class BackboneConfig:
    kind: str = "period"  # "period" | "linear"
    task: str = "forecast"  # "forecast" | "impute"
    input_len: int = 96
    horizon: int = 96
    channels: int = 1
    d_model: int = 64
    layers: int = 2
    k_periods: int = 3

    def __post_init__(self):
        if self.kind not in ("period", "linear"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.task not in ("forecast", "impute"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.layers < 1 or self.k_periods < 1:
            raise ValueError("layers and k_periods must be >= 1")

    @property
    def out_len(self) -> int:
        return self.input_len if self.task == "impute" else self.horizon


@dataclass
class BackboneOutput:
    prediction: Tensor  # N x out_len x C
    h_first: Tensor  # N x d_model, time-mean after layer 1
    h_last: Tensor  # N x d_model, time-mean after the final layer
    h_m: Tensor  # representation fed to the MI discriminator (= h_last)


def detect_periods(window: np.ndarray, k: int) -> PeriodSet:
    """Top-k periods of an L x C window from the amplitude spectrum of the
    channel-mean series. The zero-frequency bin is excluded; an all-zero
    spectrum falls back to the degenerate period L with amplitude 0."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    L = window.shape[0]
    if L < 4:
        raise ValueError(f"period detection needs L >= 4, got {L}")
    series = window.mean(axis=1)
    amps = np.abs(np.fft.rfft(series))
    amps[0] = 0.0
    if not np.any(amps > 0.0):
        return PeriodSet(periods=[L], amplitudes=[0.0])
    k = min(k, amps.size - 1)
    # quantize so spectral-leakage noise cannot claim a ranking slot
    quantized = np.round(amps / amps.max(), 9)
    order = sorted(range(1, amps.size), key=lambda i: (-quantized[i], i))[:k]
    periods = [min(max(int(round(L / idx)), 2), L) for idx in order]
    return PeriodSet(periods=periods, amplitudes=[float(amps[i]) for i in order])


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class PeriodMixingBackbone:
    """Per detected period, fold time into a (cycles x period) grid and mix
    it with two dense maps (within-period, then across-cycle), aggregate
    period branches by softmax over detached amplitudes, add a residual.

    Dense mixing weights live in shared L x L (and max-cycles square)
    parameter pools sliced to each period's grid, so the parameter shapes
    stay fixed while periods vary per batch.
    """

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        if cfg.kind != "period":
            raise ValueError("config kind must be 'period'")
        self.cfg = cfg
        L, C, d = cfg.input_len, cfg.channels, cfg.d_model
        max_cycles = max(1, math.ceil(L / 2))
        self._max_cycles = max_cycles
        params: dict[str, Tensor] = {
            "embed/w": Tensor(_uniform_init(rng, (C, d), C), requires_grad=True),
            "embed/b": Tensor(_uniform_init(rng, (d,), C), requires_grad=True),
        }
        for i in range(cfg.layers):
            params[f"layer{i}/intra"] = Tensor(_uniform_init(rng, (L, L), L), requires_grad=True)
            params[f"layer{i}/cross"] = Tensor(
                _uniform_init(rng, (max_cycles, max_cycles), max_cycles), requires_grad=True
            )
        params["head/w"] = Tensor(_uniform_init(rng, (d, cfg.out_len * C), d), requires_grad=True)
        params["head/b"] = Tensor(_uniform_init(rng, (cfg.out_len * C,), d), requires_grad=True)
        self.params = params

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def forward(
        self,
        x: np.ndarray,
        params: dict[str, Tensor] | None = None,
        periods: PeriodSet | None = None,
    ) -> BackboneOutput:
        p = params if params is not None else self.params
        cfg = self.cfg
        n, L, C = x.shape
        if L != cfg.input_len or C != cfg.channels:
            raise ad.ShapeError("backbone_forward", (n, L, C), (cfg.input_len, cfg.channels))
        if periods is None:
            periods = detect_periods(x.mean(axis=0), cfg.k_periods)
        agg_w = _softmax_const(periods.amplitudes)

        h = ad.add(ad.axis_dot(Tensor(x), p["embed/w"], 2), p["embed/b"])
        h_first: Tensor | None = None
        for layer in range(cfg.layers):
            branches = []
            for period, weight in zip(periods.periods, agg_w):
                branches.append(
                    ad.mul(
                        self._mix(h, p[f"layer{layer}/intra"], p[f"layer{layer}/cross"], period),
                        float(weight),
                    )
                )
            total = branches[0]
            for b in branches[1:]:
                total = ad.add(total, b)
            h = ad.add(h, total)
            if not np.all(np.isfinite(h.data)):
                raise FloatingPointError(f"non-finite activation after layer {layer}")
            if layer == 0:
                h_first = ad.tmean(h, axis=1)
        h_last = ad.tmean(h, axis=1)
        pred = ad.reshape(
            ad.add(ad.matmul(h_last, p["head/w"]), p["head/b"]), (n, cfg.out_len, C)
        )
        return BackboneOutput(prediction=pred, h_first=h_first, h_last=h_last, h_m=h_last)

    def _mix(self, h: Tensor, intra_pool: Tensor, cross_pool: Tensor, period: int) -> Tensor:
        n, L, d = h.shape
        cycles = math.ceil(L / period)
        padded_len = cycles * period
        grid = ad.reshape(ad.pad_axis(h, 1, padded_len), (n, cycles, period, d))

        w_intra = ad.slice_axis(ad.slice_axis(intra_pool, 0, 0, period), 1, 0, period)
        u = ad.relu(ad.axis_dot(grid, w_intra, 2))

        w_cross = ad.slice_axis(ad.slice_axis(cross_pool, 0, 0, cycles), 1, 0, cycles)
        v = ad.axis_dot(u, w_cross, 1)

        flat = ad.reshape(v, (n, padded_len, d))
        return ad.slice_axis(flat, 1, 0, L)


class LinearBackbone:
    """Single affine map L -> out_len shared across channels; the pooled
    representation is a learned affine map of the flattened input."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        if cfg.kind != "linear":
            raise ValueError("config kind must be 'linear'")
        self.cfg = cfg
        L, C, d = cfg.input_len, cfg.channels, cfg.d_model
        self.params = {
            "map/w": Tensor(_uniform_init(rng, (L, cfg.out_len), L), requires_grad=True),
            "map/b": Tensor(_uniform_init(rng, (cfg.out_len,), L), requires_grad=True),
            "pool/w": Tensor(_uniform_init(rng, (L * C, d), L * C), requires_grad=True),
            "pool/b": Tensor(_uniform_init(rng, (d,), L * C), requires_grad=True),
        }

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def forward(
        self,
        x: np.ndarray,
        params: dict[str, Tensor] | None = None,
        periods: PeriodSet | None = None,
    ) -> BackboneOutput:
        p = params if params is not None else self.params
        cfg = self.cfg
        n, L, C = x.shape
        if L != cfg.input_len or C != cfg.channels:
            raise ad.ShapeError("backbone_forward", (n, L, C), (cfg.input_len, cfg.channels))
        xt = Tensor(x)
        pred = ad.add(ad.axis_dot(xt, p["map/w"], 1), ad.reshape(p["map/b"], (cfg.out_len, 1)))
        pooled = ad.add(ad.matmul(ad.reshape(xt, (n, L * C)), p["pool/w"]), p["pool/b"])
        if not np.all(np.isfinite(pred.data)):
            raise FloatingPointError("non-finite activation in linear backbone")
        return BackboneOutput(prediction=pred, h_first=pooled, h_last=pooled, h_m=pooled)


def _softmax_const(amplitudes: list[float]) -> np.ndarray:
    a = np.asarray(amplitudes, dtype=np.float64)
    e = np.exp(a - a.max())
    return e / e.sum()


def build_backbone(cfg: BackboneConfig, rng: np.random.Generator):
    if cfg.kind == "period":
        return PeriodMixingBackbone(cfg, rng)
    return LinearBackbone(cfg, rng)
