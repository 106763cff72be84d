"""End-to-end training loop: discriminator step, dual-weight computation,
bi-level update of the weighting network, and the backbone descent step,
with variant switches, metrics, CKA analysis, and run reports."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as dio
from . import mi as mi_mod
from . import reweight as rw
from . import textbridge as tb
from .autodiff import Tensor
from .backbone import BackboneConfig, build_backbone

VARIANTS = ("full", "no_mutual", "no_reweight", "no_template", "static", "backbone_only")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: "RunReport"):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    task: str = "forecast"  # forecast | impute
    backbone: str = "period"  # period | linear
    input_len: int = 96
    horizon: int = 96
    d_model: int = 64
    dim_l: int = 4096
    batch_size: int = 64
    iterations: int = 1000
    disc_lr_first: float = 1e-3
    disc_lr_rest: float = 1e-4
    model_lr: float = 0.01  # eta_1: backbone step and virtual step
    outer_lr: float = 1e-3  # eta_2
    val_batch_size: int | None = None  # M, defaults to batch_size
    variant: str = "full"
    static_lambda: float = 0.5
    mask_ratio: float = 0.25
    layers: int = 2
    k_periods: int = 3
    wnet_hidden: int = 100
    normalize_embeddings: bool = True
    disc_every: int = 1
    mi_estimator: str = "jsd"
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0
    debug_hash_checks: bool = False
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("disc_lr_first", "disc_lr_rest", "model_lr", "outer_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 2 and self.uses_mi():
            raise ValueError("MI estimation needs batch_size >= 2")
        if self.mi_estimator not in ("jsd", "mine"):
            raise ValueError(f"unknown mi_estimator {self.mi_estimator!r}")
        if self.disc_every < 1:
            raise ValueError("disc_every must be >= 1")

    def uses_mi(self) -> bool:
        return self.variant in ("full", "no_template", "no_reweight", "static")

    def uses_reweighting(self) -> bool:
        return self.variant in ("full", "no_template", "no_mutual")


@dataclass
class EpochStats:
    train_loss: float
    val_loss: float
    mi_estimate: float
    mean_omega_o: float
    mean_omega_i: float


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list[EpochStats] = field(default_factory=list)
    test_mse: float = math.nan
    test_mae: float = math.nan
    test_mse_original: float = math.nan
    test_mae_original: float = math.nan
    wall_clock_seconds: float = 0.0
    param_count: int = 0
    n_train_windows: int = 0
    status: str = "ok"

    def to_json(self) -> str:
        def clean(obj):
            if isinstance(obj, float) and not math.isfinite(obj):
                return None
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [clean(v) for v in obj]
            return obj

        return json.dumps(clean(asdict(self)), indent=2, sort_keys=True)


@dataclass
class TrainResult:
    model: object
    disc: mi_mod.Discriminator | None
    wnet: rw.WeightingNet | None
    report: RunReport
    stats: dio.NormStats


def metrics(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float]:
    """MSE and MAE over all target entries; with a mask, only over entries
    where the input was obscured (imputation scoring convention)."""
    if pred.size == 0 or target.size == 0:
        raise ValueError("empty prediction or target")
    diff = pred - target
    if mask is not None:
        hidden = ~mask
        if not np.any(hidden):
            raise ValueError("mask hides no entries; nothing to score")
        diff = diff[hidden]
    return float(np.mean(diff**2)), float(np.mean(np.abs(diff)))


def cka_linear(h_a: np.ndarray, h_b: np.ndarray) -> float:
    """Linear centered-kernel-alignment similarity in [0, 1]."""
    if h_a.shape[0] != h_b.shape[0] or h_a.shape[0] < 2:
        raise ValueError(f"need matching sample counts >= 2, got {h_a.shape} vs {h_b.shape}")
    a = h_a - h_a.mean(axis=0)
    b = h_b - h_b.mean(axis=0)
    denom = np.linalg.norm(a.T @ a) * np.linalg.norm(b.T @ b)
    if denom == 0.0:
        raise ValueError("zero-variance representations have undefined CKA")
    return float(np.linalg.norm(b.T @ a) ** 2 / denom)


def dump_weight_curve(wnet: rw.WeightingNet, grid) -> list[tuple[float, float, float]]:
    """(loss, omega_o, omega_i) rows over a grid of nonnegative losses."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 2:
        raise ValueError("need a grid of at least 2 loss values")
    with ad.no_grad():
        w = wnet.forward(Tensor(grid))
    return [
        (float(l), float(o), float(i))
        for l, o, i in zip(grid, w.omega_o.data, w.omega_i.data)
    ]


def write_weight_curve_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("loss,omega_o,omega_i\n")
        for l, o, i in rows:
            fh.write(f"{l!r},{o!r},{i!r}\n")


def _params_digest(*param_dicts) -> str:
    h = hashlib.sha256()
    for params in param_dicts:
        for name in sorted(params):
            h.update(name.encode())
            h.update(params[name].data.tobytes())
    return h.hexdigest()


class _EmbeddingProvider:
    """Per-window text embeddings: rendered description per channel, table
    lookup or fallback embedding, channel-mean, optional L2 normalization.
    Vectors are cached per window index."""

    def __init__(self, windows, template: tb.TemplateConfig, table: tb.EmbeddingTable | None,
                 dim_l: int, seed: int, normalize: bool):
        self.windows = windows
        self.template = template
        self.table = table
        self.dim_l = dim_l
        self.seed = seed
        self.normalize = normalize
        self._cache: dict[int, np.ndarray] = {}

    def vector(self, index: int) -> np.ndarray:
        cached = self._cache.get(index)
        if cached is not None:
            return cached
        x = self.windows[index][0]
        per_channel = []
        for c in range(x.shape[1]):
            desc = tb.render_description(x[:, c], self.template)
            if self.table is not None:
                vec = self.table.lookup(desc.key)
            else:
                vec = tb.fallback_embed(desc, self.dim_l, self.seed)
            per_channel.append(vec)
        v = np.mean(per_channel, axis=0)
        if self.normalize:
            norm = np.linalg.norm(v)
            if norm > 0:
                v = v / norm
        self._cache[index] = v
        return v

    def matrix(self, indices) -> np.ndarray:
        return np.stack([self.vector(int(i)) for i in indices])


def _per_sample_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray | None) -> Tensor:
    d = ad.sub(pred, Tensor(target))
    sq = ad.mul(d, d)
    if mask is None:
        return ad.tmean(sq, axis=(1, 2))
    hidden = (~mask).astype(np.float64)
    counts = hidden.sum(axis=(1, 2), keepdims=True)
    counts[counts == 0] = 1.0
    return ad.tsum(ad.mul(sq, Tensor(hidden / counts)), axis=(1, 2))


def train(
    cfg: TrainConfig,
    dataset: dio.TimeSeriesDataset,
    embeddings: tb.EmbeddingTable | None = None,
    template: tb.TemplateConfig | None = None,
    test_dataset: dio.TimeSeriesDataset | None = None,
) -> TrainResult:
    """Run the full training algorithm and evaluate on the test windows.

    ``embeddings=None`` uses the deterministic fallback embedder. A separate
    ``test_dataset`` (normalized with the train statistics) replaces the test
    fraction of ``dataset``; the bi-level validation batches always come from
    the validation fraction of ``dataset``.
    """
    t_start = time.perf_counter()
    template = template or tb.TemplateConfig()
    if cfg.variant == "no_template":
        # keep raw content, drop the statistics clauses
        template = tb.TemplateConfig(
            task_description=template.task_description,
            precision=template.precision,
            include_content=True,
            include_stats=False,
        )

    split = dio.SplitConfig(cfg.train_fraction, cfg.val_fraction, cfg.test_fraction)
    train_end, val_end = split.boundaries(dataset.length)
    stats = dio.NormStats.fit(dataset.values[:train_end])
    norm_values = stats.apply(dataset.values)

    if cfg.task == "impute":
        def windows_of(values):
            return dio.make_impute_windows(values, cfg.input_len)
    else:
        def windows_of(values):
            return dio.make_windows(values, cfg.input_len, cfg.horizon)

    train_windows = windows_of(norm_values[:train_end])
    val_windows = windows_of(norm_values[train_end:val_end])
    if test_dataset is not None:
        test_windows = windows_of(stats.apply(test_dataset.values))
    else:
        test_windows = windows_of(norm_values[val_end:])

    bb_cfg = BackboneConfig(
        kind=cfg.backbone,
        task=cfg.task,
        input_len=cfg.input_len,
        horizon=cfg.horizon,
        channels=dataset.channels,
        d_model=cfg.d_model,
        layers=cfg.layers,
        k_periods=cfg.k_periods,
    )
    model = build_backbone(bb_cfg, np.random.default_rng([cfg.seed, 1]))
    disc = wnet = None
    if cfg.uses_mi():
        disc = mi_mod.Discriminator(cfg.d_model, cfg.dim_l, np.random.default_rng([cfg.seed, 2]))
    if cfg.uses_reweighting():
        wnet = rw.WeightingNet(np.random.default_rng([cfg.seed, 3]), hidden=cfg.wnet_hidden)

    provider = _EmbeddingProvider(
        train_windows, template, embeddings, cfg.dim_l, cfg.seed, cfg.normalize_embeddings
    )

    report = RunReport(
        config=asdict(cfg),
        seed=cfg.seed,
        param_count=model.param_count(),
        n_train_windows=len(train_windows),
    )
    theta_names = sorted(model.params)
    theta = [model.params[k] for k in theta_names]
    iters_per_epoch = max(1, math.ceil(len(train_windows) / cfg.batch_size))
    val_n = cfg.val_batch_size or cfg.batch_size

    epoch_acc: dict[str, list[float]] = {k: [] for k in ("loss", "val", "mi", "wo", "wi")}

    def flush_epoch():
        report.epochs.append(
            EpochStats(
                train_loss=float(np.mean(epoch_acc["loss"])) if epoch_acc["loss"] else math.nan,
                val_loss=float(np.mean(epoch_acc["val"])) if epoch_acc["val"] else math.nan,
                mi_estimate=float(np.mean(epoch_acc["mi"])) if epoch_acc["mi"] else math.nan,
                mean_omega_o=float(np.mean(epoch_acc["wo"])) if epoch_acc["wo"] else math.nan,
                mean_omega_i=float(np.mean(epoch_acc["wi"])) if epoch_acc["wi"] else math.nan,
            )
        )
        for v in epoch_acc.values():
            v.clear()

    for it in range(cfg.iterations):
        epoch = it // iters_per_epoch
        idx = dio.sample_batch_indices(len(train_windows), cfg.batch_size, cfg.seed, it)
        batch = dio.gather_batch(train_windows, idx)
        if cfg.task == "impute":
            batch = dio.mask_for_imputation(batch, cfg.mask_ratio, [cfg.seed, 0xA5, it])

        out = model.forward(batch.x)
        l_o = _per_sample_loss(out.prediction, batch.y, batch.mask)

        h_l = None
        if cfg.uses_mi():
            h_l = Tensor(provider.matrix(batch.starts))
            if it % cfg.disc_every == 0:
                lr0 = mi_mod.disc_lr(epoch, cfg.disc_lr_first, cfg.disc_lr_rest)
                before = _params_digest(model.params) if cfg.debug_hash_checks else None
                mi_value = mi_mod.update_discriminator(disc, out.h_m, h_l, lr0, cfg.mi_estimator)
                if cfg.debug_hash_checks and _params_digest(model.params) != before:
                    raise AssertionError("discriminator step modified the backbone")
                epoch_acc["mi"].append(mi_value)

        estimator = mi_mod.jsd_mi if cfg.mi_estimator == "jsd" else mi_mod.mine_mi

        def composite_loss(weights: rw.DualWeights | None) -> Tensor:
            if cfg.variant in ("full", "no_template"):
                dist = rw.weights_to_distribution(weights.omega_i)
                if cfg.mi_estimator == "jsd":
                    bound = mi_mod.weighted_jsd_mi(disc, out.h_m, h_l, dist)
                else:
                    bound = mi_mod.mine_mi(disc, out.h_m, h_l)
                return rw.overall_loss(l_o, weights, bound)
            if cfg.variant == "no_mutual":
                return ad.tmean(ad.mul(weights.omega_o, l_o))
            if cfg.variant == "no_reweight":
                return ad.sub(ad.tmean(l_o), estimator(disc, out.h_m, h_l))
            if cfg.variant == "static":
                return rw.static_weight_loss(l_o, estimator(disc, out.h_m, h_l), cfg.static_lambda)
            return ad.tmean(l_o)  # backbone_only

        if cfg.uses_reweighting():
            detached_l_o = l_o.detach()
            weights = wnet.forward(detached_l_o)
            inner_loss = composite_loss(weights)
            virtual = rw.virtual_step(model.params, inner_loss, cfg.model_lr)
            vidx = dio.sample_batch_indices(len(val_windows), val_n, cfg.seed ^ 0x7FFF, it)
            vbatch = dio.gather_batch(val_windows, vidx)
            if cfg.task == "impute":
                vbatch = dio.mask_for_imputation(vbatch, cfg.mask_ratio, [cfg.seed, 0xB6, it])
            vout = model.forward(vbatch.x, params=virtual)
            val_loss = ad.tmean(_per_sample_loss(vout.prediction, vbatch.y, vbatch.mask))
            before = (
                _params_digest(model.params, disc.params if disc else {})
                if cfg.debug_hash_checks
                else None
            )
            rw.outer_update(wnet, val_loss, cfg.outer_lr)
            if cfg.debug_hash_checks:
                after = _params_digest(model.params, disc.params if disc else {})
                if after != before:
                    raise AssertionError("outer step modified the backbone or discriminator")
            epoch_acc["val"].append(val_loss.item())
            weights = wnet.forward(detached_l_o)  # recompute with the updated network
            epoch_acc["wo"].append(float(weights.omega_o.data.mean()))
            epoch_acc["wi"].append(float(weights.omega_i.data.mean()))
            final_loss = composite_loss(weights)
        else:
            final_loss = composite_loss(None)

        value = final_loss.item()
        if not math.isfinite(value) or abs(value) > cfg.divergence_threshold:
            report.status = f"diverged at iteration {it} (loss {value})"
            report.wall_clock_seconds = time.perf_counter() - t_start
            raise TrainingDiverged(report.status, report)
        epoch_acc["loss"].append(value)

        grads = ad.backward(final_loss, theta)
        for tensor, grad in zip(theta, grads):
            tensor.data -= cfg.model_lr * grad.data

        if (it + 1) % iters_per_epoch == 0:
            flush_epoch()

    if cfg.iterations % iters_per_epoch != 0 or cfg.iterations == 0:
        flush_epoch()

    mse, mae, mse_orig, mae_orig = evaluate_model(model, test_windows, cfg, stats)
    report.test_mse, report.test_mae = mse, mae
    report.test_mse_original, report.test_mae_original = mse_orig, mae_orig
    report.wall_clock_seconds = time.perf_counter() - t_start
    return TrainResult(model=model, disc=disc, wnet=wnet, report=report, stats=stats)


def evaluate_model(
    model, test_windows, cfg: TrainConfig, stats: dio.NormStats, chunk: int = 256
) -> tuple[float, float, float, float]:
    """Test MSE/MAE in normalized units and in original units."""
    if not test_windows:
        raise ValueError("empty test set")
    preds, targets, masks = [], [], []
    with ad.no_grad():
        for lo in range(0, len(test_windows), chunk):
            part = test_windows[lo : lo + chunk]
            batch = dio.gather_batch(part, np.arange(len(part)))
            if cfg.task == "impute":
                batch = dio.mask_for_imputation(batch, cfg.mask_ratio, [cfg.seed, 0xC7, lo])
                masks.append(batch.mask)
            preds.append(model.forward(batch.x).prediction.data)
            targets.append(batch.y)
    pred = np.concatenate(preds)
    target = np.concatenate(targets)
    mask = np.concatenate(masks) if masks else None
    mse, mae = metrics(pred, target, mask)
    mse_o, mae_o = metrics(stats.invert(pred), stats.invert(target), mask)
    return mse, mae, mse_o, mae_o
