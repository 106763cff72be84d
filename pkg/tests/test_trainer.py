import math

import numpy as np
import pytest

from tsbridge import data as dio
from tsbridge import textbridge as tb
from tsbridge import trainer as tr


def tiny_config(**kw):
    base = dict(
        input_len=24,
        horizon=8,
        d_model=8,
        dim_l=16,
        batch_size=4,
        iterations=4,
        layers=1,
        k_periods=2,
        wnet_hidden=6,
        model_lr=0.01,
        seed=1,
    )
    base.update(kw)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="module")
def synth_dataset():
    return dio.synth_generate(length=1200, seed=5)


# -- metrics -----------------------------------------------------------------

def test_metrics_perfect_prediction():
    y = np.random.default_rng(0).normal(size=(3, 5, 2))
    assert tr.metrics(y, y) == (0.0, 0.0)


def test_metrics_constant_offset():
    y = np.zeros((2, 4, 1))
    assert tr.metrics(y + 1.0, y) == (1.0, 1.0)


def test_metrics_alternating_offset():
    y = np.zeros((1, 4, 1))
    pred = y.copy()
    pred[0, :, 0] = [1.0, -1.0, 1.0, -1.0]
    assert tr.metrics(pred, y) == (1.0, 1.0)


def test_metrics_mask_restricts_to_hidden_entries():
    y = np.zeros((1, 4, 1))
    pred = np.ones((1, 4, 1)) * 3.0
    mask = np.ones((1, 4, 1), dtype=bool)
    mask[0, :2, 0] = False  # only the first two entries are scored
    pred[0, 2:, 0] = 999.0
    assert tr.metrics(pred, y, mask) == (9.0, 3.0)


def test_metrics_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        tr.metrics(np.zeros((0, 1, 1)), np.zeros((0, 1, 1)))


# -- CKA ------------------------------------------------------------------------

def test_cka_self_similarity():
    x = np.random.default_rng(1).normal(size=(32, 8))
    assert tr.cka_linear(x, x) == pytest.approx(1.0, abs=1e-12)


def test_cka_orthogonal_invariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(40, 6))
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert tr.cka_linear(x, x @ q) == pytest.approx(1.0, abs=1e-9)


def test_cka_scale_invariance():
    x = np.random.default_rng(3).normal(size=(25, 5))
    assert tr.cka_linear(x, 2.0 * x) == pytest.approx(1.0, abs=1e-12)


def test_cka_zero_variance_rejected():
    x = np.ones((10, 3))
    with pytest.raises(ValueError, match="zero-variance"):
        tr.cka_linear(x, x)


def test_cka_bounded():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(30, 4)), rng.normal(size=(30, 7))
    value = tr.cka_linear(a, b)
    assert 0.0 <= value <= 1.0


# -- weight curve -----------------------------------------------------------------

def test_weight_curve_flat_for_zero_latent_path():
    from tsbridge import reweight

    wnet = reweight.WeightingNet(np.random.default_rng(0), hidden=4)
    wnet.params["wnet/latent_w"].data[:] = 0.0
    wnet.params["wnet/latent_b"].data[:] = 0.0
    rows = tr.dump_weight_curve(wnet, [0.0, 0.5, 1.0])
    for _, omega_o, omega_i in rows:
        assert omega_o == 0.5 and omega_i == 0.5


def test_weight_curve_anti_coupling_every_adjacent_pair():
    from tsbridge import reweight

    wnet = reweight.WeightingNet(np.random.default_rng(7), hidden=12)
    rows = tr.dump_weight_curve(wnet, np.linspace(0, 3, 40))
    for (l0, o0, i0), (l1, o1, i1) in zip(rows, rows[1:]):
        assert l1 > l0
        assert (o1 - o0) * (i1 - i0) <= 1e-18


def test_weight_curve_needs_grid(tmp_path):
    from tsbridge import reweight

    wnet = reweight.WeightingNet(np.random.default_rng(0), hidden=4)
    with pytest.raises(ValueError, match="grid"):
        tr.dump_weight_curve(wnet, [1.0])
    rows = tr.dump_weight_curve(wnet, [0.0, 1.0])
    path = tmp_path / "curve.csv"
    tr.write_weight_curve_csv(rows, path)
    header, *lines = path.read_text().strip().split("\n")
    assert header == "loss,omega_o,omega_i"
    assert len(lines) == 2


# -- training loop -----------------------------------------------------------------

def test_zero_iterations_returns_initialization(synth_dataset):
    cfg = tiny_config(iterations=0)
    res_a = tr.train(cfg, synth_dataset)
    res_b = tr.train(cfg, synth_dataset)
    for name in res_a.model.params:
        assert np.array_equal(res_a.model.params[name].data, res_b.model.params[name].data)
    assert math.isfinite(res_a.report.test_mse)


def test_bit_identical_reports_for_fixed_seed(synth_dataset):
    cfg = tiny_config(iterations=5)
    a = tr.train(cfg, synth_dataset)
    b = tr.train(cfg, synth_dataset)
    assert a.report.test_mse == b.report.test_mse
    assert a.report.test_mae == b.report.test_mae
    for ea, eb in zip(a.report.epochs, b.report.epochs):
        assert ea == eb
    for name in a.model.params:
        assert np.array_equal(a.model.params[name].data, b.model.params[name].data)


def test_backbone_only_is_plain_mean_loss_descent(synth_dataset):
    # hand-rolled gradient descent on mean(l_O) with the same seeds and
    # batches must land on bit-identical parameters
    from tsbridge import autodiff as ad
    from tsbridge.backbone import BackboneConfig, build_backbone

    cfg = tiny_config(variant="backbone_only", iterations=5)
    res = tr.train(cfg, synth_dataset)

    split = dio.SplitConfig(cfg.train_fraction, cfg.val_fraction, cfg.test_fraction)
    train_end, _ = split.boundaries(synth_dataset.length)
    stats = dio.NormStats.fit(synth_dataset.values[:train_end])
    windows = dio.make_windows(stats.apply(synth_dataset.values[:train_end]), cfg.input_len, cfg.horizon)
    bb_cfg = BackboneConfig(
        kind=cfg.backbone, task=cfg.task, input_len=cfg.input_len, horizon=cfg.horizon,
        channels=1, d_model=cfg.d_model, layers=cfg.layers, k_periods=cfg.k_periods,
    )
    model = build_backbone(bb_cfg, np.random.default_rng([cfg.seed, 1]))
    names = sorted(model.params)
    leaves = [model.params[k] for k in names]
    for it in range(cfg.iterations):
        idx = dio.sample_batch_indices(len(windows), cfg.batch_size, cfg.seed, it)
        batch = dio.gather_batch(windows, idx)
        out = model.forward(batch.x)
        d = ad.sub(out.prediction, ad.Tensor(batch.y))
        loss = ad.tmean(ad.mul(d, d))
        for tensor, grad in zip(leaves, ad.backward(loss, leaves)):
            tensor.data -= cfg.model_lr * grad.data
    for name in names:
        assert np.array_equal(model.params[name].data, res.model.params[name].data)


def test_mean_weights_stay_in_unit_interval(synth_dataset):
    res = tr.train(tiny_config(variant="full", iterations=6), synth_dataset)
    for epoch in res.report.epochs:
        assert 0.0 < epoch.mean_omega_o < 1.0
        assert 0.0 < epoch.mean_omega_i < 1.0


def test_hash_guards_across_iterations(synth_dataset):
    cfg = tiny_config(variant="full", iterations=6, debug_hash_checks=True)
    res = tr.train(cfg, synth_dataset)  # raises on any violation
    assert res.report.status == "ok"


def test_missing_embedding_key_lists_key(synth_dataset):
    table = tb.EmbeddingTable(dim=16)
    table.add(tb.fnv1a_64("unrelated"), np.zeros(16))
    with pytest.raises(tb.MissingKeyError, match="[0-9a-f]{16}"):
        tr.train(tiny_config(variant="full"), synth_dataset, embeddings=table)


def test_divergence_aborts_with_report(synth_dataset):
    cfg = tiny_config(variant="backbone_only", model_lr=50.0, iterations=40)
    with pytest.raises(tr.TrainingDiverged) as exc:
        tr.train(cfg, synth_dataset)
    assert "diverged" in exc.value.report.status


def test_imputation_training_and_metrics(synth_dataset):
    cfg = tiny_config(task="impute", variant="full", iterations=4, mask_ratio=0.25)
    res = tr.train(cfg, synth_dataset)
    assert math.isfinite(res.report.test_mse)


def test_static_variant_runs(synth_dataset):
    res = tr.train(tiny_config(variant="static", static_lambda=0.3), synth_dataset)
    assert math.isfinite(res.report.test_mse)


def test_linear_backbone_variant(synth_dataset):
    res = tr.train(tiny_config(backbone="linear", variant="full"), synth_dataset)
    assert math.isfinite(res.report.test_mse)


def test_separate_test_dataset(synth_dataset):
    test_ds = dio.synth_generate(
        length=400,
        weights=dio.SYNTH_TEST_WEIGHTS,
        freqs=dio.SYNTH_TEST_FREQS,
        phases=dio.SYNTH_TEST_PHASES,
        noise=0.0,
    )
    res = tr.train(tiny_config(variant="backbone_only"), synth_dataset, test_dataset=test_ds)
    assert math.isfinite(res.report.test_mse)


def test_report_round_trips_as_json(synth_dataset):
    import json

    res = tr.train(tiny_config(variant="full", iterations=3), synth_dataset)
    payload = json.loads(res.report.to_json())
    assert payload["seed"] == 1
    assert payload["config"]["variant"] == "full"
    assert len(payload["epochs"]) == len(res.report.epochs)


def test_invalid_variant_rejected():
    with pytest.raises(ValueError, match="variant"):
        tiny_config(variant="bogus")


def test_no_reweight_gradient_is_mean_loss_minus_uniform_mi():
    # theta-gradient of the no_reweight objective == analytic gradient of
    # mean(l_O) - I_uniform on a tiny pipeline, by finite differences
    from tsbridge import autodiff as ad
    from tsbridge import mi as mi_mod
    from tsbridge.backbone import BackboneConfig, LinearBackbone

    rng = np.random.default_rng(11)
    cfg = BackboneConfig(kind="linear", input_len=10, horizon=4, channels=1, d_model=6)
    model = LinearBackbone(cfg, np.random.default_rng(12))
    disc = mi_mod.Discriminator(6, 8, np.random.default_rng(13))
    x = rng.normal(size=(4, 10, 1))
    y = rng.normal(size=(4, 4, 1))
    h_l = rng.normal(size=(4, 8))
    names = sorted(model.params)

    def objective(leaves):
        out = model.forward(x, params=dict(zip(names, leaves)))
        d = ad.sub(out.prediction, ad.Tensor(y))
        l_o = ad.tmean(ad.mul(d, d), axis=(1, 2))
        return ad.sub(ad.tmean(l_o), mi_mod.jsd_mi(disc, out.h_m, ad.Tensor(h_l)))

    leaves = [model.params[k] for k in names]
    assert ad.finite_difference_check(objective, leaves, step=1e-4) < 1e-4


def test_embedding_provider_channel_mean_and_normalization():
    from tsbridge import textbridge as tb
    from tsbridge.trainer import _EmbeddingProvider

    rng = np.random.default_rng(14)
    window = rng.normal(size=(12, 2))
    windows = [(window, window)]
    template = tb.TemplateConfig(task_description="T")
    provider = _EmbeddingProvider(windows, template, None, dim_l=32, seed=5, normalize=True)
    v = provider.vector(0)
    per_channel = [
        tb.fallback_embed(tb.render_description(window[:, c], template), 32, 5)
        for c in range(2)
    ]
    expected = np.mean(per_channel, axis=0)
    expected /= np.linalg.norm(expected)
    np.testing.assert_allclose(v, expected, atol=1e-12)
    assert provider.vector(0) is v  # cached


def test_non_finite_activation_names_layer():
    from tsbridge.backbone import BackboneConfig, PeriodMixingBackbone

    cfg = BackboneConfig(kind="period", input_len=16, horizon=4, d_model=4, layers=2, k_periods=1)
    model = PeriodMixingBackbone(cfg, np.random.default_rng(0))
    model.params["layer0/intra"].data[:] = 1e308
    with pytest.raises(FloatingPointError, match="layer 0"):
        model.forward(np.random.default_rng(1).normal(size=(2, 16, 1)))
