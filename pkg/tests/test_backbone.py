import numpy as np
import pytest

from tsbridge import autodiff as ad
from tsbridge import backbone as bb
from tsbridge import checkpoint as ckpt


# -- period detection -----------------------------------------------------

def dft_amplitudes(series: np.ndarray) -> np.ndarray:
    # independent oracle: textbook DFT magnitude per frequency bin
    L = series.size
    bins = L // 2 + 1
    out = np.zeros(bins)
    for f in range(bins):
        re = np.sum(series * np.cos(-2 * np.pi * f * np.arange(L) / L))
        im = np.sum(series * np.sin(-2 * np.pi * f * np.arange(L) / L))
        out[f] = np.hypot(re, im)
    return out


def test_sine_period_24():
    t = np.arange(96)
    window = np.sin(2 * np.pi * t / 24)[:, None]
    ps = bb.detect_periods(window, k=1)
    assert ps.periods == [24]
    oracle = dft_amplitudes(window[:, 0])
    oracle[0] = 0
    assert int(np.argmax(oracle)) == 4  # dominant frequency index, 96/4 = 24


def test_constant_series_degenerate():
    ps = bb.detect_periods(np.full((96, 2), 1.5), k=3)
    assert ps.periods == [96]
    assert ps.amplitudes == [0.0]


def test_two_tone_ordering():
    t = np.arange(96)
    window = (2.0 * np.sin(2 * np.pi * t / 24) + 1.0 * np.sin(2 * np.pi * t / 32))[:, None]
    ps = bb.detect_periods(window, k=2)
    assert ps.periods == [24, 32]
    assert ps.amplitudes[0] > ps.amplitudes[1]
    oracle = dft_amplitudes(window[:, 0])
    oracle[0] = 0
    top2 = np.argsort(-oracle)[:2]
    assert [round(96 / i) for i in top2] == [24, 32]


def test_detection_invariant_to_dc_offset():
    t = np.arange(64)
    base = np.sin(2 * np.pi * t / 16)[:, None]
    assert bb.detect_periods(base, 2).periods == bb.detect_periods(base + 100.0, 2).periods


def test_detection_needs_four_points():
    with pytest.raises(ValueError, match="L >= 4"):
        bb.detect_periods(np.zeros((3, 1)), k=1)


def test_softmax_aggregation_weights_sum_to_one():
    w = bb._softmax_const([3.0, 1.0, 0.5])
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w[0] > w[1] > w[2]


# -- period-mixing backbone --------------------------------------------------

def make_period_model(**kw):
    cfg = bb.BackboneConfig(kind="period", **kw)
    return bb.PeriodMixingBackbone(cfg, np.random.default_rng(0))


def test_forward_output_shapes():
    model = make_period_model(input_len=96, horizon=336, channels=1, d_model=64)
    x = np.random.default_rng(1).normal(size=(8, 96, 1))
    out = model.forward(x)
    assert out.prediction.shape == (8, 336, 1)
    assert out.h_m.shape == (8, 64)
    assert out.h_first.shape == (8, 64)
    assert out.h_last is out.h_m


def test_zero_head_gives_bias_prediction():
    model = make_period_model(input_len=16, horizon=4, d_model=8, layers=1, k_periods=2)
    model.params["head/w"].data[:] = 0.0
    x = np.random.default_rng(2).normal(size=(3, 16, 1))
    out = model.forward(x)
    expected = np.broadcast_to(model.params["head/b"].data.reshape(4, 1), (3, 4, 1))
    np.testing.assert_allclose(out.prediction.data, expected, atol=1e-15)


def test_forward_deterministic():
    model = make_period_model(input_len=32, horizon=8, d_model=8, layers=2, k_periods=2)
    x = np.random.default_rng(3).normal(size=(4, 32, 1))
    a = model.forward(x).prediction.data
    b = model.forward(x).prediction.data
    assert np.array_equal(a, b)


def test_imputation_task_output_length():
    cfg = bb.BackboneConfig(kind="period", task="impute", input_len=24, horizon=999, d_model=8, layers=1)
    model = bb.PeriodMixingBackbone(cfg, np.random.default_rng(0))
    x = np.random.default_rng(4).normal(size=(2, 24, 1))
    assert model.forward(x).prediction.shape == (2, 24, 1)


def test_mse_gradient_matches_finite_differences_tiny():
    model = make_period_model(input_len=16, horizon=4, d_model=8, layers=1, k_periods=2)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 16, 1))
    y = rng.normal(size=(2, 4, 1))
    names = sorted(model.params)
    leaves = [model.params[k] for k in names]
    periods = bb.detect_periods(x.mean(axis=0), 2)

    def loss(ls):
        override = dict(zip(names, ls))
        out = model.forward(x, params=override, periods=periods)
        d = ad.sub(out.prediction, ad.Tensor(y))
        return ad.tmean(ad.mul(d, d))

    assert ad.finite_difference_check(loss, leaves, step=1e-4) < 1e-4


def test_wrong_input_shape_raises():
    model = make_period_model(input_len=16, horizon=4, d_model=8, layers=1)
    with pytest.raises(ad.ShapeError, match="backbone_forward"):
        model.forward(np.zeros((2, 20, 1)))


# -- linear backbone ------------------------------------------------------------

def make_linear_model(**kw):
    cfg = bb.BackboneConfig(kind="linear", **kw)
    return bb.LinearBackbone(cfg, np.random.default_rng(0))


def test_linear_identity_map_reproduces_input():
    model = make_linear_model(input_len=12, horizon=12, channels=2, d_model=8)
    model.params["map/w"].data[:] = np.eye(12)
    model.params["map/b"].data[:] = 0.0
    x = np.random.default_rng(6).normal(size=(3, 12, 2))
    np.testing.assert_allclose(model.forward(x).prediction.data, x, atol=1e-15)


def test_linear_shapes():
    model = make_linear_model(input_len=10, horizon=5, channels=3, d_model=8)
    out = model.forward(np.zeros((4, 10, 3)))
    assert out.prediction.shape == (4, 5, 3)
    assert out.h_m.shape == (4, 8)
    assert out.h_first is out.h_m


def test_linear_gradient_check():
    model = make_linear_model(input_len=8, horizon=3, channels=2, d_model=4)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 8, 2))
    y = rng.normal(size=(3, 3, 2))
    names = sorted(model.params)
    leaves = [model.params[k] for k in names]

    def loss(ls):
        out = model.forward(x, params=dict(zip(names, ls)))
        d = ad.sub(out.prediction, ad.Tensor(y))
        return ad.add(ad.tmean(ad.mul(d, d)), ad.tmean(ad.mul(out.h_m, out.h_m)))

    assert ad.finite_difference_check(loss, leaves, step=1e-4) < 1e-5


# -- checkpoint format ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = make_period_model(input_len=16, horizon=4, d_model=8, layers=2)
    path = tmp_path / "model.ltsp"
    ckpt.save_params(model.params, path)
    loaded = ckpt.load_params(path)
    assert set(loaded) == set(model.params)
    for name in model.params:
        assert np.array_equal(loaded[name].data, model.params[name].data)
        assert loaded[name].requires_grad


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.ltsp"
    p.write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(ckpt.CheckpointError, match="bad magic"):
        ckpt.load_params(p)


def test_checkpoint_truncation(tmp_path):
    model = make_linear_model(input_len=8, horizon=3, d_model=4)
    p = tmp_path / "m.ltsp"
    ckpt.save_params(model.params, p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_params(p)


def test_param_count_reported():
    model = make_period_model(input_len=16, horizon=4, d_model=8, layers=1, k_periods=2)
    # embed 1x8 + 8, intra 16x16, cross 8x8, head 8x4 + 4
    assert model.param_count() == 8 + 8 + 256 + 64 + 32 + 4
