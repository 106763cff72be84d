"""Finite-difference verification suites: every primitive, the composed
training objective on a tiny pipeline, and the bi-level outer gradient.

The CLI exposes these as `tsbridge gradcheck`; the acceptance tests call
them directly. All instances are seeded and small enough to run in
seconds.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import mi as mi_mod
from . import reweight as rw
from .autodiff import Tensor
from .backbone import BackboneConfig, LinearBackbone


def primitive_cases() -> dict[str, callable]:
    """Scalar objectives exercising each primitive with broadcast and
    reuse; each takes two length-20 leaf vectors."""
    return {
        "add": lambda ls: ad.tsum(ad.add(ls[0], ls[1])),
        "sub": lambda ls: ad.tsum(ad.mul(ad.sub(ls[0], ls[1]), ad.sub(ls[0], ls[1]))),
        "mul": lambda ls: ad.tsum(ad.mul(ls[0], ls[1])),
        "div": lambda ls: ad.tsum(ad.div(ls[0], ad.add(ad.mul(ls[1], ls[1]), 1.0))),
        "neg": lambda ls: ad.tsum(ad.neg(ad.mul(ls[0], ls[0]))),
        "matmul": lambda ls: ad.tsum(
            ad.mul(
                ad.matmul(ad.reshape(ls[0], (4, 5)), ad.reshape(ls[1], (5, 4))),
                ad.matmul(ad.reshape(ls[0], (4, 5)), ad.reshape(ls[1], (5, 4))),
            )
        ),
        "sum": lambda ls: ad.tsum(ad.mul(ad.tsum(ls[0], axis=0), ad.tsum(ls[1], axis=0))),
        "mean": lambda ls: ad.tmean(ad.mul(ls[0], ls[0])),
        "sigmoid": lambda ls: ad.tsum(ad.sigmoid(ad.mul(ls[0], ls[1]))),
        "softplus": lambda ls: ad.tsum(ad.softplus(ad.mul(ls[0], ls[1]))),
        "tanh": lambda ls: ad.tsum(ad.tanh(ls[0])),
        "relu": lambda ls: ad.tsum(ad.relu(ad.mul(ls[0], ls[1]))),
        "exp": lambda ls: ad.tsum(ad.exp(ad.mul(ls[0], 0.3))),
        "log": lambda ls: ad.tsum(ad.log(ad.add(ad.mul(ls[0], ls[0]), 0.5))),
        "broadcast": lambda ls: ad.tsum(
            ad.mul(ad.broadcast_to(ad.reshape(ls[0], (20, 1)), (20, 4)), ad.exp(ad.reshape(ls[1], (20, 1))))
        ),
        "reshape": lambda ls: ad.tsum(ad.mul(ad.reshape(ls[0], (2, 10)), ad.reshape(ls[1], (2, 10)))),
        "transpose": lambda ls: ad.tsum(
            ad.matmul(ad.transpose(ad.reshape(ls[0], (4, 5))), ad.reshape(ls[1], (4, 5)))
        ),
        "concat": lambda ls: ad.tsum(
            ad.mul(ad.concat([ls[0], ls[1]], axis=0), ad.concat([ls[1], ls[0]], axis=0))
        ),
        "gather": lambda ls: ad.tsum(
            ad.mul(ad.gather(ls[0], [3, 1, 3, 0, 19]), ad.gather(ls[1], [0, 2, 2, 19, 5]))
        ),
        "softmax": lambda ls: ad.tsum(
            ad.mul(ad.softmax(ad.reshape(ls[0], (4, 5)), axis=1), ad.reshape(ls[1], (4, 5)))
        ),
        "slice": lambda ls: ad.tsum(ad.mul(ad.slice_axis(ls[0], 0, 3, 17), ad.slice_axis(ls[1], 0, 0, 14))),
        "pad": lambda ls: ad.tsum(ad.mul(ad.pad_axis(ls[0], 0, 26), ad.pad_axis(ls[1], 0, 26))),
        "axis_dot": lambda ls: ad.tsum(
            ad.exp(ad.axis_dot(ad.reshape(ls[0], (2, 5, 2)), ad.mul(ad.reshape(ad.slice_axis(ls[1], 0, 0, 10), (5, 2)), 0.5), 1))
        ),
    }


def run_primitive_checks(step: float = 1e-4, seed: int = 0) -> dict[str, float]:
    results = {}
    for name, fn in primitive_cases().items():
        rng = np.random.default_rng([seed, abs(hash(name)) % 2**31])
        a = Tensor(rng.normal(size=20) * 0.8, requires_grad=True)
        b = Tensor(rng.normal(size=20) * 0.8, requires_grad=True)
        results[name] = ad.finite_difference_check(fn, [a, b], step=step)
    return results


def build_tiny_pipeline(seed: int = 0):
    """Linear backbone (d_model=8), discriminator into a 16-dim embedding
    space, weighting net, and a 4-sample batch; returns the composed
    objective over every trainable leaf."""
    rng = np.random.default_rng(seed)
    cfg = BackboneConfig(kind="linear", input_len=12, horizon=6, channels=1, d_model=8)
    model = LinearBackbone(cfg, np.random.default_rng([seed, 1]))
    disc = mi_mod.Discriminator(8, 16, np.random.default_rng([seed, 2]))
    wnet = rw.WeightingNet(np.random.default_rng([seed, 3]), hidden=5)
    x = rng.normal(size=(4, 12, 1))
    y = rng.normal(size=(4, 6, 1))
    h_l = rng.normal(size=(4, 16))
    h_l /= np.linalg.norm(h_l, axis=1, keepdims=True)

    params: dict[str, Tensor] = {}
    params.update(model.params)
    params.update(disc.params)
    params.update(wnet.params)
    names = sorted(params)

    # the weighting net consumes the per-sample loss as data (stop-gradient
    # convention), so the checkable objective fixes that input up front
    with ad.no_grad():
        base = model.forward(x)
        d0 = ad.sub(base.prediction, Tensor(y))
        l_o_input = Tensor(ad.tmean(ad.mul(d0, d0), axis=(1, 2)).data.copy())

    def objective(leaves):
        override = dict(zip(names, leaves))
        out = model.forward(x, params={k: override[k] for k in model.params})
        d = ad.sub(out.prediction, Tensor(y))
        l_o = ad.tmean(ad.mul(d, d), axis=(1, 2))
        weights = wnet.forward(l_o_input, {k: override[k] for k in wnet.params})
        dist = rw.weights_to_distribution(weights.omega_i)
        bound = mi_mod.weighted_jsd_mi(
            disc, out.h_m, Tensor(h_l), dist, {k: override[k] for k in disc.params}
        )
        return rw.overall_loss(l_o, weights, bound)

    return objective, [params[k] for k in names], names


def run_pipeline_check(step: float = 1e-4, seed: int = 0) -> float:
    objective, leaves, _ = build_tiny_pipeline(seed)
    return ad.finite_difference_check(objective, leaves, step=step)


def build_bilevel_toy(seed: int = 0, eta1: float = 0.05):
    """<= 30-parameter instance of the outer objective: validation loss of
    the virtually-updated linear model as a function of the weighting net."""
    rng = np.random.default_rng(seed)
    wnet = rw.WeightingNet(np.random.default_rng([seed, 1]), hidden=3)
    theta = {"w": Tensor(rng.normal(size=(3, 1)), requires_grad=True)}
    x_tr, y_tr = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))
    x_va, y_va = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))
    names = sorted(wnet.params)

    def objective(leaves):
        override = dict(zip(names, leaves))
        pred = ad.matmul(Tensor(x_tr), theta["w"])
        diff = ad.sub(pred, Tensor(y_tr))
        l_o = ad.tmean(ad.mul(diff, diff), axis=1)
        weights = wnet.forward(l_o.detach(), override)
        inner = ad.tmean(ad.mul(weights.omega_o, l_o))
        virtual = rw.virtual_step(theta, inner, lr=eta1)
        vdiff = ad.sub(ad.matmul(Tensor(x_va), virtual["w"]), Tensor(y_va))
        return ad.tmean(ad.mul(vdiff, vdiff))

    return objective, [wnet.params[k] for k in names], wnet


def run_bilevel_check(step: float = 1e-5, seed: int = 0) -> float:
    objective, leaves, _ = build_bilevel_toy(seed)
    return ad.finite_difference_check(objective, leaves, step=step)


def run_all(seed: int = 0) -> dict:
    """Full gradient-integrity suite; `max_error` aggregates everything."""
    primitives = run_primitive_checks(seed=seed)
    pipeline = run_pipeline_check(seed=seed)
    bilevel = run_bilevel_check(seed=seed)
    worst = max(max(primitives.values()), pipeline, bilevel)
    return {
        "primitives": primitives,
        "pipeline": pipeline,
        "bilevel": bilevel,
        "max_error": worst,
        "tolerance": 1e-4,
        "pass": bool(worst < 1e-4),
    }
