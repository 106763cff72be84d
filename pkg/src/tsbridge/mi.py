"""Discriminator and mutual-information lower bounds.

The Jensen-Shannon bound scores aligned (positive) pairs against all
ordered misaligned (negative) pairs in the batch; the weighted form takes
a per-sample probability distribution instead of uniform expectation. A
MINE (Donsker-Varadhan) variant is provided for estimator ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class WeightDistribution:
    """Per-sample probabilities and the induced off-diagonal pair
    distribution used by the weighted MI expectation."""

    p_i: Tensor  # N, positive, sums to 1
    p_hat: Tensor  # N x N, zero diagonal, off-diagonal sums to 1

    def validate(self) -> None:
        p = self.p_i.data
        n = p.size
        if np.any(p <= 0.0):
            raise ValueError("p_I entries must all be positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"p_I sums to {p.sum()}, expected 1")
        ph = self.p_hat.data
        if ph.shape != (n, n):
            raise ValueError(f"p_hat shape {ph.shape} does not match N={n}")
        if np.any(np.abs(np.diag(ph)) > 0.0):
            raise ValueError("p_hat diagonal must be zero")
        if abs(ph.sum() - 1.0) > 1e-9:
            raise ValueError(f"p_hat off-diagonal sums to {ph.sum()}, expected 1")


def uniform_distribution(n: int) -> WeightDistribution:
    if n < 2:
        raise ValueError("need at least 2 samples")
    p = np.full(n, 1.0 / n)
    ph = np.full((n, n), 1.0 / (n * (n - 1)))
    np.fill_diagonal(ph, 0.0)
    return WeightDistribution(p_i=Tensor(p), p_hat=Tensor(ph))


def _mask_pair(n: int) -> tuple[Tensor, Tensor]:
    eye = np.eye(n)
    return Tensor(eye), Tensor(1.0 - eye)


class Discriminator:
    """Two dense maps projecting the backbone representation into the text
    embedding space; the pair score is the dot product with the embedding."""

    def __init__(self, d_model: int, dim_l: int, rng: np.random.Generator):
        self.d_model = d_model
        self.dim_l = dim_l
        bound1 = 1.0 / math.sqrt(d_model)
        self.params: dict[str, Tensor] = {
            "disc/map1_w": Tensor(rng.uniform(-bound1, bound1, (d_model, d_model)), requires_grad=True),
            "disc/map1_b": Tensor(rng.uniform(-bound1, bound1, d_model), requires_grad=True),
            "disc/map2_w": Tensor(rng.uniform(-bound1, bound1, (d_model, dim_l)), requires_grad=True),
            "disc/map2_b": Tensor(rng.uniform(-bound1, bound1, dim_l), requires_grad=True),
        }

    def project(self, h_m: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        p = params if params is not None else self.params
        if h_m.shape[-1] != self.d_model:
            raise ad.ShapeError("discriminator_project", h_m.shape, (self.d_model,))
        hidden = ad.relu(ad.add(ad.matmul(h_m, p["disc/map1_w"]), p["disc/map1_b"]))
        return ad.add(ad.matmul(hidden, p["disc/map2_w"]), p["disc/map2_b"])

    def score_matrix(self, h_m: Tensor, h_l: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        """S[i, j] = score of (h_m^i, h_l^j); positives on the diagonal."""
        if h_l.shape[-1] != self.dim_l:
            raise ad.ShapeError("discriminator_score", h_l.shape, (self.dim_l,))
        return ad.matmul(self.project(h_m, params), ad.transpose(h_l))

    def score(self, h_m: Tensor, h_l: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        """Scalar score of a single (representation, embedding) pair."""
        s = self.score_matrix(ad.reshape(h_m, (1, self.d_model)), ad.reshape(h_l, (1, self.dim_l)), params)
        return ad.reshape(s, ())


def jsd_mi(disc: Discriminator, h_m: Tensor, h_l: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
    """Jensen-Shannon MI lower bound over a batch (uniform expectation)."""
    n = h_m.shape[0]
    if n < 2:
        raise ValueError("MI estimation needs at least 2 samples for negatives")
    s = disc.score_matrix(h_m, h_l, params)
    diag, off = _mask_pair(n)
    pos = ad.mul(ad.tsum(ad.mul(diag, ad.softplus(ad.neg(s)))), 1.0 / n)
    neg = ad.mul(ad.tsum(ad.mul(off, ad.softplus(s))), 1.0 / (n * (n - 1)))
    return ad.sub(ad.neg(pos), neg)


def weighted_jsd_mi(
    disc: Discriminator,
    h_m: Tensor,
    h_l: Tensor,
    dist: WeightDistribution,
    params: dict[str, Tensor] | None = None,
) -> Tensor:
    """JSD bound with sample expectations taken under ``dist`` instead of
    uniform; differentiable through the scores and through ``dist``."""
    n = h_m.shape[0]
    if n < 2:
        raise ValueError("MI estimation needs at least 2 samples for negatives")
    dist.validate()
    s = disc.score_matrix(h_m, h_l, params)
    diag, _ = _mask_pair(n)
    p_col = ad.reshape(dist.p_i, (n, 1))
    pos = ad.tsum(ad.mul(ad.mul(diag, p_col), ad.softplus(ad.neg(s))))
    neg = ad.tsum(ad.mul(dist.p_hat, ad.softplus(s)))
    return ad.sub(ad.neg(pos), neg)


def mine_mi(disc: Discriminator, h_m: Tensor, h_l: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
    """Donsker-Varadhan bound: mean positive score minus log-mean-exp of
    negative scores, stabilized by max subtraction."""
    n = h_m.shape[0]
    if n < 2:
        raise ValueError("MI estimation needs at least 2 samples for negatives")
    s = disc.score_matrix(h_m, h_l, params)
    diag, _ = _mask_pair(n)
    pos = ad.div(ad.tsum(ad.mul(diag, s)), float(n))
    # push the diagonal far below the negatives so exp() zeroes it exactly
    s_off = ad.sub(s, ad.mul(diag, 1e9))
    shift = float(np.max(s_off.data))
    mean_exp = ad.div(ad.tsum(ad.exp(ad.sub(s_off, shift))), float(n * (n - 1)))
    return ad.sub(pos, ad.add(ad.log(mean_exp), shift))


def disc_lr(epoch: int, first: float = 1e-3, rest: float = 1e-4) -> float:
    """Discriminator learning-rate schedule: ``first`` during the first
    epoch, ``rest`` for every epoch after it."""
    return first if epoch == 0 else rest


def update_discriminator(
    disc: Discriminator,
    h_m: Tensor | np.ndarray,
    h_l: Tensor | np.ndarray,
    lr: float,
    estimator: str = "jsd",
) -> float:
    """One in-place ascent step on the unweighted bound w.r.t. the
    discriminator only; gradients never reach the backbone (inputs are
    detached here). Returns the bound's value before the step."""
    if lr <= 0:
        raise ValueError("discriminator learning rate must be positive")
    h_m = h_m.detach() if isinstance(h_m, Tensor) else Tensor(h_m)
    h_l = h_l.detach() if isinstance(h_l, Tensor) else Tensor(h_l)
    objective = {"jsd": jsd_mi, "mine": mine_mi}[estimator]
    value = objective(disc, h_m, h_l)
    names = sorted(disc.params)
    grads = ad.backward(value, [disc.params[k] for k in names])
    for name, grad in zip(names, grads):
        if not np.all(np.isfinite(grad.data)):
            raise FloatingPointError(f"non-finite discriminator gradient for {name}")
        disc.params[name].data += lr * grad.data
    return value.item()
