"""Dual-weight network, its probability distribution, the composite loss,
and the bi-level (virtual step + outer) update of the weighting network.

The network maps each sample's prediction loss to a latent scalar z and
emits sigmoid(m_o * z) and sigmoid(m_i * z) with m_o > 0 > m_i enforced by
exponential reparameterization, so the two weights are anti-monotonically
coupled for every parameter setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mi import WeightDistribution


@dataclass
class DualWeights:
    omega_o: Tensor  # N, prediction-loss weights in (0, 1)
    omega_i: Tensor  # N, MI-loss weights in (0, 1)


class WeightingNet:
    """Two-layer MLP (1 -> hidden -> 1) plus the two 1x1 sign-constrained
    head scales."""

    def __init__(self, rng: np.random.Generator, hidden: int = 100):
        self.hidden = hidden
        b1 = 1.0  # fan-in of the loss input is 1
        bh = 1.0 / math.sqrt(hidden)
        self.params: dict[str, Tensor] = {
            "wnet/hidden_w": Tensor(rng.uniform(-b1, b1, (1, hidden)), requires_grad=True),
            "wnet/hidden_b": Tensor(rng.uniform(-b1, b1, hidden), requires_grad=True),
            "wnet/latent_w": Tensor(rng.uniform(-bh, bh, (hidden, 1)), requires_grad=True),
            "wnet/latent_b": Tensor(rng.uniform(-bh, bh, 1), requires_grad=True),
            # heads start at m_o = +1, m_i = -1
            "wnet/a_o": Tensor(np.zeros(1), requires_grad=True),
            "wnet/a_i": Tensor(np.zeros(1), requires_grad=True),
        }

    def latent(self, losses: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        p = params if params is not None else self.params
        if not np.all(np.isfinite(losses.data)):
            raise FloatingPointError("weighting net received non-finite losses")
        n = losses.shape[0]
        col = ad.reshape(losses, (n, 1))
        hidden = ad.relu(ad.add(ad.matmul(col, p["wnet/hidden_w"]), p["wnet/hidden_b"]))
        return ad.add(ad.matmul(hidden, p["wnet/latent_w"]), p["wnet/latent_b"])

    def forward(self, losses: Tensor, params: dict[str, Tensor] | None = None) -> DualWeights:
        """Dual weights for a vector of per-sample losses.

        The weights stay graph-attached to the network parameters (and to
        ``losses`` if it is graph-attached; callers following the
        meta-weight-net convention pass it detached).
        """
        p = params if params is not None else self.params
        n = losses.shape[0]
        z = self.latent(losses, p)
        m_o = ad.exp(p["wnet/a_o"])
        m_i = ad.neg(ad.exp(p["wnet/a_i"]))
        omega_o = ad.reshape(ad.sigmoid(ad.mul(z, m_o)), (n,))
        omega_i = ad.reshape(ad.sigmoid(ad.mul(z, m_i)), (n,))
        return DualWeights(omega_o=omega_o, omega_i=omega_i)


def weights_to_distribution(omega_i: Tensor) -> WeightDistribution:
    """Normalize MI weights into p_I and build the pairwise off-diagonal
    distribution p_hat[i, j] = p_i p_j / sum_{k != l} p_k p_l."""
    n = omega_i.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples for a pair distribution")
    p = ad.div(omega_i, ad.tsum(omega_i))
    outer = ad.matmul(ad.reshape(p, (n, 1)), ad.reshape(p, (1, n)))
    off = ad.mul(outer, Tensor(1.0 - np.eye(n)))
    p_hat = ad.div(off, ad.tsum(off))
    return WeightDistribution(p_i=p, p_hat=p_hat)


def overall_loss(losses: Tensor, weights: DualWeights, mi: Tensor) -> Tensor:
    """Composite objective: weighted prediction loss plus the mean MI
    weight times the negated (weighted) MI bound."""
    pred_term = ad.tmean(ad.mul(weights.omega_o, losses))
    return ad.add(pred_term, ad.mul(ad.tmean(weights.omega_i), ad.neg(mi)))


def static_weight_loss(losses: Tensor, mi: Tensor, lam: float) -> Tensor:
    """Fixed interpolation: (1 - lam) * mean prediction loss + lam * (-MI)."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"static weight ratio must lie in [0, 1], got {lam}")
    return ad.add(ad.mul(ad.tmean(losses), 1.0 - lam), ad.mul(ad.neg(mi), lam))


def virtual_step(
    params: dict[str, Tensor], loss: Tensor, lr: float
) -> dict[str, Tensor]:
    """One differentiable gradient-descent step: returns virtual parameters
    that retain their graph dependence on everything the loss touched
    (notably the weighting network); the real parameters are unchanged."""
    if lr <= 0:
        raise ValueError("virtual step learning rate must be positive")
    names = sorted(params)
    grads = ad.backward(loss, [params[k] for k in names], create_graph=True)
    virtual: dict[str, Tensor] = {}
    for name, grad in zip(names, grads):
        if not np.all(np.isfinite(grad.data)):
            raise FloatingPointError(f"non-finite virtual-step gradient for {name}")
        virtual[name] = ad.sub(params[name], ad.mul(grad, lr))
    return virtual


def outer_update(wnet: WeightingNet, val_loss: Tensor, lr: float) -> None:
    """Descend the validation loss through the virtual step, updating only
    the weighting network in place."""
    names = sorted(wnet.params)
    grads = ad.backward(val_loss, [wnet.params[k] for k in names])
    for name, grad in zip(names, grads):
        if not np.all(np.isfinite(grad.data)):
            raise FloatingPointError(f"non-finite outer gradient for {name}")
        wnet.params[name].data -= lr * grad.data
