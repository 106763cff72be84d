"""Time-series training framework that aligns a periodic backbone with
text-derived embeddings through a trainable mutual-information bound and
balances the two losses per sample via a bi-level-optimized weighting
network."""

from . import autodiff, backbone, checkpoint, data, gradcheck, mi, reweight, textbridge, trainer

__all__ = [
    "autodiff",
    "backbone",
    "checkpoint",
    "data",
    "gradcheck",
    "mi",
    "reweight",
    "textbridge",
    "trainer",
]

__version__ = "0.1.0"
