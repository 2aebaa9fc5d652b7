"""Structure-preserving and feature-consistency losses.

L_Haar compares the selected high-frequency wavelet bands of the enhanced
and the input image under L1 (DC-blind by construction). L_FC compares the
Gram matrices of the re-encoded output vector and the conditioning vector
under the Frobenius norm; the same functional doubles as the inter/intra
guidance-variance regularizers.
"""

from dataclasses import dataclass

import torch

from .adversary import loss_gan_g
from .wavelet import DirectionMask, hf_extract


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 5.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def gram(v):
    """Outer-product Gram of a vector (or batch of vectors), scaled by 1/d."""
    if v.dim() == 1:
        v = v[None]
    d = v.shape[-1]
    return v.unsqueeze(-1) @ v.unsqueeze(-2) / d


def loss_haar(xhat, y, mask=DirectionMask(True, True, True)):
    """Mean absolute difference of the selected high-frequency Haar bands."""
    if xhat.shape != y.shape:
        raise ValueError("inputs must share a shape")
    return (hf_extract(xhat, mask) - hf_extract(y, mask)).abs().mean()


def _gram_distance(a, b):
    if a.shape != b.shape:
        raise ValueError("vectors must share a shape")
    diff = gram(a) - gram(b)
    # Frobenius norm per sample, averaged over the batch
    return diff.flatten(1).norm(dim=1).mean()


def loss_fc(v_xhat, v_c):
    """Frobenius distance between the Gram matrices of the two vectors."""
    return _gram_distance(v_xhat, v_c)


def loss_intervar(v_z1, v_z2):
    """Guidance-variance penalty across different HQ exemplars."""
    return _gram_distance(v_z1, v_z2)


def loss_intravar(v_z_view1, v_z_view2):
    """Guidance-variance penalty across augmented views of one exemplar."""
    return _gram_distance(v_z_view1, v_z_view2)


def loss_ca(xhat, y, v_xhat, v_c, weights=LossWeights(), mask=DirectionMask(True, True, True)):
    """Content-aware loss: L_Haar + lambda1 * L_FC."""
    return loss_haar(xhat, y, mask) + weights.lambda1 * loss_fc(v_xhat, v_c)


def loss_enh(xhat, y, v_xhat, v_c, fake_logits, weights=LossWeights(), mask=DirectionMask(True, True, True)):
    """Full enhancement objective: L_CA + lambda2 * generator GAN loss."""
    return loss_ca(xhat, y, v_xhat, v_c, weights, mask) + weights.lambda2 * loss_gan_g(fake_logits)
