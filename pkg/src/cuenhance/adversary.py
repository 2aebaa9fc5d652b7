"""Patch discriminator and the adversarial loss pair.

The discriminator scores overlapping patches (one logit each) rather than
whole images. Losses are binary cross-entropy on logits, written with
softplus for numerical stability; the generator uses the non-saturating
form. Mean reduction over patches and batch.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import SpatialNorm


class PatchDiscriminator(nn.Module):
    """3 stride-2 blocks + a stride-1 head; LReLU 0.2; no norm in block 1."""

    def __init__(self, base_width=16):
        super().__init__()
        w = base_width
        self.block1 = nn.Conv2d(1, w, 4, stride=2, padding=1)
        self.block2 = nn.Conv2d(w, 2 * w, 4, stride=2, padding=1)
        self.norm2 = SpatialNorm(2 * w)
        self.block3 = nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1)
        self.norm3 = SpatialNorm(4 * w)
        self.head = nn.Conv2d(4 * w, 1, 4, stride=1, padding=1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError("expected (B, 1, H, W) input")
        if x.shape[2] < 16 or x.shape[3] < 16:
            raise ValueError("input too small for the patch field")
        h = F.leaky_relu(self.block1(x), 0.2)
        h = F.leaky_relu(self.norm2(self.block2(h)), 0.2)
        h = F.leaky_relu(self.norm3(self.block3(h)), 0.2)
        return self.head(h)


def loss_gan_d(real_logits, fake_logits):
    """BCE pushing real patches to 1 and fake patches to 0 (sum of the two
    mean terms, so all-zero logits score 2 ln 2)."""
    real_term = F.softplus(-real_logits).mean()
    fake_term = F.softplus(fake_logits).mean()
    return real_term + fake_term


def loss_gan_g(fake_logits):
    """Non-saturating generator loss: -log sigmoid(fake)."""
    return F.softplus(-fake_logits).mean()
