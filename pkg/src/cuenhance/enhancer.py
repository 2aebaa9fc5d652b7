"""Guided enhancement generator.

The LQ encoder produces a 4-level feature pyramid plus a compact structure
vector v_y. The decoder rebuilds the image coarse-to-fine; at every level a
conditioned residual block injects the joint vector v_c = [v_z, v_y], where
v_z is the cue vector of an HQ exemplar. Guidance modes swap v_z for a
learned free vector or drop it entirely.
"""

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DownStage
from .normalization import VinBlock

GUIDANCE_MODES = ("hq_vector", "learnable_tensor", "none")


class FeaturePyramid(NamedTuple):
    f1: torch.Tensor  # stride 2
    f2: torch.Tensor  # stride 4
    f3: torch.Tensor  # stride 8
    f4: torch.Tensor  # stride 16


def joint_vector(v_z, v_y, cue_dim=64, vy_dim=16):
    """Concatenate cue and structure vectors, cue first."""
    if v_z.shape[-1] != cue_dim or v_y.shape[-1] != vy_dim:
        raise ValueError("expected dims (%d, %d)" % (cue_dim, vy_dim))
    if v_z.shape[0] != v_y.shape[0]:
        raise ValueError("batch mismatch")
    return torch.cat([v_z, v_y], dim=-1)


class EnhancerNet(nn.Module):
    def __init__(self, base_width=16, cue_dim=64, vy_dim=16, guidance="hq_vector", integration="adalin"):
        super().__init__()
        if guidance not in GUIDANCE_MODES:
            raise ValueError("unknown guidance mode: %r" % (guidance,))
        self.guidance = guidance
        self.integration = integration
        self.cue_dim = cue_dim
        self.vy_dim = vy_dim
        self.base_width = base_width
        w = base_width

        self.stem = nn.Conv2d(1, w, 3, padding=1)
        self.enc1 = DownStage(w, 2 * w)
        self.enc2 = DownStage(2 * w, 4 * w)
        self.enc3 = DownStage(4 * w, 8 * w)
        self.enc4 = DownStage(8 * w, 8 * w)
        self.fc_e = nn.Linear(8 * w, vy_dim)

        cond = vy_dim if guidance == "none" else cue_dim + vy_dim
        self.cond_dim = cond
        if guidance == "learnable_tensor":
            self.free_cue = nn.Parameter(torch.zeros(cue_dim))

        # decoder: r4 = conv3(f4); r_k = conv3(conv1(cat(up(h_{k+1}), f_k)))
        self.r4_conv = nn.Conv2d(8 * w, 8 * w, 3, padding=1)
        self.merge3 = nn.Conv2d(16 * w, 8 * w, 1)
        self.r3_conv = nn.Conv2d(8 * w, 8 * w, 3, padding=1)
        self.merge2 = nn.Conv2d(12 * w, 4 * w, 1)
        self.r2_conv = nn.Conv2d(4 * w, 4 * w, 3, padding=1)
        self.merge1 = nn.Conv2d(6 * w, 2 * w, 1)
        self.r1_conv = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.vin = nn.ModuleList(
            [
                VinBlock(2 * w, cond, integration),
                VinBlock(4 * w, cond, integration),
                VinBlock(8 * w, cond, integration),
                VinBlock(8 * w, cond, integration),
            ]
        )
        self.out_conv = nn.Conv2d(2 * w, 1, 3, padding=1)

    def encode_lq(self, y):
        if y.dim() != 4 or y.shape[1] != 1:
            raise ValueError("expected (B, 1, H, W) input")
        if y.shape[2] % 16 or y.shape[3] % 16:
            raise ValueError("spatial dims must be divisible by 16")
        s = F.leaky_relu(self.stem(y), 0.2)
        f1 = self.enc1(s)
        f2 = self.enc2(f1)
        f3 = self.enc3(f2)
        f4 = self.enc4(f3)
        v_y = self.fc_e(f4.mean(dim=(2, 3)))
        return FeaturePyramid(f1, f2, f3, f4), v_y

    def style_affine(self, v_c, level):
        """(gamma, beta) of the VIN style head at a decoder level in {1..4}."""
        if not 1 <= level <= 4:
            raise ValueError("level must be in 1..4")
        block = self.vin[level - 1]
        if not hasattr(block, "style"):
            raise ValueError("mode %r has no style head" % (self.integration,))
        return block.style(v_c)

    def decode(self, pyr, v_c):
        if v_c.shape != (pyr.f4.shape[0], self.cond_dim):
            raise ValueError("conditioning vector shape mismatch")
        up = lambda t: F.interpolate(t, scale_factor=2, mode="nearest")
        r4 = self.r4_conv(pyr.f4)
        h4 = self.vin[3](r4, v_c)
        r3 = self.r3_conv(self.merge3(torch.cat([up(h4), pyr.f3], dim=1)))
        h3 = self.vin[2](r3, v_c)
        r2 = self.r2_conv(self.merge2(torch.cat([up(h3), pyr.f2], dim=1)))
        h2 = self.vin[1](r2, v_c)
        r1 = self.r1_conv(self.merge1(torch.cat([up(h2), pyr.f1], dim=1)))
        h1 = self.vin[0](r1, v_c)
        return torch.sigmoid(self.out_conv(up(h1)))

    def condition(self, v_y, v_z=None):
        """Build v_c for the active guidance mode."""
        if self.guidance == "none":
            return v_y
        if self.guidance == "learnable_tensor":
            v_z = self.free_cue.to(v_y.dtype).expand(v_y.shape[0], -1)
        if v_z is None:
            raise RuntimeError("guidance mode hq_vector needs a cue vector")
        if v_z.shape[0] == 1 and v_y.shape[0] > 1:
            v_z = v_z.expand(v_y.shape[0], -1)
        return joint_vector(v_z, v_y, self.cue_dim, self.vy_dim)

    def forward(self, y, v_z=None):
        pyr, v_y = self.encode_lq(y)
        return self.decode(pyr, self.condition(v_y, v_z))


def enhance(model, y, z=None, cue_encoder=None):
    """Full pipeline: extract the cue from exemplar z and enhance y."""
    v_z = None
    if model.guidance == "hq_vector":
        if z is None or cue_encoder is None:
            raise RuntimeError("hq_vector guidance needs an exemplar and a cue encoder")
        if z.dim() == 3:
            z = z[None]
        v_z = cue_encoder(z)
    return model(y, v_z)
