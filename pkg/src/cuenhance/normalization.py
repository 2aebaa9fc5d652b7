"""Adaptive feature normalization: AdaIN, AdaLN, their learned blend, and the
conditioned residual block used at every decoder level.

The conditioning vector is mapped to per-channel (gamma, beta) by small linear
heads; a learnable scalar rho mixes instance-wise and layer-wise statistics.
"""

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

EPS = 1e-5

MODES = ("adalin", "adain_only", "adaln_only", "concat", "add", "multiply")


class ChannelStats(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor


class StyleAffine(NamedTuple):
    gamma: torch.Tensor
    beta: torch.Tensor


def instance_stats(x):
    """Per-sample, per-channel mean and epsilon-floored std over (H, W)."""
    if x.dim() != 4 or x.shape[2] * x.shape[3] < 2:
        raise ValueError("expected NCHW input with at least 2 spatial elements")
    mu = x.mean(dim=(2, 3))
    var = x.var(dim=(2, 3), unbiased=False)
    return ChannelStats(mu, torch.sqrt(var + EPS))


def layer_stats(x):
    """Per-sample mean and epsilon-floored std over (C, H, W), shape (B, 1)."""
    if x.dim() != 4 or x.shape[1] * x.shape[2] * x.shape[3] < 2:
        raise ValueError("expected NCHW input with at least 2 elements per sample")
    mu = x.mean(dim=(1, 2, 3), keepdim=False).unsqueeze(1)
    var = x.var(dim=(1, 2, 3), unbiased=False).unsqueeze(1)
    return ChannelStats(mu, torch.sqrt(var + EPS))


def _affine(x_hat, style):
    gamma = style.gamma.unsqueeze(-1).unsqueeze(-1)
    beta = style.beta.unsqueeze(-1).unsqueeze(-1)
    return gamma * x_hat + beta


def ada_in(x, style):
    """Re-style x per channel: normalize by instance stats, apply (gamma, beta)."""
    if style.gamma.shape != (x.shape[0], x.shape[1]):
        raise ValueError("style shape must be (B, C)")
    mu, sigma = instance_stats(x)
    x_hat = (x - mu.unsqueeze(-1).unsqueeze(-1)) / sigma.unsqueeze(-1).unsqueeze(-1)
    return _affine(x_hat, style)


def ada_ln(x, style):
    """As ada_in but with statistics pooled over the whole sample (C, H, W)."""
    if style.gamma.shape != (x.shape[0], x.shape[1]):
        raise ValueError("style shape must be (B, C)")
    mu, sigma = layer_stats(x)
    x_hat = (x - mu.unsqueeze(-1).unsqueeze(-1)) / sigma.unsqueeze(-1).unsqueeze(-1)
    return _affine(x_hat, style)


def ada_lin(x, style, rho):
    """Blend of instance- and layer-normalized restyling, rho in [0, 1]."""
    rho_val = float(rho.detach()) if torch.is_tensor(rho) else float(rho)
    if not 0.0 <= rho_val <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    return rho * ada_in(x, style) + (1 - rho) * ada_ln(x, style)


class StyleHead(nn.Module):
    """Linear maps from the conditioning vector to per-channel (gamma, beta).

    Both heads start at zero so the initial style is the identity
    (gamma = 1 via the shifted-ELU positivity map, beta = 0).
    """

    def __init__(self, cond_dim, channels):
        super().__init__()
        self.to_gamma = nn.Linear(cond_dim, channels)
        self.to_beta = nn.Linear(cond_dim, channels)
        for head in (self.to_gamma, self.to_beta):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, v):
        return StyleAffine(F.elu(self.to_gamma(v)) + 1.0, self.to_beta(v))


class VinBlock(nn.Module):
    """Residual conditioning block: h = r + conv3(lrelu(fuse(r, v))).

    fuse depends on mode: the blended adaptive normalization by default, its
    two pure endpoints, or direct concat/add/multiply feature integration.
    The 3x3 conv starts at zero so the block is the identity at init.
    """

    def __init__(self, channels, cond_dim, mode="adalin"):
        super().__init__()
        if mode not in MODES:
            raise ValueError("unknown integration mode: %r" % (mode,))
        self.mode = mode
        if mode in ("adalin", "adain_only", "adaln_only"):
            self.style = StyleHead(cond_dim, channels)
        if mode == "adalin":
            self.rho = nn.Parameter(torch.tensor(0.5))
        if mode in ("concat", "add", "multiply"):
            self.proj = nn.Linear(cond_dim, channels)
        if mode == "concat":
            self.fuse_conv = nn.Conv2d(2 * channels, channels, 1)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def clamp_rho(self):
        if self.mode == "adalin":
            with torch.no_grad():
                self.rho.clamp_(0.0, 1.0)

    def _ada_in(self, r, style):
        # a 1x1 map has zero instance variance; the eps-floored normalized
        # value is exactly 0, leaving the beta component
        if r.shape[2] * r.shape[3] == 1:
            return style.beta.unsqueeze(-1).unsqueeze(-1).expand_as(r) + 0.0 * r
        return ada_in(r, style)

    def _fuse(self, r, v):
        if self.mode == "adalin":
            style = self.style(v)
            rho_val = float(self.rho.detach())
            if not 0.0 <= rho_val <= 1.0:
                raise ValueError("rho must lie in [0, 1]")
            return self.rho * self._ada_in(r, style) + (1 - self.rho) * ada_ln(r, style)
        if self.mode == "adain_only":
            return self._ada_in(r, self.style(v))
        if self.mode == "adaln_only":
            return ada_ln(r, self.style(v))
        m = self.proj(v).unsqueeze(-1).unsqueeze(-1)
        if self.mode == "concat":
            return self.fuse_conv(torch.cat([r, m.expand_as(r)], dim=1))
        if self.mode == "add":
            return r + m
        return r * m

    def forward(self, r, v):
        if (r.shape[2] % 2 or r.shape[3] % 2) and r.shape[2] * r.shape[3] != 1:
            raise ValueError("feature map spatial dims must be even (or the degenerate 1x1)")
        if v.shape[0] != r.shape[0]:
            raise ValueError("batch mismatch between features and condition")
        return r + self.conv(F.leaky_relu(self._fuse(r, v), 0.2))


def clamp_blend_weights(model):
    """Clamp every VIN blend weight in `model` into [0, 1]; call after each step."""
    for m in model.modules():
        if isinstance(m, VinBlock):
            m.clamp_rho()
