"""HQ cue extraction: a small residual encoder producing a 64-dim cue vector,
pretrained as an autoencoder with MSE + SSIM reconstruction loss on HQ (and
optionally LQ) images. The decoder exists only for pretraining.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DownStage
from .checkpoint import module_arrays, save_checkpoint
from .data import load_image_png
from .seeding import rng_for


def _gaussian_window(size, sigma, dtype, device):
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return g[:, None] @ g[None, :]


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean structural similarity with a valid-mode Gaussian window."""
    if a.shape != b.shape:
        raise ValueError("ssim inputs must share a shape")
    if a.dim() == 2:
        a, b = a[None, None], b[None, None]
    elif a.dim() == 3:
        a, b = a[None], b[None]
    if a.shape[2] < window or a.shape[3] < window:
        raise ValueError("image smaller than the ssim window")
    c = a.shape[1]
    kern = _gaussian_window(window, sigma, a.dtype, a.device).expand(c, 1, window, window)
    mu1 = F.conv2d(a, kern, groups=c)
    mu2 = F.conv2d(b, kern, groups=c)
    s11 = (F.conv2d(a * a, kern, groups=c) - mu1 * mu1).clamp(min=0.0)
    s22 = (F.conv2d(b * b, kern, groups=c) - mu2 * mu2).clamp(min=0.0)
    s12 = F.conv2d(a * b, kern, groups=c) - mu1 * mu2
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return (num / den).mean()


class CueEncoder(nn.Module):
    """Residual CNN + global average pooling + FC head to the cue vector."""

    def __init__(self, base_width=16, cue_dim=64):
        super().__init__()
        w = base_width
        self.base_width = base_width
        self.cue_dim = cue_dim
        self.stem = nn.Conv2d(1, w, 3, padding=1)
        self.stages = nn.ModuleList(
            [DownStage(w, 2 * w), DownStage(2 * w, 4 * w), DownStage(4 * w, 8 * w), DownStage(8 * w, 8 * w)]
        )
        self.head = nn.Linear(8 * w, cue_dim)

    def forward(self, z):
        if z.dim() != 4 or z.shape[1] != 1:
            raise ValueError("expected (B, 1, H, W) input")
        if z.shape[2] % 16 or z.shape[3] % 16:
            raise ValueError("spatial dims must be divisible by 16")
        f = F.leaky_relu(self.stem(z), 0.2)
        for stage in self.stages:
            f = stage(f)
        return self.head(f.mean(dim=(2, 3)))


class CueAutoencoder(nn.Module):
    """Encoder + throwaway decoder used only during cue pretraining.

    Reconstruction is forced through the cue vector so the FC head learns a
    representation, not just the convolutional trunk.
    """

    def __init__(self, size=64, base_width=16, cue_dim=64):
        super().__init__()
        if size % 16:
            raise ValueError("size must be divisible by 16")
        self.encoder = CueEncoder(base_width, cue_dim)
        w = base_width
        self.bottom = size // 16
        self.fc = nn.Linear(cue_dim, 8 * w * self.bottom * self.bottom)
        self.up_convs = nn.ModuleList(
            [
                nn.Conv2d(8 * w, 4 * w, 3, padding=1),
                nn.Conv2d(4 * w, 2 * w, 3, padding=1),
                nn.Conv2d(2 * w, w, 3, padding=1),
                nn.Conv2d(w, w, 3, padding=1),
            ]
        )
        self.out_conv = nn.Conv2d(w, 1, 3, padding=1)

    def forward(self, x):
        v = self.encoder(x)
        y = self.fc(v).view(x.shape[0], -1, self.bottom, self.bottom)
        for conv in self.up_convs:
            y = F.leaky_relu(conv(F.interpolate(y, scale_factor=2, mode="nearest")), 0.2)
        return torch.sigmoid(self.out_conv(y)), v


def pretrain_loss(recon, target, ssim_weight):
    return F.mse_loss(recon, target) + ssim_weight * (1.0 - ssim(recon, target))


@dataclass
class PretrainConfig:
    epochs: int = 2
    lr: float = 1e-4
    ssim_weight: float = 1.0
    include_lq: bool = True
    batch_size: int = 4
    base_width: int = 16
    cue_dim: int = 64

    def __post_init__(self):
        if self.ssim_weight < 0:
            raise ValueError("ssim_weight must be non-negative")


def pretrain_autoencoder(manifest, cfg, size, seed=0, ckpt_path=None):
    """Train the autoencoder and return (encoder, history).

    history holds the initial full-data loss and per-epoch running means.
    """
    ids = list(manifest.hq_ids) + (list(manifest.lq_ids) if cfg.include_lq else [])
    if not ids:
        raise ValueError("manifest holds no training images")
    images = torch.stack(
        [torch.as_tensor(load_image_png(manifest.image_path(i)), dtype=torch.float32) for i in ids]
    )

    torch.manual_seed(seed)
    model = CueAutoencoder(size=size, base_width=cfg.base_width, cue_dim=cfg.cue_dim)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.5, 0.99))
    rng = rng_for(seed, 100)

    with torch.no_grad():
        recon, _ = model(images)
        history = {"initial_loss": float(pretrain_loss(recon, images, cfg.ssim_weight)), "epoch_loss": []}

    n = len(ids)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = images[order[start : start + cfg.batch_size]]
            recon, _ = model(batch)
            loss = pretrain_loss(recon, batch, cfg.ssim_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        history["epoch_loss"].append(total / batches)

    encoder = model.encoder
    if ckpt_path is not None:
        meta = {
            "kind": "cue-encoder",
            "base_width": encoder.base_width,
            "cue_dim": encoder.cue_dim,
            "epochs": cfg.epochs,
            "seed": seed,
        }
        save_checkpoint(ckpt_path, module_arrays(encoder, "cue"), meta)
    return encoder, history
