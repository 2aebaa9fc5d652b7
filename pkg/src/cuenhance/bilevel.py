"""Downstream segmentation head and cooperative optimization.

The nested enhance-then-segment objective is unrolled into simultaneous
first-order descent on L = L_down + lambda3 * L_enh over both parameter
sets, with the discriminator updated on its own alternating schedule.
gradient_path_check instruments the two-path decomposition of the
enhancer gradient and the single-path identity of the downstream gradient.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .adversary import loss_gan_d, loss_gan_g
from .enhancer import joint_vector
from .normalization import clamp_blend_weights
from .objectives import LossWeights, loss_ca, loss_fc, loss_haar
from .wavelet import DirectionMask


class TinyUnet(nn.Module):
    """Two-level U-Net with skip connections emitting per-pixel logits."""

    def __init__(self, base_width=8):
        super().__init__()
        w = base_width
        self.inc = nn.Conv2d(1, w, 3, padding=1)
        self.down1 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.mid1 = nn.Conv2d(2 * w, 2 * w, 3, padding=1)
        self.down2 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.mid2 = nn.Conv2d(4 * w, 4 * w, 3, padding=1)
        self.up1 = nn.Conv2d(4 * w + 2 * w, 2 * w, 3, padding=1)
        self.up2 = nn.Conv2d(2 * w + w, w, 3, padding=1)
        self.out = nn.Conv2d(w, 1, 3, padding=1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError("expected (B, 1, H, W) input")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError("spatial dims must be divisible by 4")
        up = lambda t: F.interpolate(t, scale_factor=2, mode="nearest")
        e0 = F.leaky_relu(self.inc(x), 0.2)
        e1 = F.leaky_relu(self.mid1(F.leaky_relu(self.down1(e0), 0.2)), 0.2)
        e2 = F.leaky_relu(self.mid2(F.leaky_relu(self.down2(e1), 0.2)), 0.2)
        d1 = F.leaky_relu(self.up1(torch.cat([up(e2), e1], dim=1)), 0.2)
        d0 = F.leaky_relu(self.up2(torch.cat([up(d1), e0], dim=1)), 0.2)
        return self.out(d0)


def soft_dice(logits, gt, smooth=1.0):
    """Differentiable Dice on sigmoid probabilities, per sample, then mean."""
    p = torch.sigmoid(logits).flatten(1)
    g = gt.flatten(1).to(p.dtype)
    inter = (p * g).sum(dim=1)
    return ((2.0 * inter + smooth) / (p.sum(dim=1) + g.sum(dim=1) + smooth)).mean()


def loss_downstream(logits, gt_mask):
    """Segmentation objective: 0.5 * BCE + 0.5 * (1 - soft Dice)."""
    if logits.shape != gt_mask.shape:
        raise ValueError("logits and mask shapes differ")
    uniq = torch.unique(gt_mask)
    if not bool(((uniq == 0) | (uniq == 1)).all()):
        raise ValueError("ground truth must be binary")
    gt = gt_mask.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, gt)
    return 0.5 * bce + 0.5 * (1.0 - soft_dice(logits, gt))


@dataclass
class CoopConfig:
    lambda3: float = 5.0
    steps: int = 1000
    lr: float = 1e-4
    betas: tuple = (0.5, 0.99)
    alternate_d_every: int = 1
    freeze_downstream: bool = False
    unfreeze_cue: bool = False

    def __post_init__(self):
        if self.lambda3 < 0:
            raise ValueError("lambda3 must be non-negative")
        if self.alternate_d_every < 1:
            raise ValueError("alternate_d_every must be positive")


@dataclass
class TrainNets:
    enhancer: nn.Module
    cue: nn.Module
    downstream: nn.Module = None
    discriminator: nn.Module = None


def _cue_vector(nets, z, unfreeze_cue):
    if nets.enhancer.guidance != "hq_vector" or z is None:
        return None
    if z.dim() == 3:
        z = z[None]
    if unfreeze_cue:
        return nets.cue(z)
    with torch.no_grad():
        return nets.cue(z)


def enhancement_terms(nets, y, z, weights, mask=DirectionMask(True, True, True), unfreeze_cue=False):
    """Forward pass producing x_hat and every component of L_enh."""
    v_z = _cue_vector(nets, z, unfreeze_cue)
    pyr, v_y = nets.enhancer.encode_lq(y)
    v_c = nets.enhancer.condition(v_y, v_z)
    xhat = nets.enhancer.decode(pyr, v_c)

    # re-encode the output; the cue half mirrors whatever the guidance arm uses
    _, v_y_hat = nets.enhancer.encode_lq(xhat)
    if nets.enhancer.guidance == "none":
        v_xhat = v_y_hat
    else:
        if nets.enhancer.guidance == "learnable_tensor":
            v_src = nets.enhancer.free_cue[None].expand(xhat.shape[0], -1)
        elif unfreeze_cue:
            v_src = nets.cue(xhat)
        else:
            prior = [p.requires_grad for p in nets.cue.parameters()]
            for p in nets.cue.parameters():
                p.requires_grad_(False)
            v_src = nets.cue(xhat)
            for p, flag in zip(nets.cue.parameters(), prior):
                p.requires_grad_(flag)
        v_xhat = joint_vector(v_src, v_y_hat, nets.enhancer.cue_dim, nets.enhancer.vy_dim)

    fake_logits = nets.discriminator(xhat)
    l_haar = loss_haar(xhat, y, mask)
    l_fc = loss_fc(v_xhat, v_c)
    l_gan = loss_gan_g(fake_logits)
    l_enh = l_haar + weights.lambda1 * l_fc + weights.lambda2 * l_gan
    return xhat, {"haar": l_haar, "fc": l_fc, "gan_g": l_gan, "enh": l_enh}


def _discriminator_update(nets, opt_d, hq, y, z, cfg, weights):
    with torch.no_grad():
        xhat = nets.enhancer(y, _cue_vector(nets, z, False))
    d_loss = loss_gan_d(nets.discriminator(hq), nets.discriminator(xhat.detach()))
    opt_d.zero_grad()
    d_loss.backward()
    opt_d.step()
    return float(d_loss.detach())


def plain_step(batch, nets, opts, cfg, weights, step_idx=0):
    """One enhancement-only step: alternate discriminator, then minimize L_enh."""
    report = {}
    if step_idx % cfg.alternate_d_every == 0:
        report["gan_d"] = _discriminator_update(
            nets, opts["disc"], batch["hq"], batch["y"], batch.get("z"), cfg, weights
        )
    _, terms = enhancement_terms(nets, batch["y"], batch.get("z"), weights)
    opts["enh"].zero_grad()
    terms["enh"].backward()
    opts["enh"].step()
    clamp_blend_weights(nets.enhancer)
    report.update({k: float(v.detach()) for k, v in terms.items()})
    report["total"] = report["enh"]
    return report


def cooperative_step(batch, nets, opts, cfg, weights, step_idx=0):
    """One discriminator step (on schedule) + one joint descent step on
    L = L_down + lambda3 * L_enh over downstream and enhancer parameters."""
    if "mask" not in batch or batch["mask"] is None:
        raise ValueError("cooperative training requires segmentation masks")
    report = {}
    if step_idx % cfg.alternate_d_every == 0:
        report["gan_d"] = _discriminator_update(
            nets, opts["disc"], batch["hq"], batch["y"], batch.get("z"), cfg, weights
        )

    xhat, terms = enhancement_terms(nets, batch["y"], batch.get("z"), weights)
    logits = nets.downstream(xhat)
    l_down = loss_downstream(logits, batch["mask"])
    total = l_down + cfg.lambda3 * terms["enh"]

    opts["enh"].zero_grad()
    if not cfg.freeze_downstream:
        opts["down"].zero_grad()
    total.backward()
    opts["enh"].step()
    if not cfg.freeze_downstream:
        opts["down"].step()
    clamp_blend_weights(nets.enhancer)

    report.update({k: float(v.detach()) for k, v in terms.items()})
    report["down"] = float(l_down.detach())
    report["total"] = float(total.detach())
    return report


@dataclass
class PathReport:
    rel_residual_e: float
    rel_residual_d: float
    fd_max_rel: float = float("nan")
    lambda3: float = 0.0
    n_params_e: int = 0
    n_params_d: int = 0
    details: dict = field(default_factory=dict)


def _flat_grads(loss, params, retain=False):
    grads = torch.autograd.grad(loss, params, retain_graph=retain, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for g, p in zip(grads, params)]


def gradient_path_check(batch, nets, cfg, weights, fd_probes=8, fd_step=1e-6):
    """Verify the two-path gradient decomposition for the enhancer parameters
    and the single-path identity for the downstream parameters.

    Each path is evaluated from its own fresh forward pass so the identity
    exercises graph construction, not autograd's internal linearity. Run in
    64-bit for the stated tolerances.
    """
    params_e = [p for p in nets.enhancer.parameters() if p.requires_grad]
    params_d = [p for p in nets.downstream.parameters() if p.requires_grad]

    def forward_total():
        xhat, terms = enhancement_terms(nets, batch["y"], batch.get("z"), weights)
        l_down = loss_downstream(nets.downstream(xhat), batch["mask"])
        return l_down + cfg.lambda3 * terms["enh"], l_down, terms["enh"]

    # (a) combined gradient from one joint graph
    total, _, _ = forward_total()
    combined_e = _flat_grads(total, params_e, retain=True)
    combined_d = _flat_grads(total, params_d)

    # (b) downstream path only, fresh graph
    xhat, _ = enhancement_terms(nets, batch["y"], batch.get("z"), weights)
    l_down = loss_downstream(nets.downstream(xhat), batch["mask"])
    down_e = _flat_grads(l_down, params_e, retain=True)
    down_d = _flat_grads(l_down, params_d)

    # (c) enhancement path only, fresh graph
    _, terms = enhancement_terms(nets, batch["y"], batch.get("z"), weights)
    enh_e = _flat_grads(terms["enh"], params_e)

    num_e, den_e = 0.0, 0.0
    for a, b, c in zip(combined_e, down_e, enh_e):
        num_e = max(num_e, (a - (b + cfg.lambda3 * c)).abs().max().item())
        den_e = max(den_e, a.abs().max().item())
    rel_e = num_e / max(den_e, 1e-30)

    num_d, den_d = 0.0, 0.0
    for a, b in zip(combined_d, down_d):
        num_d = max(num_d, (a - b).abs().max().item())
        den_d = max(den_d, a.abs().max().item())
    rel_d = num_d / max(den_d, 1e-30)

    report = PathReport(
        rel_residual_e=rel_e,
        rel_residual_d=rel_d,
        lambda3=cfg.lambda3,
        n_params_e=sum(p.numel() for p in params_e),
        n_params_d=sum(p.numel() for p in params_d),
    )

    if fd_probes > 0:
        gen = torch.Generator().manual_seed(0)
        worst = 0.0
        probe_pool = [i for i, p in enumerate(params_e) if p.numel() > 1]
        for k in range(fd_probes):
            pi = probe_pool[int(torch.randint(len(probe_pool), (1,), generator=gen))]
            p = params_e[pi]
            idx = int(torch.randint(p.numel(), (1,), generator=gen))
            analytic = combined_e[pi].view(-1)[idx].item()
            with torch.no_grad():
                flat = p.view(-1)
                orig = flat[idx].item()
                flat[idx] = orig + fd_step
                up_v = float(forward_total()[0])
                flat[idx] = orig - fd_step
                dn_v = float(forward_total()[0])
                flat[idx] = orig
            fd = (up_v - dn_v) / (2.0 * fd_step)
            worst = max(worst, abs(analytic - fd) / max(abs(fd), 1e-6))
        report.fd_max_rel = worst
    return report
