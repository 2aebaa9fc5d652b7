"""Dataset tensors, augmentation, training loops, run checkpoints, evaluation."""

import numpy as np
import torch

from . import data as datasets
from .adversary import PatchDiscriminator
from .bilevel import (
    CoopConfig,
    TinyUnet,
    TrainNets,
    cooperative_step,
    plain_step,
)
from .checkpoint import (
    load_checkpoint,
    load_module_arrays,
    module_arrays,
    save_checkpoint,
)
from .config import parse_config, serialize_config
from .cue import CueEncoder
from .enhancer import EnhancerNet
from .metrics import MetricReport, avg_gradient, entropy, snr_r
from .objectives import LossWeights
from .seeding import rng_for, seed_all, torch_dtype


def load_split_arrays(root, split):
    """Load one split into stacked float64 arrays keyed by group."""
    man = datasets.load_manifest(root, split)
    out = {"hq_ids": list(man.hq_ids), "lq_ids": list(man.lq_ids)}
    out["hq"] = np.stack([datasets.load_image_png(man.image_path(s)) for s in man.hq_ids])
    out["lq"] = np.stack([datasets.load_image_png(man.image_path(s)) for s in man.lq_ids])
    out["lq_masks"] = np.stack(
        [datasets.load_mask_png(man.mask_path(s))[None].astype(np.float64) for s in man.lq_ids]
    )
    return out


def _maybe_flip(img, rng):
    if rng.random() < 0.5:
        img = img[..., ::-1]
    if rng.random() < 0.5:
        img = img[..., ::-1, :]
    return img


def sample_batch(arrays, batch_size, rng, augment=True, dtype=torch.float32):
    """Draw an unpaired training batch: LQ inputs with masks, HQ reals, one exemplar.

    Flips are sampled per image; an LQ image and its mask flip together.
    """
    n_hq, n_lq = len(arrays["hq"]), len(arrays["lq"])
    li = rng.integers(0, n_lq, size=batch_size)
    hi = rng.integers(0, n_hq, size=batch_size)
    zi = int(rng.integers(0, n_hq))
    ys, ms, hs = [], [], []
    for a, b in zip(li, hi):
        y, m = arrays["lq"][a], arrays["lq_masks"][a]
        if augment:
            if rng.random() < 0.5:
                y, m = y[..., ::-1], m[..., ::-1]
            if rng.random() < 0.5:
                y, m = y[..., ::-1, :], m[..., ::-1, :]
        h = _maybe_flip(arrays["hq"][b], rng) if augment else arrays["hq"][b]
        ys.append(y.copy())
        ms.append(m.copy())
        hs.append(h.copy())
    z = arrays["hq"][zi]
    if augment:
        z = _maybe_flip(z, rng).copy()
    t = lambda x: torch.from_numpy(np.stack(x)).to(dtype)
    return {
        "y": t(ys),
        "mask": t(ms),
        "hq": t(hs),
        "z": torch.from_numpy(z[None].copy()).to(dtype),
    }


def build_nets(cfg, with_downstream=False):
    enh = EnhancerNet(
        base_width=cfg.train.base_width,
        cue_dim=cfg.pretrain.cue_dim,
        vy_dim=cfg.train.vy_dim,
        guidance=cfg.train.guidance,
        integration=cfg.train.integration,
    )
    cue = None
    if cfg.train.guidance == "hq_vector":
        cue = CueEncoder(base_width=cfg.pretrain.base_width, cue_dim=cfg.pretrain.cue_dim)
    disc = PatchDiscriminator(base_width=cfg.train.base_width)
    unet = TinyUnet(cfg.coop.unet_width) if with_downstream else None
    return TrainNets(enh, cue, unet, disc)


def make_optimizers(nets, cfg):
    betas = (cfg.train.beta1, cfg.train.beta2)
    opts = {
        "enh": torch.optim.Adam(nets.enhancer.parameters(), lr=cfg.train.lr, betas=betas),
        "disc": torch.optim.Adam(nets.discriminator.parameters(), lr=cfg.train.lr, betas=betas),
    }
    if nets.downstream is not None:
        # the from-scratch segmentation head needs a larger rate than the GAN nets
        opts["down"] = torch.optim.Adam(
            nets.downstream.parameters(), lr=cfg.coop.downstream_lr, betas=betas
        )
    return opts


def optimizer_arrays(opt, prefix):
    """Flatten Adam state into named arrays, keyed by group/param position."""
    out = {}
    for gi, group in enumerate(opt.param_groups):
        for pi, p in enumerate(group["params"]):
            st = opt.state.get(p)
            if not st:
                continue
            base = "%s/g%d/p%d" % (prefix, gi, pi)
            out[base + "/step"] = np.asarray(st["step"].detach().cpu().numpy())
            out[base + "/exp_avg"] = st["exp_avg"].detach().cpu().numpy()
            out[base + "/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
    return out


def load_optimizer_arrays(opt, arrays, prefix):
    for gi, group in enumerate(opt.param_groups):
        for pi, p in enumerate(group["params"]):
            base = "%s/g%d/p%d" % (prefix, gi, pi)
            if base + "/step" not in arrays:
                continue
            opt.state[p] = {
                "step": torch.from_numpy(np.asarray(arrays[base + "/step"]).copy()),
                "exp_avg": torch.from_numpy(arrays[base + "/exp_avg"].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(arrays[base + "/exp_avg_sq"].copy()).to(p.dtype),
            }


_NET_PREFIXES = (
    ("enhancer", "enhancer"),
    ("cue", "cue"),
    ("discriminator", "disc"),
    ("downstream", "down"),
)


def save_run_checkpoint(path, nets, opts, cfg, step, kind="train"):
    arrays = {"step": np.array(int(step), dtype=np.int64)}
    for attr, prefix in _NET_PREFIXES:
        net = getattr(nets, attr)
        if net is not None:
            arrays.update(module_arrays(net, prefix))
    for name, opt in (opts or {}).items():
        arrays.update(optimizer_arrays(opt, "opt_" + name))
    meta = {
        "kind": kind,
        "step": int(step),
        "config": serialize_config(cfg),
        "has": sorted(p for a, p in _NET_PREFIXES if getattr(nets, a) is not None),
    }
    save_checkpoint(path, arrays, meta)


def load_run_checkpoint(path):
    """Rebuild nets and optimizers from a run checkpoint."""
    arrays, meta = load_checkpoint(path)
    cfg = parse_config(meta["config"])
    dtype = torch_dtype(cfg.precision)
    nets = build_nets(cfg, with_downstream="down" in meta.get("has", []))
    for attr, prefix in _NET_PREFIXES:
        net = getattr(nets, attr)
        if net is not None:
            net.to(dtype)
            load_module_arrays(net, arrays, prefix)
    opts = make_optimizers(nets, cfg)
    for name, opt in opts.items():
        load_optimizer_arrays(opt, arrays, "opt_" + name)
    return nets, opts, cfg, int(meta["step"])


def load_cue_encoder(path, dtype=torch.float32):
    arrays, meta = load_checkpoint(path)
    enc = CueEncoder(base_width=int(meta["base_width"]), cue_dim=int(meta["cue_dim"]))
    enc.to(dtype)
    load_module_arrays(enc, arrays, "cue")
    return enc


def train_run(cfg, mode="plain", data_root=None, cue_ckpt=None, out_path=None,
              steps=None, log=None):
    """Run `steps` training iterations and optionally write a checkpoint.

    mode "plain" minimizes the enhancement objective; mode "coop" descends
    the joint objective with the downstream head. Returns (nets, history).
    """
    seed_all(cfg.seed, cfg.deterministic)
    dtype = torch_dtype(cfg.precision)
    root = data_root or cfg.data_root
    arrays = load_split_arrays(root, "train")

    nets = build_nets(cfg, with_downstream=(mode == "coop"))
    if nets.cue is not None and cue_ckpt:
        nets.cue = load_cue_encoder(cue_ckpt, dtype)
    for attr, _ in _NET_PREFIXES:
        net = getattr(nets, attr)
        if net is not None:
            net.to(dtype)

    opts = make_optimizers(nets, cfg)
    n_steps = cfg.train.steps if steps is None else int(steps)
    ccfg = CoopConfig(
        lambda3=cfg.coop.lambda3,
        steps=n_steps,
        lr=cfg.train.lr,
        betas=(cfg.train.beta1, cfg.train.beta2),
        alternate_d_every=cfg.train.alternate_d_every,
        freeze_downstream=cfg.coop.freeze_downstream,
    )
    weights = LossWeights(cfg.train.lambda1, cfg.train.lambda2, cfg.coop.lambda3)
    rng = rng_for(cfg.seed, 7)
    step_fn = cooperative_step if mode == "coop" else plain_step

    history = []
    for k in range(n_steps):
        batch = sample_batch(arrays, cfg.train.batch_size, rng, cfg.train.augment, dtype)
        rep = step_fn(batch, nets, opts, ccfg, weights, step_idx=k)
        history.append(rep)
        if log and (k % 50 == 0 or k == n_steps - 1):
            log("step %d/%d total=%.4f haar=%.4f" % (k + 1, n_steps, rep["total"], rep["haar"]))

    if out_path:
        save_run_checkpoint(out_path, nets, opts, cfg, n_steps,
                            kind="train-coop" if mode == "coop" else "train")
    return nets, history


def train_downstream_only(nets, cfg, data_root=None, steps=None, log=None):
    """Fit a fresh segmentation head on the frozen enhancer's outputs."""
    from .bilevel import loss_downstream

    dtype = torch_dtype(cfg.precision)
    arrays = load_split_arrays(data_root or cfg.data_root, "train")
    unet = TinyUnet(cfg.coop.unet_width).to(dtype)
    opt = torch.optim.Adam(unet.parameters(), lr=cfg.coop.downstream_lr,
                           betas=(cfg.train.beta1, cfg.train.beta2))
    rng = rng_for(cfg.seed, 8)
    n_steps = cfg.train.steps if steps is None else int(steps)
    for k in range(n_steps):
        batch = sample_batch(arrays, cfg.train.batch_size, rng, cfg.train.augment, dtype)
        with torch.no_grad():
            xhat = _enhance_batch(nets, batch["y"], batch["z"])
        loss = loss_downstream(unet(xhat), batch["mask"])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log and (k % 50 == 0 or k == n_steps - 1):
            log("theta step %d/%d loss=%.4f" % (k + 1, n_steps, float(loss.detach())))
    nets.downstream = unet
    return nets


def _enhance_batch(nets, y, z):
    v_z = None
    if nets.enhancer.guidance == "hq_vector":
        if z is None:
            raise ValueError("hq_vector guidance needs an exemplar")
        v_z = nets.cue(z if z.dim() == 4 else z[None])
        if v_z.shape[0] > 1:
            # several exemplars: pool their cue vectors
            v_z = v_z.mean(dim=0, keepdim=True)
    return nets.enhancer(y, v_z)


def enhance_images(nets, lq, guidance=None, dtype=torch.float32, batch_size=8):
    """Enhance a stack of LQ images (N,1,H,W) ndarray -> ndarray in [0,1]."""
    outs = []
    z = None
    if guidance is not None:
        z = torch.from_numpy(np.asarray(guidance)).to(dtype)
        if z.dim() == 3:
            z = z[None]
    with torch.no_grad():
        for k in range(0, len(lq), batch_size):
            y = torch.from_numpy(lq[k : k + batch_size]).to(dtype)
            outs.append(_enhance_batch(nets, y, z).cpu().numpy())
    return np.concatenate(outs, axis=0)


def evaluation_report(nets, arrays, cfg, guidance=None, with_seg=False):
    """Per-image metric rows over a split's LQ images, input vs. enhanced."""
    dtype = torch_dtype(cfg.precision)
    r = cfg.eval.snr_radius
    xhat = enhance_images(nets, arrays["lq"], guidance, dtype)
    cols = ["snr_in", "snr_out", "ag_in", "ag_out", "entropy_in", "entropy_out"]
    if with_seg:
        cols.append("dice")
        from .metrics import seg_scores

        with torch.no_grad():
            logits = nets.downstream(torch.from_numpy(xhat).to(dtype)).cpu().numpy()
    report = MetricReport(cols, metadata={"n": len(arrays["lq_ids"]), "snr_radius": r})
    for i, sid in enumerate(arrays["lq_ids"]):
        y, xh = arrays["lq"][i, 0], np.clip(xhat[i, 0].astype(np.float64), 0.0, 1.0)
        row = [
            snr_r(y, r),
            snr_r(xh, r),
            avg_gradient(y),
            avg_gradient(xh),
            entropy(y),
            entropy(xh),
        ]
        if with_seg:
            sc = seg_scores(
                torch.from_numpy(logits[i, 0].astype(np.float64)),
                torch.from_numpy(arrays["lq_masks"][i, 0] > 0.5),
                cfg.eval.threshold,
            )
            row.append(sc.dice)
        report.add(sid, row)
    return report
