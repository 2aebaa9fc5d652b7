"""Command line entry points tying data, training, enhancement and evaluation together."""

import argparse
import glob
import os
import sys

import numpy as np
import torch

from . import data as datasets
from .bilevel import CoopConfig, TinyUnet, TrainNets, gradient_path_check
from .checkpoint import CheckpointError
from .config import RunConfig, load_config
from .cue import PretrainConfig, pretrain_autoencoder
from .normalization import clamp_blend_weights
from .objectives import LossWeights
from .seeding import seed_all, torch_dtype
from . import training


def _err(exc):
    sys.stderr.write("error: %s: %s\n" % (type(exc).__name__, exc))
    return 1


def _split_size(root, split):
    man = datasets.load_manifest(root, split)
    first = (man.hq_ids or man.lq_ids)[0]
    return datasets.load_image_png(man.image_path(first)).shape[-1], man


def cmd_make_data(args):
    datasets.build_unpaired_split(args.n_hq, args.n_lq, args.size, args.seed, args.out, "train")
    total = args.n_hq + args.n_lq
    if args.n_test > 0:
        test_seed = int(datasets._derived_seed(args.seed, 3))
        datasets.build_unpaired_split(1, args.n_test, args.size, test_seed, args.out, "test")
        total += 1 + args.n_test
    print("wrote %d images under %s (train: %d hq + %d lq%s)" % (
        total, args.out, args.n_hq, args.n_lq,
        ", test: %d lq" % args.n_test if args.n_test > 0 else ""))
    return 0


def cmd_pretrain_cue(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    size, man = _split_size(args.data, "train")
    pcfg = PretrainConfig(
        epochs=args.epochs if args.epochs is not None else cfg.pretrain.epochs,
        lr=cfg.pretrain.lr,
        ssim_weight=cfg.pretrain.ssim_weight,
        include_lq=cfg.pretrain.include_lq,
        batch_size=cfg.pretrain.batch_size,
        base_width=cfg.pretrain.base_width,
        cue_dim=cfg.pretrain.cue_dim,
    )
    seed = args.seed if args.seed is not None else cfg.seed
    _, history = pretrain_autoencoder(man, pcfg, size, seed=seed, ckpt_path=args.out)
    print("pretrained cue encoder: initial_loss=%.5f final_loss=%.5f -> %s" % (
        history["initial_loss"], history["epoch_loss"][-1], args.out))
    return 0


def _run_training(args, mode):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.train.guidance == "hq_vector" and not args.cue:
        sys.stderr.write("warning: no --cue checkpoint given, using a freshly seeded cue encoder\n")
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    _, history = training.train_run(
        cfg,
        mode=mode,
        data_root=args.data,
        cue_ckpt=args.cue,
        out_path=args.out,
        steps=args.steps,
        log=log,
    )
    print("finished %d steps, final total=%.4f -> %s" % (
        len(history), history[-1]["total"], args.out))
    return 0


def cmd_train(args):
    return _run_training(args, "plain")


def cmd_train_coop(args):
    return _run_training(args, "coop")


def cmd_enhance(args):
    nets, _, cfg, _ = training.load_run_checkpoint(args.ckpt)
    dtype = torch_dtype(cfg.precision)
    paths = sorted(glob.glob(os.path.join(args.input, "*.png")))
    if not paths:
        raise FileNotFoundError("no PNG files under %s" % args.input)
    lq = np.stack([datasets.load_image_png(p) for p in paths])

    guidance = None
    if nets.enhancer.guidance == "hq_vector":
        if not args.guidance:
            raise ValueError("checkpoint uses hq_vector guidance, pass --guidance")
        if os.path.isdir(args.guidance):
            zs = sorted(glob.glob(os.path.join(args.guidance, "*.png")))
            if not zs:
                raise FileNotFoundError("no PNG files under %s" % args.guidance)
            guidance = np.stack([datasets.load_image_png(p) for p in zs])
        else:
            guidance = datasets.load_image_png(args.guidance)[None]

    xhat = training.enhance_images(nets, lq, guidance, dtype)
    os.makedirs(args.out, exist_ok=True)
    for p, img in zip(paths, xhat):
        datasets.save_image_png(os.path.join(args.out, os.path.basename(p)), img)
    print("enhanced %d images -> %s" % (len(paths), args.out))
    return 0


def cmd_eval(args):
    nets, _, cfg, _ = training.load_run_checkpoint(args.ckpt)
    arrays = training.load_split_arrays(args.data, args.split)
    guidance = None
    if nets.enhancer.guidance == "hq_vector":
        if args.guidance:
            guidance = datasets.load_image_png(args.guidance)
        else:
            try:
                train_arrays = training.load_split_arrays(args.data, "train")
                guidance = train_arrays["hq"][0]
            except (KeyError, FileNotFoundError):
                guidance = arrays["hq"][0]
    report = training.evaluation_report(
        nets, arrays, cfg, guidance, with_seg=nets.downstream is not None
    )
    report.write_csv(args.out_csv)
    if args.out_json:
        report.write_summary_json(args.out_json)
    s = report.summary()
    print("evaluated %d images: snr_in=%.3f snr_out=%.3f -> %s" % (
        len(report.rows), s["snr_in"][0], s["snr_out"][0], args.out_csv))
    return 0


def cmd_gradcheck(args):
    from .adversary import PatchDiscriminator
    from .cue import CueEncoder
    from .enhancer import EnhancerNet

    seed_all(args.seed)
    nets = TrainNets(
        EnhancerNet(base_width=8),
        CueEncoder(base_width=8),
        TinyUnet(base_width=8),
        PatchDiscriminator(base_width=8),
    )
    for m in (nets.enhancer, nets.cue, nets.downstream, nets.discriminator):
        m.to(torch.float64)
        with torch.no_grad():
            for p in m.parameters():
                p.add_(torch.randn_like(p) * 0.05)
    clamp_blend_weights(nets.enhancer)
    g = torch.Generator().manual_seed(args.seed + 1)
    size = args.size
    batch = {
        "y": torch.rand(1, 1, size, size, generator=g, dtype=torch.float64),
        "z": torch.rand(1, 1, size, size, generator=g, dtype=torch.float64),
        "mask": (torch.rand(1, 1, size, size, generator=g) > 0.5).double(),
    }
    cfg = CoopConfig(lambda3=args.lambda3)
    rep = gradient_path_check(batch, nets, cfg, LossWeights(), fd_probes=args.fd_probes)
    ok = rep.rel_residual_e < 1e-6 and rep.rel_residual_d < 1e-9 and (
        args.fd_probes == 0 or rep.fd_max_rel < 1e-3)
    print("gradcheck rel_e=%.3e rel_d=%.3e fd=%.3e lambda3=%g ok=%s" % (
        rep.rel_residual_e, rep.rel_residual_d, rep.fd_max_rel, cfg.lambda3, ok))
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cuenhance",
        description="Exemplar-guided unpaired image enhancement with a cooperative segmentation head.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate a synthetic unpaired HQ/LQ dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-hq", type=int, default=200)
    p.add_argument("--n-lq", type=int, default=200)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("pretrain-cue", help="pretrain the exemplar cue encoder by reconstruction")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain_cue)

    for name, fn in (("train", cmd_train), ("train-coop", cmd_train_coop)):
        p = sub.add_parser(name, help="run %s optimization" % name)
        p.add_argument("--config")
        p.add_argument("--data")
        p.add_argument("--cue")
        p.add_argument("--out", default=name.replace("-", "_") + ".ckpt")
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--quiet", action="store_true")
        p.set_defaults(func=fn)

    p = sub.add_parser("enhance", help="enhance a directory of PNG images")
    p.add_argument("--input", required=True)
    p.add_argument("--guidance")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="compute image and segmentation metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--guidance")
    p.add_argument("--out-csv", default="eval.csv")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify the joint-objective gradient decomposition")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--lambda3", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fd-probes", type=int, default=8)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, CheckpointError, OSError) as exc:
        return _err(exc)


if __name__ == "__main__":
    sys.exit(main())
