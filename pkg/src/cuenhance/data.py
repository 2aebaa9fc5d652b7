"""Synthetic unpaired LQ/HQ data with paired segmentation masks.

Phantoms are curvilinear bright structures (vessel-like tubes) on a smooth
textured background. LQ counterparts are produced by blurring, a smooth
multiplicative illumination field, additive Gaussian noise and a radial
vignette. Everything is a pure function of its seed.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

GENERATOR_VERSION = 1


@dataclass(frozen=True)
class Phantom:
    image: np.ndarray  # (1, H, W) float64 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    seed: int


@dataclass(frozen=True)
class DegradationConfig:
    illumination_gain_range: tuple = (0.35, 0.75)
    blur_sigma_range: tuple = (1.0, 2.5)
    noise_std_range: tuple = (0.02, 0.06)
    vignette_strength: float = 0.35

    def __post_init__(self):
        for lo, hi in (self.illumination_gain_range, self.blur_sigma_range, self.noise_std_range):
            if lo > hi:
                raise ValueError("range low must not exceed high")
        if self.vignette_strength < 0:
            raise ValueError("vignette_strength must be non-negative")

    @classmethod
    def identity(cls):
        return cls((1.0, 1.0), (0.0, 0.0), (0.0, 0.0), 0.0)


@dataclass
class DatasetManifest:
    hq_ids: list
    lq_ids: list
    split: str
    root_path: str

    def image_path(self, sample_id):
        group = "hq" if sample_id in set(self.hq_ids) else "lq"
        return os.path.join(self.root_path, self.split, group, sample_id + ".png")

    def mask_path(self, sample_id):
        return os.path.join(self.root_path, self.split, "masks", sample_id + ".png")


def _check_size(size):
    if size < 16 or size & (size - 1) != 0:
        raise ValueError("size must be a power of two, at least 16")


def make_phantom(seed, size):
    """Deterministic phantom: curvy bright tubes over low-contrast texture."""
    _check_size(size)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))

    bg = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16.0, mode="wrap")
    span = bg.max() - bg.min()
    bg = 0.25 + 0.15 * (bg - bg.min()) / (span + 1e-12)
    fine = gaussian_filter(rng.standard_normal((size, size)), sigma=1.0, mode="wrap")
    bg = bg + 0.01 * fine / (np.abs(fine).max() + 1e-12)

    canvas = np.zeros((size, size))
    n_curves = int(3 + rng.integers(0, 3))
    steps = int(size * 1.5)
    for _ in range(n_curves):
        start = rng.uniform(0.15 * size, 0.85 * size, size=2)
        ang0 = rng.uniform(0.0, 2.0 * np.pi)
        curv = rng.uniform(-0.06, 0.06)
        ang = ang0 + np.cumsum(rng.normal(curv, 0.08, size=steps))
        path = start + 0.7 * np.cumsum(np.stack([np.cos(ang), np.sin(ang)], axis=1), axis=0)
        ij = np.round(path).astype(int)
        keep = (ij[:, 0] >= 0) & (ij[:, 0] < size) & (ij[:, 1] >= 0) & (ij[:, 1] < size)
        ij = ij[keep]
        np.add.at(canvas, (ij[:, 0], ij[:, 1]), 1.0)

    width = rng.uniform(0.8, 1.3)
    tubes = gaussian_filter(canvas, sigma=width, mode="constant")
    tubes = tubes / (tubes.max() + 1e-12)
    mask = (tubes > 0.30).astype(np.uint8)
    image = np.clip(bg + 0.55 * tubes, 0.0, 1.0)
    return Phantom(image[None], mask, int(seed))


def degrade(phantom, cfg, seed):
    """Sample one degradation from cfg and apply it; identity cfg is exact."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    img = phantom.image[0].copy()
    size = img.shape[0]

    sigma = float(rng.uniform(*cfg.blur_sigma_range))
    if sigma > 0:
        img = gaussian_filter(img, sigma, mode="wrap")

    glo, ghi = cfg.illumination_gain_range
    if not (glo == ghi == 1.0):
        if glo == ghi:
            img = img * glo
        else:
            field = gaussian_filter(rng.standard_normal(img.shape), sigma=size / 8.0, mode="wrap")
            span = field.max() - field.min()
            field = (field - field.min()) / (span + 1e-12)
            img = img * (glo + (ghi - glo) * field)

    std = float(rng.uniform(*cfg.noise_std_range))
    if std > 0:
        img = img + rng.normal(0.0, std, size=img.shape)

    if cfg.vignette_strength > 0:
        yy, xx = np.mgrid[0:size, 0:size]
        r2 = ((yy - (size - 1) / 2.0) ** 2 + (xx - (size - 1) / 2.0) ** 2) / (
            2.0 * ((size - 1) / 2.0) ** 2
        )
        img = img * (1.0 - cfg.vignette_strength * r2)

    return np.clip(img, 0.0, 1.0)[None]


def save_image_png(path, image):
    """Quantize [0,1] grayscale to 8 bits and write a PNG."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr[0]
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def load_image_png(path):
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return arr[None]


def save_mask_png(path, mask):
    Image.fromarray(np.asarray(mask, dtype=bool)).save(path)


def load_mask_png(path):
    return (np.asarray(Image.open(path)) > 0).astype(np.uint8)


def _derived_seed(*key):
    return int(np.random.SeedSequence(list(key)).generate_state(1, dtype=np.uint64)[0])


def build_unpaired_split(n_hq, n_lq, size, seed, root, split="train", cfg=None):
    """Write an unpaired split to disk and return its manifest.

    HQ images are clean phantoms; LQ images are degraded phantoms generated
    from a disjoint seed stream, so no LQ image has an HQ counterpart. Every
    image gets the mask of its clean source.
    """
    if n_hq < 1 or n_lq < 1:
        raise ValueError("need at least one sample per group")
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    cfg = cfg or DegradationConfig()

    for sub in ("hq", "lq", "masks"):
        os.makedirs(os.path.join(root, split, sub), exist_ok=True)

    hq_ids, lq_ids = [], []
    for i in range(n_hq):
        sid = "hq_%04d" % i
        phantom = make_phantom(_derived_seed(seed, 0, i), size)
        save_image_png(os.path.join(root, split, "hq", sid + ".png"), phantom.image)
        save_mask_png(os.path.join(root, split, "masks", sid + ".png"), phantom.mask)
        hq_ids.append(sid)
    for i in range(n_lq):
        sid = "lq_%04d" % i
        phantom = make_phantom(_derived_seed(seed, 1, i), size)
        lq = degrade(phantom, cfg, _derived_seed(seed, 2, i))
        save_image_png(os.path.join(root, split, "lq", sid + ".png"), lq)
        save_mask_png(os.path.join(root, split, "masks", sid + ".png"), phantom.mask)
        lq_ids.append(sid)

    manifest_path = os.path.join(root, "manifest.json")
    doc = {"version": GENERATOR_VERSION, "splits": {}}
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            doc = json.load(fh)
    doc["version"] = GENERATOR_VERSION
    doc.setdefault("splits", {})[split] = {
        "seed": int(seed),
        "size": int(size),
        "hq_ids": hq_ids,
        "lq_ids": lq_ids,
    }
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)

    return DatasetManifest(hq_ids, lq_ids, split, root)


def load_manifest(root, split):
    with open(os.path.join(root, "manifest.json")) as fh:
        doc = json.load(fh)
    if split not in doc.get("splits", {}):
        raise KeyError("split %r not present in manifest" % (split,))
    entry = doc["splits"][split]
    return DatasetManifest(list(entry["hq_ids"]), list(entry["lq_ids"]), split, root)
