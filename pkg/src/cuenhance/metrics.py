"""No-reference quality metrics and segmentation scores.

snr_r treats the local box mean (radius r, window clipped at borders) as
signal and the remainder as noise. avg_gradient uses forward differences,
entropy a 256-bin histogram. Segmentation scores come from the thresholded
confusion matrix plus a rank-based AUC.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

STANDARD_RADII = (3, 5, 7, 9)


def _to_hw(img):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError("expected a single-channel image")
    return a


def _box_mean(a, r):
    """Mean over the (2r+1)^2 window, clipped at the image border."""
    h, w = a.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    total = (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    )
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return total / count


def snr_r(img, r):
    """Signal-to-noise ratio in dB with the box mean of radius r as signal."""
    a = _to_hw(img)
    if int(r) not in STANDARD_RADII:
        warnings.warn("nonstandard radius %r" % (r,), stacklevel=2)
    r = int(r)
    if min(a.shape) < 2 * r + 1:
        raise ValueError("image smaller than the filter window")
    signal = _box_mean(a, r)
    noise = a - signal
    den = float((noise**2).sum())
    if den < 1e-12:
        return 99.0
    return 10.0 * np.log10(float((signal**2).sum()) / den)


def avg_gradient(img):
    """Mean of sqrt((dx^2 + dy^2) / 2) over forward differences."""
    a = _to_hw(img)
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError("need at least 2x2 pixels")
    dx = a[:-1, 1:] - a[:-1, :-1]
    dy = a[1:, :-1] - a[:-1, :-1]
    return float(np.sqrt((dx**2 + dy**2) / 2.0).mean())


def entropy(img):
    """Shannon entropy in bits of the 256-bin intensity histogram."""
    a = _to_hw(img)
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("image must lie in [0, 1]")
    bins = np.floor(a * np.nextafter(256.0, 0.0)).astype(np.int64)
    p = np.bincount(bins.ravel(), minlength=256) / bins.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


class SegScores(NamedTuple):
    dice: float
    acc: float
    sen: float
    auc: float
    g_mean: float


def seg_scores(pred_logits, gt_mask, threshold=0.5):
    """Dice/ACC/SEN/AUC/G-Mean of a logit map against a binary mask.

    threshold applies to the sigmoid probability. Conventions for degenerate
    masks: both-empty Dice is 1, one-empty Dice is 0, vacuous SEN/SPE are 1,
    single-class AUC is 0.5.
    """
    logits = np.asarray(pred_logits, dtype=np.float64).ravel()
    gt = np.asarray(gt_mask).ravel()
    if logits.shape != gt.shape:
        raise ValueError("prediction and mask shapes differ")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground truth must be binary")
    gt = gt.astype(bool)

    prob = 1.0 / (1.0 + np.exp(-logits))
    pred = prob >= threshold
    tp = float(np.sum(pred & gt))
    fp = float(np.sum(pred & ~gt))
    fn = float(np.sum(~pred & gt))
    tn = float(np.sum(~pred & ~gt))

    if tp + fp + fn == 0:
        dice = 1.0
    elif tp + fp == 0 or tp + fn == 0:
        dice = 0.0
    else:
        dice = 2.0 * tp / (2.0 * tp + fp + fn)
    acc = (tp + tn) / gt.size
    sen = tp / (tp + fn) if tp + fn > 0 else 1.0
    spe = tn / (tn + fp) if tn + fp > 0 else 1.0

    n_pos, n_neg = int(gt.sum()), int((~gt).sum())
    if n_pos == 0 or n_neg == 0:
        auc = 0.5
    else:
        ranks = rankdata(logits)
        auc = (ranks[gt].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return SegScores(dice, acc, sen, float(auc), float(np.sqrt(sen * spe)))


@dataclass
class MetricReport:
    """Per-image metric table with a mean/std summary and run metadata."""

    columns: list
    rows: dict = field(default_factory=dict)  # id -> list of values
    metadata: dict = field(default_factory=dict)

    def add(self, sample_id, values):
        if len(values) != len(self.columns):
            raise ValueError("row length does not match columns")
        vals = [float(v) for v in values]
        if not all(np.isfinite(vals)):
            raise ValueError("metric values must be finite")
        self.rows[sample_id] = vals

    def summary(self):
        table = np.asarray(list(self.rows.values()), dtype=np.float64)
        return {
            name: (float(table[:, i].mean()), float(table[:, i].std()))
            for i, name in enumerate(self.columns)
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + list(self.columns))
            for sid in sorted(self.rows):
                writer.writerow([sid] + ["%.10g" % v for v in self.rows[sid]])

    def write_summary_json(self, path):
        doc = {"metadata": self.metadata, "n": len(self.rows), "metrics": {}}
        for name, (mu, sd) in self.summary().items():
            doc["metrics"][name] = {"mean": mu, "std": sd}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
