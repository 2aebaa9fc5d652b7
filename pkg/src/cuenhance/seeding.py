"""Deterministic seeding helpers shared by training and the CLI."""

import random

import numpy as np
import torch


def seed_all(seed, deterministic=False):
    """Seed python, numpy and torch; optionally force deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def rng_for(seed, *key):
    """Independent numpy generator for a (seed, key...) purpose."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in key]))


def torch_dtype(precision):
    if str(precision) in ("32", "float32"):
        return torch.float32
    if str(precision) in ("64", "float64"):
        return torch.float64
    raise ValueError("precision must be 32 or 64")
