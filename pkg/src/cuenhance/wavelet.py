"""Single-level orthonormal 2-D Haar transform and high-frequency band extraction.

Operates on NCHW tensors. The orthonormal convention (1-D filter taps
1/sqrt(2), +-1/sqrt(2)) makes the transform energy-preserving, so loss values
built on the bands do not change scale with image resolution.
"""

from dataclasses import dataclass
from typing import NamedTuple

import torch


class HaarBands(NamedTuple):
    """One low-pass and three high-pass bands, each (B, C, H/2, W/2)."""

    ll: torch.Tensor
    lh_vertical: torch.Tensor
    hl_horizontal: torch.Tensor
    hh_diagonal: torch.Tensor


@dataclass(frozen=True)
class DirectionMask:
    """Selects which high-frequency bands participate in a loss."""

    use_vertical: bool = True
    use_horizontal: bool = True
    use_diagonal: bool = True

    def any(self) -> bool:
        return self.use_vertical or self.use_horizontal or self.use_diagonal


def _check_nchw_even(x: torch.Tensor) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected NCHW tensor, got shape {tuple(x.shape)}")
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ValueError(f"H and W must be even, got {tuple(x.shape[-2:])}")


def haar_dwt(x: torch.Tensor) -> HaarBands:
    """Single-level orthonormal Haar analysis.

    Per 2x2 block [[a, b], [c, d]] the bands are
    ll = (a+b+c+d)/2, lh_vertical = (a+b-c-d)/2 (row difference),
    hl_horizontal = (a-b+c-d)/2 (column difference), hh = (a-b-c+d)/2.
    """
    _check_nchw_even(x)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return HaarBands(ll, lh, hl, hh)


def haar_idwt(bands: HaarBands) -> torch.Tensor:
    """Exact inverse of :func:`haar_dwt`."""
    ll, lh, hl, hh = bands
    shape = ll.shape
    for t in (lh, hl, hh):
        if t.shape != shape:
            raise ValueError("band shapes are inconsistent")
    a = (ll + lh + hl + hh) * 0.5
    b = (ll + lh - hl - hh) * 0.5
    c = (ll - lh + hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    out = ll.new_empty(*shape[:-2], shape[-2] * 2, shape[-1] * 2)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


def hf_extract(x: torch.Tensor, mask: DirectionMask = DirectionMask()) -> torch.Tensor:
    """Concatenate the selected high-frequency bands along the channel axis.

    Band order is (vertical, horizontal, diagonal). Output has
    C * n_selected channels at half resolution; constant inputs map to zero.
    """
    if not mask.any():
        raise ValueError("at least one direction must be selected")
    bands = haar_dwt(x)
    parts = []
    if mask.use_vertical:
        parts.append(bands.lh_vertical)
    if mask.use_horizontal:
        parts.append(bands.hl_horizontal)
    if mask.use_diagonal:
        parts.append(bands.hh_diagonal)
    return torch.cat(parts, dim=1)
