"""Orthonormal Haar wavelet transforms for video tensors.

Media tensors are channel-last: a clip is (T, H, W, C), a batch is
(B, T, H, W, C). Spatial transforms act on the height/width axes (-3, -2),
temporal transforms on a caller-chosen axis. All transforms are plain torch
ops, so they are differentiable and usable inside loss graphs.

The orthonormal normalization makes every transform energy preserving
(Parseval) and exactly invertible, which the round-trip and energy tests
rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import DimensionError

SQRT2 = math.sqrt(2.0)

HIGH_BANDS = ("lh", "hl", "hh")
ALL_BANDS = ("ll", "lh", "hl", "hh")


@dataclass
class SubBandSet:
    """The four spatial sub-bands of one decomposition level.

    ll carries the coarse content; lh/hl/hh carry detail along width,
    height and both diagonals. All four share one shape, with height and
    width halved relative to the source.
    """

    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor
    level: int = 0

    def band(self, name: str) -> torch.Tensor:
        if name not in ALL_BANDS:
            raise KeyError(f"unknown band {name!r}")
        return getattr(self, name)

    def bands(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in ALL_BANDS}


@dataclass
class TemporalBands:
    """Low/high 1D Haar coefficients along the time axis, each of length T/2."""

    low: torch.Tensor
    high: torch.Tensor


def _check_even(size: int, axis_name: str) -> None:
    if size % 2 != 0:
        raise DimensionError(f"axis {axis_name} has odd length {size}; Haar transform needs an even size")


def dwt_spatial(x: torch.Tensor) -> SubBandSet:
    """One level of 2D orthonormal Haar over the (-3, -2) = (height, width) axes.

    On each 2x2 block [[a, b], [c, d]]:
        ll = (a+b+c+d)/2   lh = (a-b+c-d)/2
        hl = (a+b-c-d)/2   hh = (a-b-c+d)/2
    """
    if x.dim() < 3:
        raise DimensionError(f"expected at least 3 dims (..., H, W, C), got shape {tuple(x.shape)}")
    _check_even(x.shape[-3], "height")
    _check_even(x.shape[-2], "width")
    a = x[..., 0::2, 0::2, :]
    b = x[..., 0::2, 1::2, :]
    c = x[..., 1::2, 0::2, :]
    d = x[..., 1::2, 1::2, :]
    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return SubBandSet(ll=ll, lh=lh, hl=hl, hh=hh, level=1)


def idwt_spatial(bands: SubBandSet) -> torch.Tensor:
    """Exact inverse of dwt_spatial."""
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    for name, t in (("lh", lh), ("hl", hl), ("hh", hh)):
        if t.shape != ll.shape:
            raise DimensionError(
                f"band {name} shape {tuple(t.shape)} does not match ll shape {tuple(ll.shape)}"
            )
    h, w = ll.shape[-3], ll.shape[-2]
    out_shape = list(ll.shape)
    out_shape[-3] = 2 * h
    out_shape[-2] = 2 * w
    out = ll.new_zeros(out_shape)
    out[..., 0::2, 0::2, :] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2, :] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 0::2, :] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 1::2, :] = (ll - lh - hl + hh) / 2
    return out


def dwt_temporal(x: torch.Tensor, axis: int = 0) -> TemporalBands:
    """One level of 1D orthonormal Haar along `axis` (default: leading time axis).

    Over each frame pair: low = (f0+f1)/sqrt(2), high = (f0-f1)/sqrt(2).
    """
    _check_even(x.shape[axis], f"time (axis {axis})")
    xm = x.movedim(axis, 0)
    even = xm[0::2]
    odd = xm[1::2]
    low = (even + odd) / SQRT2
    high = (even - odd) / SQRT2
    return TemporalBands(low=low.movedim(0, axis), high=high.movedim(0, axis))


def idwt_temporal(bands: TemporalBands, axis: int = 0) -> torch.Tensor:
    """Exact inverse of dwt_temporal."""
    if bands.low.shape != bands.high.shape:
        raise DimensionError(
            f"temporal band shapes differ: {tuple(bands.low.shape)} vs {tuple(bands.high.shape)}"
        )
    low = bands.low.movedim(axis, 0)
    high = bands.high.movedim(axis, 0)
    f0 = (low + high) / SQRT2
    f1 = (low - high) / SQRT2
    half = low.shape[0]
    out = torch.stack((f0, f1), dim=1).reshape(2 * half, *low.shape[1:])
    return out.movedim(0, axis)


def max_decomposition_levels(h: int, w: int) -> int:
    """How many spatial Haar levels the given height/width admit."""
    levels = 0
    while h % 2 == 0 and w % 2 == 0 and h > 0 and w > 0:
        levels += 1
        h //= 2
        w //= 2
    return levels


def multilevel_dwt(x: torch.Tensor, levels: int) -> list[SubBandSet]:
    """Repeated spatial Haar decomposition, each level transforming the previous ll.

    Returns `levels` entries; the 1-based level-n entry holds bands of spatial
    shape (H / 2^n, W / 2^n) relative to the input.
    """
    if levels < 1:
        raise DimensionError(f"levels must be >= 1, got {levels}")
    h, w = x.shape[-3], x.shape[-2]
    legal = max_decomposition_levels(h, w)
    if levels > legal:
        raise DimensionError(
            f"cannot run {levels} levels on spatial size ({h}, {w}); maximum legal level count is {legal}"
        )
    out: list[SubBandSet] = []
    current = x
    for n in range(1, levels + 1):
        bands = dwt_spatial(current)
        bands.level = n
        out.append(bands)
        current = bands.ll
    return out


def energy(t: torch.Tensor) -> float:
    """Sum of squared coefficients, accumulated in float64."""
    return float(torch.sum(t.double() ** 2).item())
