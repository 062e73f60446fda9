"""Training-time promotion of secret spatio-temporal structure.

From the secret video we build multi-level wavelet targets: per level n and
high band b, a spatial target (the level-n band of the secret's coarse
content, temporally max-pooled down to the backbone's stage-n length T_n)
and a temporal target (the temporal-Haar high band of the same signal,
pooled by the same factor). Branch stage features are projected to 3
channels by a pointwise head and matched to these targets with MSE.

Magnitude mode (default) pools absolute coefficient values, so spatial
targets are non-negative and reachable by ReLU-gated projections; signed
mode (for ablations) keeps raw coefficients and expects heads built with
the activation flag off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import DimensionError
from .wavelet import HIGH_BANDS, dwt_spatial, dwt_temporal, multilevel_dwt

# Incremented on every target construction; evaluation must never bump it.
_TARGET_BUILD_CALLS = 0


def target_build_count() -> int:
    return _TARGET_BUILD_CALLS


def reset_target_build_count() -> None:
    global _TARGET_BUILD_CALLS
    _TARGET_BUILD_CALLS = 0


@dataclass
class PromotionTargets:
    """spatial[n][b] has time length T_n, temporal[n][b] has T_n/2 (1-based levels)."""

    spatial: dict[int, dict[str, torch.Tensor]] = field(default_factory=dict)
    temporal: dict[int, dict[str, torch.Tensor]] = field(default_factory=dict)

    @property
    def levels(self) -> int:
        return len(self.spatial)


def _pool_time(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Non-overlapping max pooling along the time axis (-4 of channel-last video)."""
    if factor == 1:
        return x
    xm = x.movedim(-4, 0)
    t = xm.shape[0]
    if t % factor != 0:
        raise DimensionError(f"time length {t} not divisible by pooling factor {factor}")
    pooled = xm.reshape(t // factor, factor, *xm.shape[1:]).amax(dim=1)
    return pooled.movedim(0, -4)


def build_targets(
    secret: torch.Tensor,
    levels: int,
    temporal_lengths: list[int],
    magnitude_mode: bool = True,
) -> PromotionTargets:
    """Construct the per-level promotion targets from a secret clip or batch.

    `secret` is channel-last (..., T, H, W, C) with H, W divisible by
    2^(levels+1); `temporal_lengths` are the backbone stage lengths T_n.
    """
    global _TARGET_BUILD_CALLS
    _TARGET_BUILD_CALLS += 1
    if len(temporal_lengths) != levels:
        raise DimensionError(
            f"need one temporal length per level: got {len(temporal_lengths)} for {levels} levels"
        )
    t, h, w = secret.shape[-4], secret.shape[-3], secret.shape[-2]
    need = 2 ** (levels + 1)
    if h % need != 0 or w % need != 0:
        raise DimensionError(
            f"secret spatial size ({h}, {w}) must be divisible by 2^(levels+1) = {need}"
        )
    for n, tn in enumerate(temporal_lengths, start=1):
        if tn < 2 or tn % 2 != 0:
            raise DimensionError(f"level {n}: temporal length {tn} must be even and >= 2")
        if t % tn != 0:
            raise DimensionError(f"level {n}: time {t} not divisible by stage length {tn}")

    coarse = dwt_spatial(secret).ll
    pyramid = multilevel_dwt(coarse, levels)
    targets = PromotionTargets()
    for n, bands in enumerate(pyramid, start=1):
        factor = t // temporal_lengths[n - 1]
        targets.spatial[n] = {}
        targets.temporal[n] = {}
        for b in HIGH_BANDS:
            band = bands.band(b)
            high = dwt_temporal(band, axis=-4).high
            if magnitude_mode:
                band = band.abs()
                high = high.abs()
            targets.spatial[n][b] = _pool_time(band, factor)
            targets.temporal[n][b] = _pool_time(high, factor)
    return targets


class BandProjection(nn.Module):
    """Pointwise projection of a stage feature map to 3 channels.

    1x1x1 convolution, batch normalization, and (with the activation flag
    on) ReLU. Operates channel-first (B, C, T, H, W) -> (B, 3, T, H, W).
    """

    def __init__(self, in_channels: int, activation: bool = True):
        super().__init__()
        self.conv = nn.Conv3d(in_channels, 3, kernel_size=1)
        self.norm = nn.BatchNorm3d(3)
        self.activation = activation

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[1] != self.conv.in_channels:
            raise DimensionError(
                f"projection expects {self.conv.in_channels} channels, got {z.shape[1]}"
            )
        out = self.norm(self.conv(z))
        return torch.relu(out) if self.activation else out


class ProjectionHeads(nn.Module):
    """One BandProjection per (level, band), optionally shared across bands."""

    def __init__(self, stage_channels: list[int], activation: bool = True, share_bands: bool = False):
        super().__init__()
        self.levels = len(stage_channels)
        self.share_bands = share_bands
        heads = {}
        for n, c in enumerate(stage_channels, start=1):
            if share_bands:
                heads[f"level{n}"] = BandProjection(c, activation=activation)
            else:
                for b in HIGH_BANDS:
                    heads[f"level{n}_{b}"] = BandProjection(c, activation=activation)
        self.heads = nn.ModuleDict(heads)

    def head(self, level: int, band: str) -> BandProjection:
        key = f"level{level}" if self.share_bands else f"level{level}_{band}"
        return self.heads[key]

    def project(self, stage_features: dict[str, list[torch.Tensor]]) -> dict[int, dict[str, torch.Tensor]]:
        """Project per-band stage features to channel-last (B, T_n, H, W, 3) maps.

        `stage_features[b][n-1]` is the stage-n channel-first map for band b.
        """
        out: dict[int, dict[str, torch.Tensor]] = {}
        for n in range(1, self.levels + 1):
            out[n] = {}
            for b in HIGH_BANDS:
                z = stage_features[b][n - 1]
                m = self.head(n, b)(z)
                out[n][b] = m.permute(0, 2, 3, 4, 1)
        return out


def promotion_loss(
    targets: PromotionTargets,
    projections: dict[int, dict[str, torch.Tensor]],
    spatial_weight: float,
    temporal_weight: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """MSE matching of projections against targets.

    Returns (l_spatial, l_temporal, combined) where the first two are the
    plain sums over bands and levels and
    combined = spatial_weight * l_spatial + temporal_weight * l_temporal.
    """
    device = None
    for n in projections:
        for b in projections[n]:
            device = projections[n][b].device
            break
        break
    zero = torch.zeros((), device=device)
    l_spatial = zero.clone()
    l_temporal = zero.clone()
    for n in sorted(targets.spatial):
        for b in HIGH_BANDS:
            if n not in projections or b not in projections[n]:
                raise DimensionError(f"missing projection for level {n}, band {b}")
            m_s = projections[n][b]
            g_s = targets.spatial[n][b]
            if m_s.shape[-4:] != g_s.shape[-4:]:
                raise DimensionError(
                    f"level {n} band {b}: projection shape {tuple(m_s.shape)} vs "
                    f"target shape {tuple(g_s.shape)}"
                )
            l_spatial = l_spatial + torch.mean((m_s - g_s) ** 2)
            m_t = dwt_temporal(m_s, axis=-4).high
            g_t = targets.temporal[n][b]
            if m_t.shape[-4:] != g_t.shape[-4:]:
                raise DimensionError(
                    f"level {n} band {b}: temporal projection shape {tuple(m_t.shape)} vs "
                    f"target shape {tuple(g_t.shape)}"
                )
            l_temporal = l_temporal + torch.mean((m_t - g_t) ** 2)
    combined = spatial_weight * l_spatial + temporal_weight * l_temporal
    return l_spatial, l_temporal, combined
