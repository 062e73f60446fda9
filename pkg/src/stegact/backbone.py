"""Per-sub-band 3D residual backbone (ResNet3D-18 shape, configurable width).

Internally tensors follow the torch convolution layout (B, C, T, H, W);
the rest of the package converts from channel-last media layout at the
module boundary. Each of the four stages halves the spatial size, and
stages 2-4 also halve the temporal size, so the stage-n feature map of a
band input (H/2, W/2) has spatial size H / 2^(n+1) -- exactly the shape of
the level-n promotion targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import DimensionError


@dataclass
class BackboneConfig:
    base_width: int = 16
    in_channels: int = 3
    spatial_strides: tuple[int, ...] = (2, 2, 2, 2)
    temporal_strides: tuple[int, ...] = (1, 2, 2, 2)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2, 2)

    def __post_init__(self):
        for s in tuple(self.spatial_strides) + tuple(self.temporal_strides):
            if s not in (1, 2):
                raise ValueError(f"strides must be 1 or 2, got {s}")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.base_width * (2**n) for n in range(len(self.spatial_strides)))

    @property
    def spatial_factor(self) -> int:
        return math.prod(self.spatial_strides)

    @property
    def temporal_factor(self) -> int:
        return math.prod(self.temporal_strides)

    def temporal_lengths(self, t: int) -> list[int]:
        """Stage output lengths T_n for an input of T frames."""
        out = []
        for n in range(len(self.temporal_strides)):
            t //= self.temporal_strides[n]
            out.append(t)
        return out


@dataclass
class BranchFeatures:
    """Stage outputs of one branch, channel-first (B, C_n, T_n, H_n, W_n)."""

    stages: list[torch.Tensor]
    band: str = ""

    @property
    def final(self) -> torch.Tensor:
        return self.stages[-1]


class BasicBlock3d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: tuple[int, int, int]):
        super().__init__()
        self.conv1 = nn.Conv3d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(out_ch)
        self.conv2 = nn.Conv3d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != (1, 1, 1) or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv3d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm3d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class Branch(nn.Module):
    """One sub-band analysis branch: stem plus four residual stages."""

    def __init__(self, cfg: BackboneConfig, band: str = ""):
        super().__init__()
        self.cfg = cfg
        self.band = band
        w = cfg.base_width
        self.stem = nn.Sequential(
            nn.Conv3d(cfg.in_channels, w, 3, stride=1, padding=1, bias=False),
            nn.BatchNorm3d(w),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = w
        for n, out_ch in enumerate(cfg.stage_channels):
            stride = (cfg.temporal_strides[n], cfg.spatial_strides[n], cfg.spatial_strides[n])
            blocks = [BasicBlock3d(in_ch, out_ch, stride)]
            for _ in range(cfg.blocks_per_stage[n] - 1):
                blocks.append(BasicBlock3d(out_ch, out_ch, (1, 1, 1)))
            stages.append(nn.Sequential(*blocks))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    def check_input(self, t: int, h: int, w: int) -> None:
        sf, tf = self.cfg.spatial_factor, self.cfg.temporal_factor
        problems = []
        if t % tf != 0:
            problems.append(f"time {t} not divisible by {tf} (largest legal <= {t} is {(t // tf) * tf})")
        if h % sf != 0:
            problems.append(f"height {h} not divisible by {sf} (largest legal <= {h} is {(h // sf) * sf})")
        if w % sf != 0:
            problems.append(f"width {w} not divisible by {sf} (largest legal <= {w} is {(w // sf) * sf})")
        if problems:
            raise DimensionError("; ".join(problems))

    def forward(self, x: torch.Tensor) -> BranchFeatures:
        """x: (B, C, T, H', W') band input; returns all four stage outputs."""
        if x.dim() != 5:
            raise DimensionError(f"branch input must be (B, C, T, H, W), got shape {tuple(x.shape)}")
        self.check_input(x.shape[2], x.shape[3], x.shape[4])
        feats = []
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
            feats.append(out)
        return BranchFeatures(stages=feats, band=self.band)


def build_branch(cfg: BackboneConfig, seed: int, band: str = "") -> Branch:
    """Construct a branch with seed-deterministic initial parameters."""
    torch.manual_seed(seed)
    return Branch(cfg, band=band)
