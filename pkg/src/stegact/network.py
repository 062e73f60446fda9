"""The sub-band analysis network: wavelet front end, per-band residual
branches, cross-band attention, weighted aggregation, classifier.

The forward path for inference consumes only the stego clip. When a secret
clip is supplied (training with promotion losses), the forward pass
additionally returns the pointwise projections of the high-band stage
features; target construction and the loss itself live in the promotion
and training modules.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .attention import CrossBandBlock, LowBandBlock, RotaryOffsetEmbedding
from .backbone import BackboneConfig, Branch, BranchFeatures
from .errors import ConfigError, DimensionError
from .promotion import ProjectionHeads
from .wavelet import ALL_BANDS, HIGH_BANDS, dwt_spatial

SINGLETON_GROUPING = (("ll",), ("lh",), ("hl",), ("hh",))


@dataclass
class GroupPlan:
    """Resolved branch plan for a sub-band partition."""

    groups: tuple[tuple[str, ...], ...]
    band_to_group: dict[str, int]
    ll_group: int
    cross_enabled: bool

    @property
    def group_channels(self) -> tuple[int, ...]:
        return tuple(3 * len(g) for g in self.groups)


def group_branches(grouping) -> GroupPlan:
    """Validate a partition of the four bands and derive the branch plan.

    Cross-band attention runs only when the partition separates the ll band
    into its own group; otherwise every group keeps self-attention only.
    """
    groups = tuple(tuple(g) for g in grouping)
    seen: list[str] = []
    for g in groups:
        if not g:
            raise ConfigError("grouping contains an empty group")
        for b in g:
            if b not in ALL_BANDS:
                raise ConfigError(f"unknown band {b!r} in grouping")
            seen.append(b)
    if sorted(seen) != sorted(ALL_BANDS):
        raise ConfigError(
            f"grouping must partition {ALL_BANDS}; got bands {tuple(seen)}"
        )
    band_to_group = {b: gi for gi, g in enumerate(groups) for b in g}
    ll_group = band_to_group["ll"]
    cross_enabled = len(groups) > 1 and groups[ll_group] == ("ll",)
    return GroupPlan(
        groups=groups,
        band_to_group=band_to_group,
        ll_group=ll_group,
        cross_enabled=cross_enabled,
    )


@dataclass
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    num_classes: int = 4
    levels: int = 4
    diff_strength: float = 0.2
    grouping: tuple[tuple[str, ...], ...] = SINGLETON_GROUPING
    pe_mode: str = "rotary_offset"
    share_branch_weights: bool = False
    signed_targets: bool = False
    share_projection_bands: bool = False
    agg_hidden: int = 32
    band_conv_hidden: int = 8
    classifier_depth: int = 1
    max_tokens: int = 64

    def __post_init__(self):
        if self.diff_strength < 0:
            raise ConfigError(f"diff_strength must be >= 0, got {self.diff_strength}")
        if self.levels != len(self.backbone.spatial_strides):
            raise ConfigError(
                f"levels ({self.levels}) must match backbone stage count "
                f"({len(self.backbone.spatial_strides)})"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grouping"] = [list(g) for g in self.grouping]
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    band_weights: torch.Tensor
    projections: dict[int, dict[str, torch.Tensor]] | None = None
    band_tokens: dict[str, torch.Tensor] | None = None
    attention: dict[str, dict] | None = None


class BandAggregator(nn.Module):
    """Sigmoid-gated fusion of the four band token sequences.

    Temporal average pooling gives one vector per band; an MLP on their
    concatenation emits a weight per band; the weighted stack is fused by a
    two-layer 1x1 convolution over the band axis.
    """

    def __init__(self, dim: int, mlp_hidden: int, conv_hidden: int):
        super().__init__()
        self.weight_mlp = nn.Sequential(
            nn.Linear(4 * dim, mlp_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(mlp_hidden, 4),
        )
        self.fuse = nn.Sequential(
            nn.Conv1d(4, conv_hidden, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Conv1d(conv_hidden, 1, kernel_size=1),
        )

    def forward(self, band_tokens: dict[str, torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        for b in ALL_BANDS:
            if b not in band_tokens:
                raise DimensionError(f"aggregation is missing band {b!r}")
        vecs = torch.stack([band_tokens[b].mean(dim=-2) for b in ALL_BANDS], dim=1)  # (B, 4, d)
        weights = torch.sigmoid(self.weight_mlp(vecs.flatten(1)))  # (B, 4)
        fused = self.fuse(vecs * weights.unsqueeze(-1)).squeeze(1)  # (B, d)
        return fused, weights


class SubBandNet(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.plan = group_branches(cfg.grouping)
        channels = self.plan.group_channels
        if cfg.share_branch_weights:
            if len(set(channels)) != 1:
                raise ConfigError(
                    "share_branch_weights needs equal group channel counts, "
                    f"got {channels}"
                )
            shared = Branch(
                BackboneConfig(
                    base_width=cfg.backbone.base_width,
                    in_channels=channels[0],
                    spatial_strides=cfg.backbone.spatial_strides,
                    temporal_strides=cfg.backbone.temporal_strides,
                    blocks_per_stage=cfg.backbone.blocks_per_stage,
                ),
                band="shared",
            )
            self.branches = nn.ModuleList([shared])
            self._branch_of_group = [0] * len(self.plan.groups)
        else:
            self.branches = nn.ModuleList(
                Branch(
                    BackboneConfig(
                        base_width=cfg.backbone.base_width,
                        in_channels=ch,
                        spatial_strides=cfg.backbone.spatial_strides,
                        temporal_strides=cfg.backbone.temporal_strides,
                        blocks_per_stage=cfg.backbone.blocks_per_stage,
                    ),
                    band="+".join(g),
                )
                for g, ch in zip(self.plan.groups, channels)
            )
            self._branch_of_group = list(range(len(self.plan.groups)))

        dim = cfg.backbone.stage_channels[-1]
        self.token_dim = dim
        self.e_low = RotaryOffsetEmbedding(cfg.max_tokens, dim, mode=cfg.pe_mode)
        self.e_band = RotaryOffsetEmbedding(cfg.max_tokens, dim, mode=cfg.pe_mode)
        self.low_block = LowBandBlock(dim)
        self.high_blocks = nn.ModuleDict(
            {
                f"group{gi}": CrossBandBlock(dim)
                for gi in range(len(self.plan.groups))
                if gi != self.plan.ll_group
            }
        )
        self.heads = ProjectionHeads(
            list(cfg.backbone.stage_channels),
            activation=not cfg.signed_targets,
            share_bands=cfg.share_projection_bands,
        )
        self.aggregator = BandAggregator(dim, cfg.agg_hidden, cfg.band_conv_hidden)
        layers = []
        for _ in range(cfg.classifier_depth - 1):
            layers += [nn.Linear(dim, dim), nn.ReLU(inplace=True)]
        layers.append(nn.Linear(dim, cfg.num_classes))
        self.classifier = nn.Sequential(*layers)

    def branch(self, group_index: int) -> Branch:
        return self.branches[self._branch_of_group[group_index]]

    def forward(
        self,
        stego: torch.Tensor,
        secret: torch.Tensor | None = None,
        return_weights: bool = False,
    ) -> ForwardOutput:
        squeeze = stego.dim() == 4
        if squeeze:
            stego = stego.unsqueeze(0)
            secret = secret.unsqueeze(0) if secret is not None else None
        if stego.dim() != 5 or stego.shape[-1] != 3:
            raise DimensionError(
                f"stego must be (T, H, W, 3) or (B, T, H, W, 3), got {tuple(stego.shape)}"
            )
        if secret is not None and secret.shape != stego.shape:
            raise DimensionError(
                f"secret shape {tuple(secret.shape)} does not match stego {tuple(stego.shape)}"
            )

        bands = dwt_spatial(stego)
        group_feats: list[BranchFeatures] = []
        group_tokens: list[torch.Tensor] = []
        for gi, group in enumerate(self.plan.groups):
            x = torch.cat([bands.band(b) for b in group], dim=-1)
            x = x.permute(0, 4, 1, 2, 3).contiguous()  # (B, C, T, H', W')
            feats = self.branch(gi)(x)
            group_feats.append(feats)
            tokens = feats.final.mean(dim=(-2, -1)).transpose(1, 2)  # (B, T4, C4)
            group_tokens.append(tokens)

        strength = self.cfg.diff_strength if self.plan.cross_enabled else 0.0
        x_low = group_tokens[self.plan.ll_group]
        attention: dict[str, dict] = {}
        attended: list[torch.Tensor] = [None] * len(self.plan.groups)
        if return_weights:
            attended[self.plan.ll_group], attention["ll_group"] = self.low_block(
                x_low, self.e_low, return_weights=True
            )
        else:
            attended[self.plan.ll_group] = self.low_block(x_low, self.e_low)
        for gi in range(len(self.plan.groups)):
            if gi == self.plan.ll_group:
                continue
            block = self.high_blocks[f"group{gi}"]
            if return_weights:
                attended[gi], attention["+".join(self.plan.groups[gi])] = block(
                    x_low, group_tokens[gi], self.e_low, self.e_band, strength, return_weights=True
                )
            else:
                attended[gi] = block(x_low, group_tokens[gi], self.e_low, self.e_band, strength)

        band_tokens = {b: attended[self.plan.band_to_group[b]] for b in ALL_BANDS}
        fused, weights = self.aggregator(band_tokens)
        logits = self.classifier(fused)

        projections = None
        if secret is not None:
            stage_feats = {
                b: group_feats[self.plan.band_to_group[b]].stages for b in HIGH_BANDS
            }
            projections = self.heads.project(stage_feats)

        if squeeze:
            logits = logits.squeeze(0)
            weights = weights.squeeze(0)
        return ForwardOutput(
            logits=logits,
            band_weights=weights,
            projections=projections,
            band_tokens=band_tokens,
            attention=attention if return_weights else None,
        )


def build_network(cfg: NetworkConfig, seed: int) -> SubBandNet:
    """Construct a network with seed-deterministic initial parameters."""
    torch.manual_seed(seed)
    return SubBandNet(cfg)


def save_network(path, model: SubBandNet, extra_config: dict | None = None) -> None:
    from . import tensorio

    params = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    config = {"network": model.cfg.to_dict()}
    if extra_config:
        config.update(extra_config)
    tensorio.save_checkpoint(path, params, fingerprint=model.cfg.fingerprint(), config=config)


def load_network(path, cfg: NetworkConfig) -> SubBandNet:
    """Rebuild a network from a checkpoint; refuses a config fingerprint mismatch."""
    from . import tensorio

    params, _ = tensorio.load_checkpoint(path, expected_fingerprint=cfg.fingerprint())
    model = SubBandNet(cfg)
    state = {k: torch.from_numpy(v.copy()) for k, v in params.items()}
    model.load_state_dict(state)
    return model


def network_config_from_dict(d: dict) -> NetworkConfig:
    """Inverse of NetworkConfig.to_dict (used when loading checkpoints)."""
    bb = d["backbone"]
    backbone = BackboneConfig(
        base_width=bb["base_width"],
        in_channels=bb["in_channels"],
        spatial_strides=tuple(bb["spatial_strides"]),
        temporal_strides=tuple(bb["temporal_strides"]),
        blocks_per_stage=tuple(bb["blocks_per_stage"]),
    )
    rest = {k: v for k, v in d.items() if k not in ("backbone", "grouping")}
    return NetworkConfig(
        backbone=backbone,
        grouping=tuple(tuple(g) for g in d["grouping"]),
        **rest,
    )
