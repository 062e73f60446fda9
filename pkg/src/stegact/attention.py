"""Cross-band difference attention over per-band temporal token sequences.

Token sequences are (..., T, d) with one token per retained time step
(stage-4 features pooled over space). Each high band gets a residual
self-attention term plus a subtracted cross-attention term whose query
comes from the low band, which filters cover content that leaks into the
high bands. Queries and keys are position-encoded; one embedding is shared
by the three high bands, the low band has its own.

The position embedding is rotary with learnable additive offsets on the
cosine/sine terms: at zero offsets it is exactly the standard rotary
embedding (attention scores depend on relative position only), and the
offsets let training shift absolute temporal landmarks.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError

PE_MODES = ("none", "absolute", "rope", "rotary_offset")


class RotaryOffsetEmbedding(nn.Module):
    """Position embedding for queries/keys, selectable between no encoding,
    learned absolute, plain rotary, and rotary with learnable offsets."""

    def __init__(self, max_len: int, dim: int, mode: str = "rotary_offset", base: float = 10000.0):
        super().__init__()
        if mode not in PE_MODES:
            raise ConfigError(f"position embedding mode must be one of {PE_MODES}, got {mode!r}")
        if dim % 2 != 0:
            raise DimensionError(f"token dim must be even, got {dim}")
        self.mode = mode
        self.dim = dim
        self.max_len = max_len
        half = dim // 2
        # angles[t, k] = t / base^(2k / dim), the standard geometric schedule
        pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
        freqs = base ** (-torch.arange(half, dtype=torch.float32) * 2.0 / dim)
        self.register_buffer("angles", pos * freqs.unsqueeze(0))
        if mode == "rotary_offset":
            self.eps_cos = nn.Parameter(torch.zeros(max_len, half))
            self.eps_sin = nn.Parameter(torch.zeros(max_len, half))
        elif mode == "absolute":
            self.pos_embed = nn.Parameter(torch.zeros(max_len, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected token dim {self.dim}, got {x.shape[-1]}")
        t = x.shape[-2]
        if t > self.max_len:
            raise DimensionError(f"sequence length {t} exceeds embedding table size {self.max_len}")
        if self.mode == "none":
            return x
        if self.mode == "absolute":
            return x + self.pos_embed[:t]
        half = self.dim // 2
        u, v = x[..., :half], x[..., half:]
        cos = torch.cos(self.angles[:t])
        sin = torch.sin(self.angles[:t])
        if self.mode == "rotary_offset":
            cos = cos + self.eps_cos[:t]
            sin = sin + self.eps_sin[:t]
        return torch.cat((u * cos - v * sin, u * sin + v * cos), dim=-1)


def scaled_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-head softmax attention; returns (output, attention weights)."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class AttentionProjections(nn.Module):
    """Bias-free linear query/key/value maps for one attention term."""

    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)


class CrossBandBlock(nn.Module):
    """out = x_b + SA(x_b) - strength * CA(x_low, x_b).

    Self-attention encodes query and key with the shared high-band
    embedding; the cross term takes its query from the low-band sequence
    (low-band embedding) and key/value from the high band. With strength 0
    the cross term is skipped entirely, leaving the pure residual
    self-attention path.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.sa = AttentionProjections(dim)
        self.ca = AttentionProjections(dim)

    def forward(
        self,
        x_low: torch.Tensor,
        x_band: torch.Tensor,
        e_low: RotaryOffsetEmbedding,
        e_band: RotaryOffsetEmbedding,
        strength: float,
        return_weights: bool = False,
    ):
        if x_low.shape != x_band.shape:
            raise DimensionError(
                f"low/high token shapes differ: {tuple(x_low.shape)} vs {tuple(x_band.shape)}"
            )
        sa_out, sa_w = scaled_attention(
            e_band(self.sa.q(x_band)), e_band(self.sa.k(x_band)), self.sa.v(x_band)
        )
        out = x_band + sa_out
        ca_w = None
        if strength != 0.0:
            ca_out, ca_w = scaled_attention(
                e_low(self.ca.q(x_low)), e_band(self.ca.k(x_band)), self.ca.v(x_band)
            )
            out = out - strength * ca_out
        if return_weights:
            return out, {"self": sa_w, "cross": ca_w}
        return out


class LowBandBlock(nn.Module):
    """Residual self-attention for the low band: x + SA(x) with the low-band embedding."""

    def __init__(self, dim: int):
        super().__init__()
        self.sa = AttentionProjections(dim)

    def forward(
        self,
        x: torch.Tensor,
        e_low: RotaryOffsetEmbedding,
        return_weights: bool = False,
    ):
        sa_out, sa_w = scaled_attention(
            e_low(self.sa.q(x)), e_low(self.sa.k(x)), self.sa.v(x)
        )
        out = x + sa_out
        if return_weights:
            return out, {"self": sa_w, "cross": None}
        return out
