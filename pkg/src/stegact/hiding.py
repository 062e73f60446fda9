"""Client-side hiding stage: embed a secret video into a cover video.

The reference hider is a deterministic additive scheme in the wavelet
domain: the secret's half-resolution ll band, with its per-clip per-channel
mean removed, is added (scaled by `strength`) to the cover's high-frequency
bands. The cover's ll band is left untouched, so the stego clip keeps the
cover's coarse appearance; removing the payload DC keeps the distortion
small enough for >= 35 dB PSNR at the default strength.

Any object with a compatible ``embed(cover, secret) -> StegoPair`` method
and a ``hider_id`` can be dropped into the training pipeline in place of
the reference hider (adapter seam for external hiding networks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, DimensionError
from .wavelet import dwt_spatial, idwt_spatial

DEFAULT_BAND_TARGETS = ("lh", "hl", "hh")


@dataclass
class HiderConfig:
    """Additive hider settings.

    strength 0 is allowed and degenerates to an identity hider (useful as a
    baseline); extraction requires strength > 0. Negative strength is
    rejected outright.
    """

    strength: float = 0.05
    band_targets: tuple[str, ...] = DEFAULT_BAND_TARGETS

    def __post_init__(self):
        if self.strength < 0:
            raise ConfigError(f"hider strength must be >= 0, got {self.strength}")
        if not self.band_targets:
            raise ConfigError("band_targets must be non-empty")
        for b in self.band_targets:
            if b not in DEFAULT_BAND_TARGETS:
                raise ConfigError(f"band target must be one of {DEFAULT_BAND_TARGETS}, got {b!r}")


@dataclass
class StegoPair:
    cover: torch.Tensor
    secret: torch.Tensor
    stego: torch.Tensor
    hider_id: str


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {tuple(a.shape)} vs {tuple(b.shape)} differ")


class WaveletAdditiveHider:
    """Reference hider: stego_band = cover_band + strength * payload(secret),
    with payload = ll(secret) minus its per-clip per-channel mean."""

    def __init__(self, cfg: HiderConfig | None = None):
        self.cfg = cfg or HiderConfig()

    @property
    def hider_id(self) -> str:
        bands = "".join(self.cfg.band_targets)
        return f"wavelet-additive(strength={self.cfg.strength},bands={bands})"

    def state_fingerprint(self) -> str:
        # The hider carries no trainable state; the id is the full state.
        return self.hider_id

    def payload(self, secret: torch.Tensor) -> torch.Tensor:
        """DC-removed coarse band of the secret; zero for constant secrets."""
        ll = dwt_spatial(secret).ll
        return ll - ll.mean(dim=(-4, -3, -2), keepdim=True)

    def embed(self, cover: torch.Tensor, secret: torch.Tensor, clamp: bool = True) -> StegoPair:
        _check_same_shape(cover, secret, "embed(cover, secret)")
        payload = self.payload(secret)
        bands = dwt_spatial(cover)
        for b in self.cfg.band_targets:
            setattr(bands, b, bands.band(b) + self.cfg.strength * payload)
        stego = idwt_spatial(bands)
        if clamp:
            stego = stego.clamp(0.0, 1.0)
        return StegoPair(cover=cover, secret=secret, stego=stego, hider_id=self.hider_id)

    def extract_with_cover(self, stego: torch.Tensor, cover: torch.Tensor) -> torch.Tensor:
        """Recover the embedded payload (the secret's DC-removed ll band),
        averaging over the target bands. Exact off the clamp-saturation set."""
        if self.cfg.strength <= 0:
            raise ConfigError("extraction needs strength > 0")
        _check_same_shape(stego, cover, "extract_with_cover(stego, cover)")
        sb = dwt_spatial(stego)
        cb = dwt_spatial(cover)
        parts = [(sb.band(b) - cb.band(b)) / self.cfg.strength for b in self.cfg.band_targets]
        return torch.stack(parts).mean(dim=0)


class IdentityHider:
    """Mock hider returning the secret unchanged; exercises the adapter seam."""

    hider_id = "identity"

    def state_fingerprint(self) -> str:
        return self.hider_id

    def embed(self, cover: torch.Tensor, secret: torch.Tensor, clamp: bool = True) -> StegoPair:
        _check_same_shape(cover, secret, "embed(cover, secret)")
        return StegoPair(cover=cover, secret=secret, stego=secret, hider_id=self.hider_id)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB for peak value 1; inf for identical inputs."""
    _check_same_shape(a, b, "psnr(a, b)")
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
