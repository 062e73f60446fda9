"""Synthetic desk-scale datasets, manifest-driven ingestion, clip sampling
and clip-consistent augmentation.

A dataset directory holds one binary tensor container per clip (or a
directory of numbered image frames for real footage) plus a
``manifest.jsonl`` with one record per video:

    {"path": ..., "label": int, "split": "train"|"val", "role": "secret"|"cover",
     "privacy": int}            # privacy only for synthetic secrets

The synthetic generator renders a colored soft-edged bar moving over a
static low-contrast textured background. The action class is the motion
law (translate / rotate / scale / oscillate); the privacy attribute is the
bar color index. Everything is deterministic per (seed, item) pair.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import tensorio
from .errors import ConfigError, DataError

MOTION_CLASSES = ("translate", "rotate", "scale", "oscillate")

# Bright saturated palette; every entry has a channel >= 0.85 while the
# background stays below 0.6, so a 0.7 threshold isolates the shape.
COLORS = np.array(
    [
        [0.95, 0.15, 0.15],
        [0.15, 0.95, 0.15],
        [0.20, 0.25, 0.95],
        [0.95, 0.90, 0.12],
        [0.90, 0.15, 0.90],
        [0.10, 0.90, 0.90],
    ],
    dtype=np.float32,
)


@dataclass
class ClipSpec:
    frames: int = 16
    skip: int = 4
    resize: tuple[int, int] = (32, 32)
    crop_scale: float = 0.8

    def __post_init__(self):
        if self.frames < 2 or self.frames % 2 != 0:
            raise ConfigError(f"frames must be even and >= 2, got {self.frames}")
        if self.skip < 1:
            raise ConfigError(f"skip must be >= 1, got {self.skip}")


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    frames: int = 16
    height: int = 32
    width: int = 32
    num_colors: int = 6
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(MOTION_CLASSES):
            raise ConfigError(
                f"num_classes must be in [2, {len(MOTION_CLASSES)}], got {self.num_classes}"
            )
        if not 2 <= self.num_colors <= len(COLORS):
            raise ConfigError(f"num_colors must be in [2, {len(COLORS)}], got {self.num_colors}")
        for name, v in (("height", self.height), ("width", self.width)):
            if v < 16 or v % 2 != 0:
                raise ConfigError(f"{name} must be even and >= 16, got {v}")
        if self.frames < 2 or self.frames % 2 != 0:
            raise ConfigError(f"frames must be even and >= 2, got {self.frames}")


def _soft_bar(h: int, w: int, cy: float, cx: float, half_len: float, half_wid: float, angle: float) -> np.ndarray:
    """Anti-aliased rotated-bar mask in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    ca, sa = math.cos(angle), math.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    d = np.maximum(np.abs(u) / half_len, np.abs(v) / half_wid)
    return 1.0 / (1.0 + np.exp(-8.0 * (1.0 - d)))


def _background(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Static smooth texture in roughly [0.32, 0.48] per channel."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    scale = max(spec.height, spec.width)
    bg = np.zeros((spec.height, spec.width, 3))
    for c in range(3):
        fy, fx = rng.uniform(0.4, 1.0, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        bg[..., c] = 0.4 + 0.08 * np.sin(2 * math.pi * (fy * yy + fx * xx) / scale + phase)
    return bg


def generate_clip(
    spec: SyntheticSpec, class_id: int, seed: int
) -> tuple[torch.Tensor, int, int]:
    """Render one secret clip; returns (clip (T,H,W,3) in [0,1], label, color index)."""
    if not 0 <= class_id < spec.num_classes:
        raise ConfigError(f"class_id {class_id} out of range for {spec.num_classes} classes")
    rng = np.random.default_rng([spec.seed, seed, class_id])
    h, w, t = spec.height, spec.width, spec.frames
    bg = _background(spec, rng)
    color_idx = int(rng.integers(0, spec.num_colors))
    color = COLORS[color_idx].astype(np.float64)

    half_len = rng.uniform(0.16, 0.20) * min(h, w)
    half_wid = half_len * rng.uniform(0.35, 0.5)
    margin = half_len + 3.0
    cy0 = rng.uniform(margin, h - margin)
    cx0 = rng.uniform(margin, w - margin)
    angle0 = rng.uniform(0, math.pi)
    motion = MOTION_CLASSES[class_id]

    if motion == "translate":
        heading = rng.uniform(0, 2 * math.pi)
        span = min(h, w) - 2 * margin
        step = min(rng.uniform(0.7, 0.95), 0.95 * span / max(t - 1, 1))
        vy, vx = step * math.sin(heading), step * math.cos(heading)
        # walk back the start so the full path stays inside the margins
        cy0 = min(max(cy0, margin + max(0.0, -vy * (t - 1))), h - margin - max(0.0, vy * (t - 1)))
        cx0 = min(max(cx0, margin + max(0.0, -vx * (t - 1))), w - margin - max(0.0, vx * (t - 1)))
    elif motion == "rotate":
        omega = rng.uniform(1.5, 2.0) * math.pi / t  # most of a full turn per clip
        omega *= rng.choice([-1.0, 1.0])
    elif motion == "scale":
        grow = rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 0.9)
    elif motion == "oscillate":
        periods = rng.uniform(1.6, 2.4)
        amp = min(rng.uniform(3.5, 5.5), max(1.0, (w - 2 * margin) / 2))
        phase = rng.uniform(0, 2 * math.pi)
        cx0 = min(max(cx0, margin + amp), w - margin - amp)

    frames = np.empty((t, h, w, 3), dtype=np.float64)
    for i in range(t):
        cy, cx, ang = cy0, cx0, angle0
        hl, hw_ = half_len, half_wid
        if motion == "translate":
            cy, cx = cy0 + vy * i, cx0 + vx * i
        elif motion == "rotate":
            ang = angle0 + omega * i
        elif motion == "scale":
            s = 1.0 + grow * (i / (t - 1) - 0.5)
            hl, hw_ = half_len * s, half_wid * s
        elif motion == "oscillate":
            cx = cx0 + amp * math.sin(2 * math.pi * periods * i / t + phase)
        mask = _soft_bar(h, w, cy, cx, hl, hw_, ang)[..., None]
        frames[i] = bg * (1.0 - mask) + color[None, None, :] * mask
    if spec.noise > 0:
        frames += rng.normal(0.0, spec.noise, size=frames.shape)
    clip = torch.from_numpy(np.clip(frames, 0.0, 1.0).astype(np.float32))
    return clip, class_id, color_idx


def generate_cover(spec: SyntheticSpec, seed: int) -> torch.Tensor:
    """Procedural moving-gradient cover clip, smooth in space and time."""
    rng = np.random.default_rng([spec.seed, seed, 991])
    h, w, t = spec.height, spec.width, spec.frames
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    scale = max(h, w)
    frames = np.empty((t, h, w, 3), dtype=np.float64)
    for c in range(3):
        fy, fx = rng.uniform(0.15, 0.65, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        omega = rng.uniform(-0.45, 0.45)
        for i in range(t):
            frames[i, ..., c] = 0.5 + 0.28 * np.sin(
                2 * math.pi * (fy * yy + fx * xx) / scale + phase + omega * i
            )
    return torch.from_numpy(np.clip(frames, 0.0, 1.0).astype(np.float32))


def shape_centroid(frame: np.ndarray | torch.Tensor, threshold: float = 0.7) -> tuple[float, float]:
    """Sub-pixel (cy, cx) of the bright shape, weighting pixels by how far
    their brightest channel exceeds the threshold; the generator keeps the
    background below the threshold in every channel."""
    arr = frame.numpy() if isinstance(frame, torch.Tensor) else np.asarray(frame)
    weight = np.clip(arr.max(axis=-1) - threshold, 0.0, None)
    total = weight.sum()
    if total <= 0:
        raise DataError("no shape pixels above threshold")
    ys, xs = np.mgrid[0 : arr.shape[0], 0 : arr.shape[1]]
    return float((ys * weight).sum() / total), float((xs * weight).sum() / total)


# --- clip sampling / ingestion ------------------------------------------------


def _reflect_index(i: int, n: int) -> int:
    """Palindromic extension of range(n): 0,1,...,n-1,n-2,...,1,0,1,..."""
    if n == 1:
        return 0
    period = 2 * n - 2
    j = i % period
    return j if j < n else period - j


def read_frame_dir(path: str | Path) -> np.ndarray:
    """Load a directory of numbered image frames into (N, H, W, 3) in [0, 1]."""
    from PIL import Image

    path = Path(path)
    files = sorted(
        (p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")),
        key=lambda p: p.stem,
    )
    if not files:
        raise DataError(f"no image frames found in {path}")
    frames = []
    for p in files:
        try:
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
        except OSError as exc:
            raise DataError(f"unreadable frame {p}: {exc}") from exc
    return np.stack(frames)


def _resize_clip(clip: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if clip.shape[1:3] == tuple(size):
        return clip
    x = clip.permute(0, 3, 1, 2)
    x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    return x.permute(0, 2, 3, 1)


def sample_clip(source, spec: ClipSpec, rng: np.random.Generator) -> torch.Tensor:
    """Sample a training clip from stored frames.

    Random start, fixed frame skip; when the source runs out the index
    continues in reverse order (palindromic padding). Frames are then
    center-cropped to crop_scale and resized to spec.resize.
    """
    if isinstance(source, (str, Path)):
        frames = read_frame_dir(source)
    else:
        frames = np.asarray(source, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[0] < 1:
        raise DataError(f"frame source must be (N, H, W, C) with N >= 1, got {frames.shape}")
    n = frames.shape[0]
    span = (spec.frames - 1) * spec.skip
    max_start = n - 1 - span
    start = int(rng.integers(0, max_start + 1)) if max_start > 0 else 0
    idx = [_reflect_index(start + k * spec.skip, n) for k in range(spec.frames)]
    clip = torch.from_numpy(frames[idx].copy())

    h, w = clip.shape[1:3]
    ch, cw = max(2, int(round(h * spec.crop_scale))), max(2, int(round(w * spec.crop_scale)))
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    clip = clip[:, y0 : y0 + ch, x0 : x0 + cw, :]
    clip = _resize_clip(clip, spec.resize)
    return clip.clamp(0.0, 1.0)


# --- augmentation ---------------------------------------------------------------


def flip_horizontal(clip: torch.Tensor) -> torch.Tensor:
    return clip.flip(-2)


def random_crop(clip: torch.Tensor, rng, scale: float = 0.8) -> torch.Tensor:
    t, h, w, _ = clip.shape
    ch, cw = max(2, int(round(h * scale))), max(2, int(round(w * scale)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return _resize_clip(clip[:, y0 : y0 + ch, x0 : x0 + cw, :], (h, w))


def color_jitter(clip: torch.Tensor, rng) -> torch.Tensor:
    brightness = float(rng.uniform(0.85, 1.15))
    gains = torch.tensor([float(rng.uniform(0.9, 1.1)) for _ in range(3)], dtype=clip.dtype)
    return (clip * brightness * gains).clamp(0.0, 1.0)


def erase_rect(clip: torch.Tensor, rng) -> torch.Tensor:
    t, h, w, _ = clip.shape
    eh = max(1, int(round(h * float(rng.uniform(0.15, 0.35)))))
    ew = max(1, int(round(w * float(rng.uniform(0.15, 0.35)))))
    y0 = int(rng.integers(0, h - eh + 1))
    x0 = int(rng.integers(0, w - ew + 1))
    value = float(rng.uniform(0.0, 1.0))
    out = clip.clone()
    out[:, y0 : y0 + eh, x0 : x0 + ew, :] = value
    return out


def augment(clip: torch.Tensor, rng, crop_scale: float = 0.8) -> torch.Tensor:
    """Apply flip / crop / color jitter / erasing, each with probability 0.5.

    Gate draws happen in that fixed order; every applied transform uses one
    parameter set for all frames, so augmentation is temporally consistent.
    """
    out = clip
    if rng.random() < 0.5:
        out = flip_horizontal(out)
    if rng.random() < 0.5:
        out = random_crop(out, rng, scale=crop_scale)
    if rng.random() < 0.5:
        out = color_jitter(out, rng)
    if rng.random() < 0.5:
        out = erase_rect(out, rng)
    return out.clamp(0.0, 1.0)


# --- manifests and dataset directories -------------------------------------------


@dataclass
class ClipRecord:
    path: str
    label: int
    split: str
    role: str
    privacy: int = -1


class DatasetIndex:
    """Manifest-backed view of a dataset directory."""

    def __init__(self, root: str | Path, records: list[ClipRecord]):
        self.root = Path(root)
        self.records = records
        train_covers = {r.path for r in records if r.role == "cover" and r.split == "train"}
        val_covers = {r.path for r in records if r.role == "cover" and r.split != "train"}
        if train_covers & val_covers:
            raise DataError("cover clips shared between train and eval splits")

    def secrets(self, split: str) -> list[ClipRecord]:
        return [r for r in self.records if r.role == "secret" and r.split == split]

    def covers(self, split: str) -> list[ClipRecord]:
        return [r for r in self.records if r.role == "cover" and r.split == split]

    def load(self, record: ClipRecord) -> torch.Tensor:
        path = self.root / record.path
        if path.is_dir():
            frames = read_frame_dir(path)
            return torch.from_numpy(frames)
        arr = tensorio.load_tensor(path)
        return torch.from_numpy(np.asarray(arr, dtype=np.float32))

    @property
    def num_classes(self) -> int:
        labels = {r.label for r in self.records if r.role == "secret"}
        return max(labels) + 1 if labels else 0


def load_manifest(root: str | Path) -> DatasetIndex:
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    records = []
    for line_no, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest}:{line_no}: bad JSON: {exc}") from exc
        role = rec.get("role")
        if role not in ("secret", "cover"):
            raise DataError(f"{manifest}:{line_no}: role must be secret|cover, got {role!r}")
        records.append(
            ClipRecord(
                path=rec["path"],
                label=int(rec.get("label", -1)),
                split=rec["split"],
                role=role,
                privacy=int(rec.get("privacy", -1)),
            )
        )
    return DatasetIndex(root, records)


def write_synthetic_dataset(
    root: str | Path,
    spec: SyntheticSpec,
    clips_per_split: dict[str, int],
    covers_per_split: dict[str, int] | None = None,
) -> Path:
    """Write container clips plus manifest.jsonl; byte-identical per (spec, counts)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "clips").mkdir(exist_ok=True)
    if covers_per_split is None:
        covers_per_split = {s: max(8, n // 5) for s, n in clips_per_split.items()}
    lines = []
    cover_seed = 0
    for split in sorted(clips_per_split):
        split_code = zlib.crc32(split.encode("utf-8"))
        for i in range(clips_per_split[split]):
            class_id = i % spec.num_classes
            clip, label, color = generate_clip(spec, class_id, seed=(split_code + i) % (2**31))
            rel = f"clips/secret_{split}_{i:04d}.tns"
            tensorio.save_tensor(root / rel, clip.numpy())
            lines.append(
                json.dumps(
                    {"path": rel, "label": label, "split": split, "role": "secret", "privacy": color},
                    sort_keys=True,
                )
            )
    for split in sorted(covers_per_split):
        for i in range(covers_per_split[split]):
            cover_seed += 1
            clip = generate_cover(spec, seed=cover_seed)
            rel = f"clips/cover_{split}_{i:04d}.tns"
            tensorio.save_tensor(root / rel, clip.numpy())
            lines.append(
                json.dumps(
                    {"path": rel, "label": -1, "split": split, "role": "cover"},
                    sort_keys=True,
                )
            )
    (root / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return root / "manifest.jsonl"


def pair_epoch(
    secrets: list[ClipRecord],
    covers: list[ClipRecord],
    rng: np.random.Generator,
    fixed_cover: ClipRecord | None = None,
) -> list[tuple[ClipRecord, ClipRecord]]:
    """Assign one cover to every secret; random matching per call unless a
    fixed cover is designated."""
    if not covers and fixed_cover is None:
        raise DataError("no cover clips available for pairing")
    if fixed_cover is not None:
        return [(s, fixed_cover) for s in secrets]
    picks = rng.integers(0, len(covers), size=len(secrets))
    return [(s, covers[int(k)]) for s, k in zip(secrets, picks)]
