"""Rendering of run records and model internals into text tables, TSV files
and matplotlib figures.

Everything here is a static result display: aligned tables for the
console, tab-delimited files next to them, and PNG figures (training
curves, per-level band energies, attention heatmaps, band weights).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

from . import wavelet
from .errors import DimensionError


def text_table(headers: list[str], rows: list[list]) -> str:
    """Aligned plain-text table."""
    cells = [[str(h) for h in headers]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_tsv(path: str | Path, headers: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(str(h) for h in headers) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def band_energy_fractions(clip: torch.Tensor, levels: int) -> list[dict]:
    """Per level: the share of that level's energy in each of the four bands."""
    pyramid = wavelet.multilevel_dwt(clip, levels)
    rows = []
    for bands in pyramid:
        energies = {name: wavelet.energy(t) for name, t in bands.bands().items()}
        total = sum(energies.values())
        rows.append(
            {
                "level": bands.level,
                **{name: (e / total if total > 0 else 0.0) for name, e in energies.items()},
            }
        )
    return rows


def plot_energy(rows: list[dict], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    levels = [r["level"] for r in rows]
    bottom = np.zeros(len(rows))
    for name in wavelet.ALL_BANDS:
        vals = np.array([r[name] for r in rows])
        ax.bar(levels, vals, bottom=bottom, label=name)
        bottom += vals
    ax.set_xlabel("decomposition level")
    ax.set_ylabel("energy fraction")
    ax.set_xticks(levels)
    ax.legend(ncol=4, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curves(records: list, path: str | Path) -> None:
    """Two panels: top-1 accuracy and loss components per epoch."""
    epochs = [r.epoch for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r.train_top1 for r in records], label="train")
    ax1.plot(epochs, [r.val_top1 for r in records], label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("top-1")
    ax1.set_ylim(0, 1.02)
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [r.loss_cls for r in records], label="classification")
    ax2.plot(epochs, [r.loss_spatial for r in records], label="spatial")
    ax2.plot(epochs, [r.loss_temporal for r in records], label="temporal")
    ax2.plot(epochs, [r.loss_total for r in records], label="total", linestyle="--")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("loss")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_attention_maps(model, stego: torch.Tensor, out_dir: str | Path) -> list[Path]:
    """Render self/cross attention weight heatmaps for one stego clip."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad():
        out = model(stego.unsqueeze(0) if stego.dim() == 4 else stego, return_weights=True)
    if not out.attention:
        raise DimensionError("forward returned no attention maps")
    paths = []
    for name, maps in out.attention.items():
        kinds = [(k, w) for k, w in maps.items() if w is not None]
        fig, axes = plt.subplots(1, len(kinds), figsize=(3.2 * len(kinds), 3), squeeze=False)
        for ax, (kind, w) in zip(axes[0], kinds):
            mat = w[0].numpy()
            im = ax.imshow(mat, cmap="viridis", vmin=0.0, vmax=1.0)
            ax.set_title(f"{name} {kind}", fontsize=9)
            ax.set_xlabel("key position")
            ax.set_ylabel("query position")
            fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        p = out_dir / f"attention_{name.replace('+', '_')}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def plot_band_weights(weight_rows: np.ndarray, path: str | Path) -> None:
    """Bar chart of mean per-band aggregation weights (rows: samples x 4)."""
    weights = np.asarray(weight_rows)
    fig, ax = plt.subplots(figsize=(4.5, 3))
    means = weights.mean(axis=0)
    stds = weights.std(axis=0)
    ax.bar(wavelet.ALL_BANDS, means, yerr=stds, capsize=3)
    ax.set_ylabel("aggregation weight")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(rows: list, path: str | Path) -> None:
    """Horizontal bar chart of validation top-1 per ablation variant."""
    fig, ax = plt.subplots(figsize=(7, 0.45 * len(rows) + 1.2))
    names = [r.name for r in rows]
    vals = [r.val_top1 for r in rows]
    ax.barh(range(len(rows)), vals)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("val top-1")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
