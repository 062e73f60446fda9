"""Classification and privacy metrics, plus the desk-scale frame attacker.

classwise mAP uses all-points average precision at positive ranks with a
deterministic tie-break (descending score, then ascending sample index);
classwise F1 thresholds scores at 0.5 and macro-averages per-attribute F1.
The privacy attacker is a small 2D CNN trained from scratch on single
frames to predict the binary privacy attributes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError


def _check_scores(scores: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise DimensionError(
            f"scores {scores.shape} and targets {targets.shape} must be equal 2D shapes"
        )
    if not np.isin(targets, (0, 1)).all():
        raise ConfigError("targets must be binary 0/1")
    return scores, targets.astype(np.int64)


def average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """AP for one attribute: mean precision at each positive's rank.

    Ranking sorts by descending score; ties keep ascending sample index
    (stable sort on the negated scores).
    """
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ranked = np.asarray(targets)[order]
    positives = ranked.sum()
    if positives == 0:
        raise ConfigError("attribute has no positive targets")
    cum_pos = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    precisions = cum_pos[ranked == 1] / ranks[ranked == 1]
    # sequential sum keeps results bit-identical to a rank-walk reference
    return sum(float(p) for p in precisions) / len(precisions)


def classwise_map(scores: np.ndarray, targets: np.ndarray, strict: bool = False) -> float:
    """Mean of per-attribute average precision.

    Attributes with zero positives are skipped with a warning, or rejected
    in strict mode.
    """
    scores, targets = _check_scores(scores, targets)
    aps = []
    for a in range(scores.shape[1]):
        if targets[:, a].sum() == 0:
            if strict:
                raise ConfigError(f"attribute {a} has no positive targets")
            warnings.warn(f"attribute {a} has no positives; excluded from cMAP", stacklevel=2)
            continue
        aps.append(average_precision(scores[:, a], targets[:, a]))
    if not aps:
        raise ConfigError("no attribute had positive targets")
    return sum(aps) / len(aps)


def classwise_f1(scores: np.ndarray, targets: np.ndarray, threshold: float = 0.5) -> float:
    """Macro-averaged F1 of thresholded scores; F1 is 0 when precision+recall is 0."""
    scores, targets = _check_scores(scores, targets)
    preds = (scores >= threshold).astype(np.int64)
    f1s = []
    for a in range(scores.shape[1]):
        tp = int(((preds[:, a] == 1) & (targets[:, a] == 1)).sum())
        fp = int(((preds[:, a] == 1) & (targets[:, a] == 0)).sum())
        fn = int(((preds[:, a] == 0) & (targets[:, a] == 1)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return sum(f1s) / len(f1s)


# --- frame attacker ------------------------------------------------------------


@dataclass
class AttackerConfig:
    epochs: int = 12
    lr: float = 2e-3
    batch_size: int = 32
    seed: int = 0


class FrameAttacker(nn.Module):
    """3-block 2D CNN over single frames, one logit per binary attribute."""

    def __init__(self, num_attrs: int, width: int = 16):
        super().__init__()
        chans = [3, width, 2 * width, 4 * width]
        blocks = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            blocks += [
                nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
        self.features = nn.Sequential(*blocks)
        self.head = nn.Linear(chans[-1], num_attrs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, H, W, 3) in [0, 1]; returns logits (B, num_attrs)."""
        z = self.features(x.permute(0, 3, 1, 2))
        return self.head(z.mean(dim=(-2, -1)))


def privacy_attack(
    train_frames: torch.Tensor,
    train_attrs: np.ndarray,
    eval_frames: torch.Tensor,
    eval_attrs: np.ndarray,
    cfg: AttackerConfig | None = None,
) -> dict:
    """Train the frame attacker and report cMAP / classwise F1 on the eval split.

    Attributes without positives in the eval split are excluded by the
    metric layer with a warning.
    """
    cfg = cfg or AttackerConfig()
    train_attrs = np.asarray(train_attrs, dtype=np.float32)
    eval_attrs = np.asarray(eval_attrs, dtype=np.int64)
    if train_frames.shape[0] != train_attrs.shape[0]:
        raise DimensionError("train frames/attrs length mismatch")
    torch.manual_seed(cfg.seed)
    model = FrameAttacker(num_attrs=train_attrs.shape[1])
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    bce = nn.BCEWithLogitsLoss()
    targets = torch.from_numpy(train_attrs)
    rng = np.random.default_rng(cfg.seed)
    n = train_frames.shape[0]
    model.train()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            logits = model(train_frames[idx])
            loss = bce(logits, targets[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    model.eval()
    with torch.no_grad():
        scores = []
        for i in range(0, eval_frames.shape[0], cfg.batch_size):
            scores.append(torch.sigmoid(model(eval_frames[i : i + cfg.batch_size])))
        score_mat = torch.cat(scores).numpy()
    return {
        "cmap": classwise_map(score_mat, eval_attrs),
        "f1": classwise_f1(score_mat, eval_attrs),
        "count": int(eval_frames.shape[0]),
    }


def attack_frames_from_dataset(
    dataset,
    hider,
    mode: str,
    split: str,
    frames_per_clip: int = 2,
    seed: int = 0,
    num_colors: int = 6,
) -> tuple[torch.Tensor, np.ndarray]:
    """Assemble (frames, one-hot color attributes) for one attack arm.

    mode: 'raw' scores secret frames directly; 'stego' embeds each secret
    into a split-matched cover first; 'cover' pairs plain cover frames with
    the (unrelated) secret's attributes as a chance-level control.
    """
    if mode not in ("raw", "stego", "cover"):
        raise ConfigError(f"attack mode must be raw|stego|cover, got {mode!r}")
    rng = np.random.default_rng([seed, 555])
    secrets = dataset.secrets(split)
    covers = dataset.covers(split)
    frames, attrs = [], []
    for i, rec in enumerate(secrets):
        secret = dataset.load(rec)
        if mode == "raw":
            clip = secret
        else:
            cover = dataset.load(covers[int(rng.integers(0, len(covers)))])
            clip = hider.embed(cover, secret).stego if mode == "stego" else cover
        t = clip.shape[0]
        picks = rng.choice(t, size=min(frames_per_clip, t), replace=False)
        onehot = np.zeros(num_colors, dtype=np.int64)
        if rec.privacy >= 0:
            onehot[rec.privacy] = 1
        for k in picks:
            frames.append(clip[int(k)])
            attrs.append(onehot)
    return torch.stack(frames), np.stack(attrs)
