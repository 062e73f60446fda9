"""Optimization loop, evaluation and the ablation/sweep driver.

The training step follows the covert-channel protocol end to end: embed
the (augmented) secret into a randomly paired cover with the frozen hider,
run the analysis network on the stego clip, and minimize cross-entropy
plus the weighted promotion losses. Evaluation runs the same embedding
client-side but never hands the secret to the network.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import DatasetIndex, augment, pair_epoch
from .errors import ConfigError, NumericsError
from .network import NetworkConfig, SINGLETON_GROUPING, SubBandNet, build_network
from .promotion import build_targets, promotion_loss

ABLATION_SUITES = ("modules", "pe", "grouping", "hyper")

GROUPING_SUITE = (
    (("ll", "lh", "hl", "hh"),),
    (("ll",), ("lh", "hl", "hh")),
    (("ll",), ("lh",), ("hl", "hh")),
    (("ll",), ("lh", "hl"), ("hh",)),
    (("ll",), ("hl",), ("lh", "hh")),
    SINGLETON_GROUPING,
)


@dataclass
class TrainConfig:
    spatial_weight: float = 0.2
    temporal_weight: float = 0.3
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    grad_clip: float = 5.0
    augment_secrets: bool = True
    fixed_pairing: bool = False

    def __post_init__(self):
        if self.spatial_weight < 0 or self.temporal_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")


@dataclass
class EpochRecord:
    epoch: int
    train_top1: float
    val_top1: float
    loss_cls: float
    loss_spatial: float
    loss_temporal: float
    loss_total: float
    wall_time: float
    fingerprint: str


@dataclass
class TrainResult:
    best_state: dict
    best_val_top1: float
    best_epoch: int
    records: list[EpochRecord] = field(default_factory=list)


def write_records(path: str | Path, records: list[EpochRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def read_records(path: str | Path) -> list[EpochRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(EpochRecord(**json.loads(line)))
    return records


class _ClipCache:
    def __init__(self, dataset: DatasetIndex):
        self.dataset = dataset
        self._cache: dict[str, torch.Tensor] = {}

    def get(self, record) -> torch.Tensor:
        if record.path not in self._cache:
            self._cache[record.path] = self.dataset.load(record)
        return self._cache[record.path]


def _batched(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def train(
    model: SubBandNet,
    hider,
    dataset: DatasetIndex,
    cfg: TrainConfig,
    step_callback=None,
    epoch_callback=None,
) -> TrainResult:
    """Optimize the network on the train split; returns the best-val state.

    The hider is frozen throughout: its state fingerprint must be identical
    before and after, and embedding runs under no_grad.
    """
    torch.manual_seed(cfg.seed)
    hider_before = hider.state_fingerprint()
    fingerprint = model.cfg.fingerprint()
    cache = _ClipCache(dataset)
    train_secrets = dataset.secrets("train")
    train_covers = dataset.covers("train")
    if not train_secrets:
        raise ConfigError("train split has no secret clips")
    use_promotion = cfg.spatial_weight > 0 or cfg.temporal_weight > 0
    temporal_lengths = None

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    best = TrainResult(best_state={}, best_val_top1=-1.0, best_epoch=-1)
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        rng = np.random.default_rng([cfg.seed, epoch])
        pair_rng = np.random.default_rng([cfg.seed, epoch, 7])
        fixed = train_covers[0] if cfg.fixed_pairing else None
        pairs = pair_epoch(train_secrets, train_covers, pair_rng, fixed_cover=fixed)
        order = rng.permutation(len(pairs))
        pairs = [pairs[i] for i in order]

        sums = {"cls": 0.0, "spatial": 0.0, "temporal": 0.0, "total": 0.0}
        correct = 0
        seen = 0
        for batch in _batched(pairs, cfg.batch_size):
            secrets, covers, labels = [], [], []
            for i, (srec, crec) in enumerate(batch):
                clip = cache.get(srec)
                if cfg.augment_secrets:
                    clip = augment(clip, np.random.default_rng([cfg.seed, epoch, step, i]))
                secrets.append(clip)
                covers.append(cache.get(crec))
                labels.append(srec.label)
            secret = torch.stack(secrets)
            cover = torch.stack(covers)
            label = torch.tensor(labels, dtype=torch.long)
            with torch.no_grad():
                stego = hider.embed(cover, secret).stego

            if use_promotion:
                if temporal_lengths is None:
                    temporal_lengths = model.cfg.backbone.temporal_lengths(secret.shape[1])
                out = model(stego, secret=secret)
                targets = build_targets(
                    secret,
                    levels=model.cfg.levels,
                    temporal_lengths=temporal_lengths,
                    magnitude_mode=not model.cfg.signed_targets,
                )
                l_spatial, l_temporal, _ = promotion_loss(
                    targets, out.projections, cfg.spatial_weight, cfg.temporal_weight
                )
            else:
                out = model(stego)
                l_spatial = torch.zeros(())
                l_temporal = torch.zeros(())
            l_cls = F.cross_entropy(out.logits, label)
            loss = l_cls + cfg.spatial_weight * l_spatial + cfg.temporal_weight * l_temporal
            if not torch.isfinite(loss):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"batch clips: {[r.path for r, _ in batch]}"
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()

            bsz = len(batch)
            sums["cls"] += float(l_cls.item()) * bsz
            sums["spatial"] += float(l_spatial.item()) * bsz
            sums["temporal"] += float(l_temporal.item()) * bsz
            sums["total"] += float(loss.item()) * bsz
            correct += int((out.logits.argmax(dim=1) == label).sum().item())
            seen += bsz
            if step_callback is not None:
                step_callback(
                    step,
                    float(loss.item()),
                    float(l_cls.item()),
                    float(l_spatial.item()),
                    float(l_temporal.item()),
                )
            step += 1

        val = evaluate(model, dataset, hider, split="val", seed=cfg.seed)
        record = EpochRecord(
            epoch=epoch,
            train_top1=correct / max(seen, 1),
            val_top1=val["top1"],
            loss_cls=sums["cls"] / max(seen, 1),
            loss_spatial=sums["spatial"] / max(seen, 1),
            loss_temporal=sums["temporal"] / max(seen, 1),
            loss_total=sums["total"] / max(seen, 1),
            wall_time=time.perf_counter() - t0,
            fingerprint=fingerprint,
        )
        best.records.append(record)
        if epoch_callback is not None:
            epoch_callback(record)
        if val["top1"] > best.best_val_top1:
            best.best_val_top1 = val["top1"]
            best.best_epoch = epoch
            best.best_state = copy.deepcopy(model.state_dict())

    if hider.state_fingerprint() != hider_before:
        raise NumericsError("hider state changed during training; it must stay frozen")
    return best


def evaluate(
    model,
    dataset: DatasetIndex,
    hider,
    split: str = "val",
    pairing: str = "random",
    seed: int = 0,
    cover_index: int = 0,
    batch_size: int = 8,
) -> dict:
    """Top-1 over a split. The secret is embedded client-side but never
    reaches the network's forward pass."""
    if pairing not in ("random", "fixed_cover"):
        raise ConfigError(f"pairing must be random|fixed_cover, got {pairing!r}")
    secrets = dataset.secrets(split)
    covers = dataset.covers(split)
    if not secrets:
        raise ConfigError(f"split {split!r} has no secret clips")
    cache = _ClipCache(dataset)
    rng = np.random.default_rng([seed, 104729])
    fixed = covers[cover_index % len(covers)] if pairing == "fixed_cover" else None
    pairs = pair_epoch(secrets, covers, rng, fixed_cover=fixed)

    model.eval()
    correct = 0
    with torch.no_grad():
        for batch in _batched(pairs, batch_size):
            secret = torch.stack([cache.get(s) for s, _ in batch])
            cover = torch.stack([cache.get(c) for _, c in batch])
            label = torch.tensor([s.label for s, _ in batch], dtype=torch.long)
            stego = hider.embed(cover, secret).stego
            out = model(stego)
            correct += int((out.logits.argmax(dim=1) == label).sum().item())
    return {"top1": correct / len(pairs), "count": len(pairs), "split": split, "pairing": pairing}


def evaluate_fixed_cover_sweep(
    model, dataset: DatasetIndex, hider, n_covers: int = 10, split: str = "val", seed: int = 0
) -> dict:
    """Repeat fixed-cover evaluation over n distinct covers; reports mean/std."""
    covers = dataset.covers(split)
    n = min(n_covers, len(covers))
    tops = [
        evaluate(model, dataset, hider, split=split, pairing="fixed_cover", seed=seed, cover_index=k)[
            "top1"
        ]
        for k in range(n)
    ]
    arr = np.asarray(tops)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "top1s": tops, "covers": n}


@dataclass
class AblationRow:
    suite: str
    name: str
    overrides: dict
    train_top1: float
    val_top1: float


def _run_variant(
    name: str,
    dataset: DatasetIndex,
    hider,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    suite: str,
    overrides: dict,
) -> AblationRow:
    model = build_network(net_cfg, seed=train_cfg.seed)
    result = train(model, hider, dataset, train_cfg)
    last = result.records[-1]
    return AblationRow(
        suite=suite,
        name=name,
        overrides=overrides,
        train_top1=last.train_top1,
        val_top1=result.best_val_top1,
    )


def ablate(
    suite: str,
    dataset: DatasetIndex,
    hider,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
) -> list[AblationRow]:
    """Run one ablation suite and return its result table.

    modules: all 8 on/off combinations of spatial promotion, temporal
    promotion and the cross-band difference term. pe: the four position
    embedding strategies. grouping: the six sub-band partitions. hyper:
    one-at-a-time sweeps of the two promotion weights and the difference
    strength around the defaults.
    """
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {ABLATION_SUITES}")
    rows: list[AblationRow] = []
    if suite == "modules":
        for sp_on in (False, True):
            for tm_on in (False, True):
                for cr_on in (False, True):
                    tc = copy.deepcopy(train_cfg)
                    tc.spatial_weight = train_cfg.spatial_weight if sp_on else 0.0
                    tc.temporal_weight = train_cfg.temporal_weight if tm_on else 0.0
                    nc = copy.deepcopy(net_cfg)
                    nc.diff_strength = net_cfg.diff_strength if cr_on else 0.0
                    name = (
                        f"spatial={'on' if sp_on else 'off'},"
                        f"temporal={'on' if tm_on else 'off'},"
                        f"cross={'on' if cr_on else 'off'}"
                    )
                    overrides = {"spatial": sp_on, "temporal": tm_on, "cross": cr_on}
                    rows.append(_run_variant(name, dataset, hider, nc, tc, suite, overrides))
    elif suite == "pe":
        for mode in ("none", "absolute", "rope", "rotary_offset"):
            nc = copy.deepcopy(net_cfg)
            nc.pe_mode = mode
            rows.append(
                _run_variant(mode, dataset, hider, nc, train_cfg, suite, {"pe_mode": mode})
            )
    elif suite == "grouping":
        for grouping in GROUPING_SUITE:
            nc = copy.deepcopy(net_cfg)
            nc.grouping = grouping
            name = "|".join("+".join(g) for g in grouping)
            rows.append(
                _run_variant(name, dataset, hider, nc, train_cfg, suite, {"grouping": name})
            )
    elif suite == "hyper":
        for value in (0.1, 0.2, 0.5):
            tc = copy.deepcopy(train_cfg)
            tc.spatial_weight = value
            rows.append(
                _run_variant(
                    f"spatial_weight={value}", dataset, hider, net_cfg, tc, suite,
                    {"spatial_weight": value},
                )
            )
        for value in (0.2, 0.3, 0.5):
            tc = copy.deepcopy(train_cfg)
            tc.temporal_weight = value
            rows.append(
                _run_variant(
                    f"temporal_weight={value}", dataset, hider, net_cfg, tc, suite,
                    {"temporal_weight": value},
                )
            )
        for value in (0.0, 0.1, 0.2, 0.3):
            nc = copy.deepcopy(net_cfg)
            nc.diff_strength = value
            rows.append(
                _run_variant(
                    f"diff_strength={value}", dataset, hider, nc, train_cfg, suite,
                    {"diff_strength": value},
                )
            )
    return rows
