"""Batch command-line entry points for the whole pipeline.

Subcommands: gendata, embed, train, eval, ablate, inspect-dwt, report.
Option values resolve as: built-in default < config file < explicit flag.
Every run prints its resolved config fingerprint, and every exit path
writes one machine-parseable record to stderr
(``stegact: status=... kind=... detail=...``).

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import report, tensorio
from .backbone import BackboneConfig
from .data import SyntheticSpec, load_manifest, write_synthetic_dataset
from .errors import ConfigError, DataError, NumericsError
from .hiding import HiderConfig, WaveletAdditiveHider, psnr
from .network import (
    NetworkConfig,
    build_network,
    load_network,
    network_config_from_dict,
    save_network,
)
from .training import (
    ABLATION_SUITES,
    TrainConfig,
    ablate,
    evaluate,
    evaluate_fixed_cover_sweep,
    read_records,
    train,
    write_records,
)

ENV_DATA_ROOT = "STEGACT_DATA_ROOT"


class CliParser(argparse.ArgumentParser):
    """argparse parser that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=96)


DEFAULTS: dict[str, dict] = {
    "gendata": {
        "classes": 4,
        "clips": 200,
        "val_clips": 100,
        "covers": 40,
        "val_covers": 20,
        "frames": 16,
        "size": 32,
        "colors": 6,
        "noise": 0.0,
        "seed": 0,
        "out": "",
    },
    "embed": {
        "data": "",
        "split": "train",
        "count": 8,
        "strength": 0.05,
        "bands": "lh,hl,hh",
        "seed": 0,
        "out": "",
    },
    "train": {
        "data": "",
        "epochs": 30,
        "batch": 8,
        "lr": 1e-4,
        "spatial_weight": 0.2,
        "temporal_weight": 0.3,
        "diff_strength": 0.2,
        "width": 16,
        "pe": "rotary_offset",
        "grouping": "ll|lh|hl|hh",
        "strength": 0.05,
        "share_branches": False,
        "fixed_pairing": False,
        "no_augment": False,
        "seed": 0,
        "out": "",
    },
    "eval": {
        "data": "",
        "checkpoint": "",
        "split": "val",
        "pairing": "random",
        "covers": 10,
        "strength": 0.05,
        "seed": 0,
        "out": "",
    },
    "ablate": {
        "data": "",
        "suite": "modules",
        "epochs": 10,
        "batch": 8,
        "lr": 1e-4,
        "width": 16,
        "strength": 0.05,
        "seed": 0,
        "out": "",
    },
    "inspect-dwt": {
        "data": "",
        "clip": "",
        "index": 0,
        "levels": 4,
        "out": "",
    },
    "report": {
        "run": "",
        "data": "",
        "samples": 4,
        "seed": 0,
        "out": "",
    },
}


def build_parser() -> CliParser:
    parser = CliParser(
        prog="stegact",
        description="Hide action clips in cover clips and classify them in the wavelet stego domain.",
        formatter_class=_formatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, formatter_class=_formatter)
        p.add_argument("--config", default=None, help="key = value config file (flags override it)")
        return p

    p = add("gendata", "generate a synthetic motion dataset with a manifest")
    p.add_argument("--classes", type=int, default=None, help="number of motion classes (default: 4)")
    p.add_argument("--clips", type=int, default=None, help="train secret clips (default: 200)")
    p.add_argument("--val-clips", type=int, default=None, help="val secret clips (default: 100)")
    p.add_argument("--covers", type=int, default=None, help="train cover clips (default: 40)")
    p.add_argument("--val-covers", type=int, default=None, help="val cover clips (default: 20)")
    p.add_argument("--frames", type=int, default=None, help="frames per clip (default: 16)")
    p.add_argument("--size", type=int, default=None, help="square frame size (default: 32)")
    p.add_argument("--colors", type=int, default=None, help="palette size / privacy attrs (default: 6)")
    p.add_argument("--noise", type=float, default=None, help="additive pixel noise sigma (default: 0)")
    p.add_argument("--seed", type=int, default=None, help="generator seed (default: 0)")
    p.add_argument("--out", default=None, help="dataset directory (default: run directory)")

    p = add("embed", "batch-embed secret clips into covers and store the stego pairs")
    p.add_argument("--data", default=None, help=f"dataset root (default: ${ENV_DATA_ROOT})")
    p.add_argument("--split", default=None, help="manifest split to draw from (default: train)")
    p.add_argument("--count", type=int, default=None, help="number of pairs (default: 8)")
    p.add_argument("--strength", type=float, default=None, help="hider strength (default: 0.05)")
    p.add_argument("--bands", default=None, help="comma list of target bands (default: lh,hl,hh)")
    p.add_argument("--seed", type=int, default=None, help="pairing seed (default: 0)")
    p.add_argument("--out", default=None, help="output directory (default: run directory)")

    p = add("train", "train the sub-band analysis network")
    p.add_argument("--data", default=None, help=f"dataset root (default: ${ENV_DATA_ROOT})")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default: 30)")
    p.add_argument("--batch", type=int, default=None, help="batch size (default: 8)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: 1e-4)")
    p.add_argument("--spatial-weight", type=float, default=None,
                   help="spatial promotion loss weight (default: 0.2)")
    p.add_argument("--temporal-weight", type=float, default=None,
                   help="temporal promotion loss weight (default: 0.3)")
    p.add_argument("--diff-strength", type=float, default=None,
                   help="cross-band subtraction strength (default: 0.2)")
    p.add_argument("--width", type=int, default=None, help="backbone base width (default: 16)")
    p.add_argument("--pe", default=None, choices=["none", "absolute", "rope", "rotary_offset"],
                   help="position embedding mode (default: rotary_offset)")
    p.add_argument("--grouping", default=None,
                   help="band partition, groups '|'-separated, members '+'-joined "
                        "(default: ll|lh|hl|hh)")
    p.add_argument("--strength", type=float, default=None, help="hider strength (default: 0.05)")
    p.add_argument("--share-branches", action="store_true", default=None,
                   help="share one backbone across groups")
    p.add_argument("--fixed-pairing", action="store_true", default=None,
                   help="keep the same secret/cover pairing every epoch")
    p.add_argument("--no-augment", action="store_true", default=None,
                   help="disable secret-clip augmentation")
    p.add_argument("--seed", type=int, default=None, help="training seed (default: 0)")
    p.add_argument("--out", default=None, help="run directory (default: timestamped)")

    p = add("eval", "evaluate a checkpoint on a split")
    p.add_argument("--data", default=None, help=f"dataset root (default: ${ENV_DATA_ROOT})")
    p.add_argument("--checkpoint", default=None, help="checkpoint file from train")
    p.add_argument("--split", default=None, help="manifest split (default: val)")
    p.add_argument("--pairing", default=None, choices=["random", "fixed_cover"],
                   help="cover pairing mode (default: random)")
    p.add_argument("--covers", type=int, default=None,
                   help="covers for the fixed_cover sweep (default: 10)")
    p.add_argument("--strength", type=float, default=None,
                   help="hider strength override (default: checkpoint value)")
    p.add_argument("--seed", type=int, default=None, help="pairing seed (default: 0)")
    p.add_argument("--out", default=None, help="output directory (default: run directory)")

    p = add("ablate", "run an ablation suite and emit its table")
    p.add_argument("--data", default=None, help=f"dataset root (default: ${ENV_DATA_ROOT})")
    p.add_argument("--suite", default=None, choices=list(ABLATION_SUITES),
                   help="suite name (default: modules)")
    p.add_argument("--epochs", type=int, default=None, help="epochs per variant (default: 10)")
    p.add_argument("--batch", type=int, default=None, help="batch size (default: 8)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: 1e-4)")
    p.add_argument("--width", type=int, default=None, help="backbone base width (default: 16)")
    p.add_argument("--strength", type=float, default=None, help="hider strength (default: 0.05)")
    p.add_argument("--seed", type=int, default=None, help="seed (default: 0)")
    p.add_argument("--out", default=None, help="output directory (default: run directory)")

    p = add("inspect-dwt", "dump per-band coefficients and energy tables for one clip")
    p.add_argument("--data", default=None, help=f"dataset root (default: ${ENV_DATA_ROOT})")
    p.add_argument("--clip", default=None, help="tensor container path (overrides --data/--index)")
    p.add_argument("--index", type=int, default=None, help="secret index in the manifest (default: 0)")
    p.add_argument("--levels", type=int, default=None, help="decomposition levels (default: 4)")
    p.add_argument("--out", default=None, help="output directory (default: run directory)")

    p = add("report", "render run records into tables and figures")
    p.add_argument("--run", default=None, help="run directory containing records.jsonl")
    p.add_argument("--data", default=None,
                   help=f"dataset root for attention/weight figures (default: ${ENV_DATA_ROOT})")
    p.add_argument("--samples", type=int, default=None,
                   help="val samples for the weight figure (default: 4)")
    p.add_argument("--seed", type=int, default=None, help="sample seed (default: 0)")
    p.add_argument("--out", default=None, help="output directory (default: the run directory)")
    return parser


def parse_config_file(path: str) -> dict:
    """Read `key = value` lines; values are parsed as JSON when possible."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for line_no, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError:
            values[key] = value
    return values


def resolve_options(args: argparse.Namespace, command: str) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        unknown = set(file_values) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(file_values)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def config_fingerprint(command: str, cfg: dict) -> str:
    blob = json.dumps({"command": command, **cfg}, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _data_root(cfg: dict) -> Path:
    root = cfg.get("data") or os.environ.get(ENV_DATA_ROOT, "")
    if not root:
        raise ConfigError(f"--data not given and ${ENV_DATA_ROOT} unset")
    return Path(root)


def _out_dir(cfg: dict, fingerprint: str) -> Path:
    if cfg.get("out"):
        out = Path(cfg["out"])
    else:
        out = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{fingerprint}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_bands(spec: str) -> tuple[str, ...]:
    bands = tuple(b.strip() for b in spec.split(",") if b.strip())
    return bands


def _parse_grouping(spec: str) -> tuple[tuple[str, ...], ...]:
    return tuple(tuple(b.strip() for b in group.split("+")) for group in spec.split("|"))


# --- subcommands -------------------------------------------------------------


def cmd_gendata(cfg: dict, fingerprint: str) -> None:
    out = _out_dir(cfg, fingerprint)
    spec = SyntheticSpec(
        num_classes=cfg["classes"],
        frames=cfg["frames"],
        height=cfg["size"],
        width=cfg["size"],
        num_colors=cfg["colors"],
        noise=cfg["noise"],
        seed=cfg["seed"],
    )
    manifest = write_synthetic_dataset(
        out,
        spec,
        clips_per_split={"train": cfg["clips"], "val": cfg["val_clips"]},
        covers_per_split={"train": cfg["covers"], "val": cfg["val_covers"]},
    )
    print(f"wrote {manifest}")
    print(
        f"secrets: train={cfg['clips']} val={cfg['val_clips']}; "
        f"covers: train={cfg['covers']} val={cfg['val_covers']}"
    )


def cmd_embed(cfg: dict, fingerprint: str) -> None:
    out = _out_dir(cfg, fingerprint)
    dataset = load_manifest(_data_root(cfg))
    hider = WaveletAdditiveHider(
        HiderConfig(strength=cfg["strength"], band_targets=_parse_bands(cfg["bands"]))
    )
    secrets = dataset.secrets(cfg["split"])
    covers = dataset.covers(cfg["split"])
    if not secrets or not covers:
        raise DataError(f"split {cfg['split']!r} lacks secrets or covers")
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for i in range(cfg["count"]):
        srec = secrets[int(rng.integers(0, len(secrets)))]
        crec = covers[int(rng.integers(0, len(covers)))]
        pair = hider.embed(dataset.load(crec), dataset.load(srec))
        pair_dir = out / f"pair_{i:04d}"
        pair_dir.mkdir(exist_ok=True)
        tensorio.save_tensor(pair_dir / "cover.tns", pair.cover.numpy())
        tensorio.save_tensor(pair_dir / "secret.tns", pair.secret.numpy())
        tensorio.save_tensor(pair_dir / "stego.tns", pair.stego.numpy())
        quality = psnr(pair.cover, pair.stego)
        (pair_dir / "meta.json").write_text(
            json.dumps(
                {
                    "hider_id": pair.hider_id,
                    "strength": cfg["strength"],
                    "band_targets": list(_parse_bands(cfg["bands"])),
                    "secret": srec.path,
                    "cover": crec.path,
                    "psnr_db": quality,
                },
                sort_keys=True,
            )
            + "\n"
        )
        rows.append([f"pair_{i:04d}", srec.path, crec.path, quality])
    print(report.text_table(["pair", "secret", "cover", "psnr_db"], rows))


def _net_and_train_cfg(cfg: dict, num_classes: int) -> tuple[NetworkConfig, TrainConfig]:
    net_cfg = NetworkConfig(
        backbone=BackboneConfig(base_width=cfg["width"]),
        num_classes=num_classes,
        diff_strength=cfg.get("diff_strength", 0.2),
        grouping=_parse_grouping(cfg.get("grouping", "ll|lh|hl|hh")),
        pe_mode=cfg.get("pe", "rotary_offset"),
        share_branch_weights=bool(cfg.get("share_branches", False)),
    )
    train_cfg = TrainConfig(
        spatial_weight=cfg.get("spatial_weight", 0.2),
        temporal_weight=cfg.get("temporal_weight", 0.3),
        lr=cfg["lr"],
        batch_size=cfg["batch"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        augment_secrets=not cfg.get("no_augment", False),
        fixed_pairing=bool(cfg.get("fixed_pairing", False)),
    )
    return net_cfg, train_cfg


def cmd_train(cfg: dict, fingerprint: str) -> None:
    out = _out_dir(cfg, fingerprint)
    dataset = load_manifest(_data_root(cfg))
    hider = WaveletAdditiveHider(HiderConfig(strength=cfg["strength"]))
    net_cfg, train_cfg = _net_and_train_cfg(cfg, dataset.num_classes)
    model = build_network(net_cfg, seed=cfg["seed"])

    def on_epoch(rec):
        print(
            f"epoch {rec.epoch:3d}  train {rec.train_top1:.3f}  val {rec.val_top1:.3f}  "
            f"loss {rec.loss_total:.4f}"
        )

    result = train(model, hider, dataset, train_cfg, epoch_callback=on_epoch)
    model.load_state_dict(result.best_state)
    save_network(
        out / "checkpoint.ckpt",
        model,
        extra_config={
            "hider": {"strength": cfg["strength"], "band_targets": ["lh", "hl", "hh"]},
            "train": {"epochs": cfg["epochs"], "lr": cfg["lr"], "seed": cfg["seed"]},
        },
    )
    write_records(out / "records.jsonl", result.records)
    report.plot_training_curves(result.records, out / "curves.png")
    (out / "resolved.json").write_text(json.dumps(cfg, sort_keys=True) + "\n")
    print(f"best val top1 {result.best_val_top1:.3f} at epoch {result.best_epoch}")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")


def _load_checkpoint_model(path: str | Path, strength_override: float | None):
    _, manifest = tensorio.load_checkpoint(path)
    net_cfg = network_config_from_dict(manifest["config"]["network"])
    model = load_network(path, net_cfg)
    hider_cfg = manifest["config"].get("hider", {})
    strength = strength_override if strength_override is not None else hider_cfg.get("strength", 0.05)
    bands = tuple(hider_cfg.get("band_targets", ("lh", "hl", "hh")))
    hider = WaveletAdditiveHider(HiderConfig(strength=strength, band_targets=bands))
    return model, hider


def cmd_eval(cfg: dict, fingerprint: str) -> None:
    out = _out_dir(cfg, fingerprint)
    if not cfg["checkpoint"]:
        raise ConfigError("--checkpoint is required for eval")
    dataset = load_manifest(_data_root(cfg))
    model, hider = _load_checkpoint_model(cfg["checkpoint"], cfg.get("strength"))
    if cfg["pairing"] == "fixed_cover":
        sweep = evaluate_fixed_cover_sweep(
            model, dataset, hider, n_covers=cfg["covers"], split=cfg["split"], seed=cfg["seed"]
        )
        result = {"pairing": "fixed_cover", "split": cfg["split"], **sweep}
        print(
            f"fixed-cover top1 over {sweep['covers']} covers: "
            f"{sweep['mean']:.3f} +/- {sweep['std']:.3f}"
        )
    else:
        result = evaluate(model, dataset, hider, split=cfg["split"], seed=cfg["seed"])
        print(f"top1 {result['top1']:.3f} on {result['count']} clips ({cfg['split']})")
    (out / "eval.json").write_text(json.dumps(result, sort_keys=True) + "\n")


def cmd_ablate(cfg: dict, fingerprint: str) -> None:
    out = _out_dir(cfg, fingerprint)
    dataset = load_manifest(_data_root(cfg))
    hider = WaveletAdditiveHider(HiderConfig(strength=cfg["strength"]))
    base = dict(cfg)
    base.setdefault("grouping", "ll|lh|hl|hh")
    net_cfg, train_cfg = _net_and_train_cfg(base, dataset.num_classes)
    rows = ablate(cfg["suite"], dataset, hider, net_cfg, train_cfg)
    headers = ["variant", "train_top1", "val_top1"]
    table_rows = [[r.name, r.train_top1, r.val_top1] for r in rows]
    table = report.text_table(headers, table_rows)
    print(table)
    (out / "table.txt").write_text(table + "\n")
    report.write_tsv(out / "table.tsv", headers, table_rows)
    report.plot_ablation(rows, out / "ablation.png")


def cmd_inspect_dwt(cfg: dict, fingerprint: str) -> None:
    out = _out_dir(cfg, fingerprint)
    if cfg["clip"]:
        clip = torch.from_numpy(np.asarray(tensorio.load_tensor(cfg["clip"]), dtype=np.float32))
    else:
        dataset = load_manifest(_data_root(cfg))
        secrets = dataset.secrets("train") + dataset.secrets("val")
        if cfg["index"] >= len(secrets):
            raise DataError(f"index {cfg['index']} out of range ({len(secrets)} secrets)")
        clip = dataset.load(secrets[cfg["index"]])
    from .wavelet import multilevel_dwt

    rows = report.band_energy_fractions(clip, cfg["levels"])
    headers = ["level", "ll", "lh", "hl", "hh"]
    table_rows = [[r["level"], r["ll"], r["lh"], r["hl"], r["hh"]] for r in rows]
    table = report.text_table(headers, table_rows)
    print(table)
    (out / "energy.txt").write_text(table + "\n")
    report.write_tsv(out / "energy.tsv", headers, table_rows)
    report.plot_energy(rows, out / "energy.png")
    bands_dir = out / "bands"
    bands_dir.mkdir(exist_ok=True)
    for bands in multilevel_dwt(clip, cfg["levels"]):
        for name, tensor in bands.bands().items():
            tensorio.save_tensor(bands_dir / f"level{bands.level}_{name}.tns", tensor.numpy())


def cmd_report(cfg: dict, fingerprint: str) -> None:
    if not cfg["run"]:
        raise ConfigError("--run is required for report")
    run = Path(cfg["run"])
    records_path = run / "records.jsonl"
    if not records_path.is_file():
        raise DataError(f"no records.jsonl in {run}")
    out = Path(cfg["out"]) if cfg["out"] else run
    out.mkdir(parents=True, exist_ok=True)
    records = read_records(records_path)
    best = max(records, key=lambda r: r.val_top1)
    headers = ["epoch", "train_top1", "val_top1", "loss_total"]
    rows = [[r.epoch, r.train_top1, r.val_top1, r.loss_total] for r in records]
    table = report.text_table(headers, rows)
    (out / "summary.txt").write_text(
        table + f"\n\nbest val top1 {best.val_top1:.4f} at epoch {best.epoch}\n"
    )
    report.write_tsv(out / "summary.tsv", headers, rows)
    report.plot_training_curves(records, out / "curves.png")
    print(table)
    print(f"best val top1 {best.val_top1:.4f} at epoch {best.epoch}")

    checkpoint = run / "checkpoint.ckpt"
    data_root = cfg.get("data") or os.environ.get(ENV_DATA_ROOT, "")
    if checkpoint.is_file() and data_root:
        dataset = load_manifest(Path(data_root))
        model, hider = _load_checkpoint_model(checkpoint, None)
        secrets = dataset.secrets("val") or dataset.secrets("train")
        covers = dataset.covers("val") or dataset.covers("train")
        rng = np.random.default_rng(cfg["seed"])
        weight_rows = []
        sample_stego = None
        with torch.no_grad():
            for _ in range(min(cfg["samples"], len(secrets))):
                srec = secrets[int(rng.integers(0, len(secrets)))]
                crec = covers[int(rng.integers(0, len(covers)))]
                stego = hider.embed(dataset.load(crec), dataset.load(srec)).stego
                sample_stego = stego
                output = model(stego)
                weight_rows.append(output.band_weights.numpy())
        if weight_rows:
            report.plot_band_weights(np.stack(weight_rows), out / "band_weights.png")
            report.plot_attention_maps(model, sample_stego, out)
            print(f"figures written to {out}")


COMMANDS = {
    "gendata": cmd_gendata,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "inspect-dwt": cmd_inspect_dwt,
    "report": cmd_report,
}


def _final_record(status: str, kind: str = "", detail: str = "") -> None:
    parts = [f"stegact: status={status}"]
    if kind:
        parts.append(f"kind={kind}")
    if detail:
        parts.append(f'detail="{detail}"')
    print(" ".join(parts), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("a subcommand is required (see --help)")
        cfg = resolve_options(args, args.command)
        fingerprint = config_fingerprint(args.command, cfg)
        print(f"config_fingerprint={fingerprint}")
        COMMANDS[args.command](cfg, fingerprint)
    except ConfigError as exc:
        _final_record("error", "config", str(exc))
        return 1
    except DataError as exc:
        _final_record("error", "data", str(exc))
        return 2
    except NumericsError as exc:
        _final_record("error", "numerics", str(exc))
        return 3
    _final_record("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
