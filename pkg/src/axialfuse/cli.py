"""Command-line entry point: ``axialfuse <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import AxialFuseError
from .extractor import ExtractorSpec, read_cache
from .model import FUSIONS, AxialFuseModel, ModelConfig, read_checkpoint
from .planar import AugmentPolicy, plane_stacks
from .training import Dataset, ScheduleSpec, TrainConfig, evaluate, format_metric, train_loop
from .volume_io import SPLITS, SynthSpec, load_manifest, load_split, read_volume, synth_dataset, write_stack_array

log = logging.getLogger("axialfuse")


class UsageError(Exception):
    pass


def _per_split(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative integers, got {text!r}")
    return parts


def _parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="axialfuse", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic ellipsoid dataset", formatter_class=fmt)
    s.add_argument("--classes", type=int, default=2, help="number of classes")
    s.add_argument("--side", type=int, default=16, help="cube side length in voxels")
    s.add_argument("--per-split", type=_per_split, default=(20, 5, 5), help="train,validation,test volumes per class")
    s.add_argument("--seed", type=int, default=0, help="dataset seed")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("slice", help="dump the three resized plane stacks of one volume", formatter_class=fmt)
    s.add_argument("--volume", required=True, help="AXV1 volume file")
    s.add_argument("--size", type=int, default=32, help="resized slice side S")
    s.add_argument("--out", required=True, help="output directory")

    for name, helptext in (("train", "train one model"), ("ablate", "run the four ablation configurations")):
        s = sub.add_parser(name, help=helptext, formatter_class=fmt)
        _model_flags(s)
        if name == "ablate":
            s.add_argument("--reduced-layers", type=int, default=6, help="layers of the reduced-capacity row")
            s.add_argument("--reduced-heads", type=int, default=4, help="heads of the reduced-capacity row")

    s = sub.add_parser("eval", help="evaluate a checkpoint on one split", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, help="AXC1 checkpoint")
    s.add_argument("--manifest", required=True, help="dataset manifest")
    s.add_argument("--split", choices=SPLITS, default="test", help="split to evaluate")
    s.add_argument("--extractor", choices=("stub", "cache"), default=None, help="override the checkpoint's extractor kind")
    s.add_argument("--cache", default=None, help="AXE1 feature cache (extractor=cache)")
    s.add_argument("--batch", type=int, default=4, help="evaluation batch size")

    s = sub.add_parser("gradcheck", help="float64 finite-difference check of every op and block", formatter_class=fmt)
    s.add_argument("--seed", type=int, default=0, help="seed for random test tensors")
    return p


def _model_flags(s: argparse.ArgumentParser) -> None:
    s.add_argument("--manifest", required=True, help="dataset manifest")
    s.add_argument("--fusion", choices=FUSIONS, default="dual_axial", help="cross-plane fusion topology")
    s.add_argument("--embed-dim", type=int, default=32, help="embedding width E")
    s.add_argument("--layers", type=int, default=2, help="encoder layers N")
    s.add_argument("--heads", type=int, default=2, help="attention heads H")
    s.add_argument("--slice-size", type=int, default=32, help="resized slice side S")
    s.add_argument("--patch", type=int, default=8, help="stub extractor patch size")
    s.add_argument("--extractor-seed", type=int, default=0, help="stub extractor weight seed")
    s.add_argument("--dropout", type=float, default=0.0, help="dropout rate")
    s.add_argument("--lr-init", type=float, default=1e-12, help="initial learning rate")
    s.add_argument("--lr-max", type=float, default=1e-5, help="peak learning rate")
    s.add_argument("--warmup", type=int, default=5, help="warmup epochs")
    s.add_argument("--t0", type=int, default=10, help="first warm-restart cycle length (epochs)")
    s.add_argument("--tmult", type=int, default=2, help="cycle length multiplier")
    s.add_argument("--epochs", type=int, default=100, help="training epochs")
    s.add_argument("--max-steps", type=int, default=None, help="stop after this many optimiser steps")
    s.add_argument("--batch", type=int, default=4, help="batch size")
    s.add_argument("--augment", choices=("all", "none"), default="all", help="training augmentations")
    s.add_argument("--aug-prob", type=float, default=0.5, help="per-transform probability")
    s.add_argument("--extractor", choices=("stub", "cache"), default="stub", help="frozen feature source")
    s.add_argument("--cache", default=None, help="AXE1 feature cache (extractor=cache)")
    s.add_argument("--seed", type=int, default=0, help="global seed")
    s.add_argument("--out", required=True, help="output directory")


def _configs(a, manifest, layers=None, heads=None, fusion=None):
    train_set = load_split(manifest, "train")[0]
    shape = tuple(train_set.shape[1:]) if len(train_set) else (16, 16, 16)
    try:
        cfg = ModelConfig(
            embed_dim=a.embed_dim, layers=a.layers if layers is None else layers,
            heads=a.heads if heads is None else heads, num_classes=manifest.num_classes,
            fusion=a.fusion if fusion is None else fusion, slice_size=a.slice_size, volume_shape=shape,
            dropout=a.dropout, extractor=ExtractorSpec(a.extractor, a.embed_dim, a.patch, a.extractor_seed),
        )
        sched = ScheduleSpec(a.lr_init, a.lr_max, a.warmup, a.t0, a.tmult, a.epochs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    policy = AugmentPolicy(p=a.aug_prob) if a.augment == "all" else AugmentPolicy.disabled()
    return cfg, sched, policy, TrainConfig(a.epochs, a.batch, a.seed, a.max_steps)


def _load_cache(a):
    if a.extractor == "cache":
        if not a.cache:
            raise UsageError("--extractor cache requires --cache")
        return read_cache(a.cache)
    return None


def cmd_synth(a) -> int:
    if a.side < 8 or a.classes < 2:
        raise UsageError("--side must be >= 8 and --classes >= 2")
    synth_dataset(SynthSpec(a.per_split, a.classes, a.side, a.seed), a.out)
    print(Path(a.out) / "manifest.tsv")
    return 0


def cmd_slice(a) -> int:
    if a.size < 2:
        raise UsageError("--size must be >= 2")
    v = read_volume(a.volume)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for plane, stack in plane_stacks(v.voxels, a.size, v.id).items():
        # (n, C, S, S) -> (C, n, S, S)
        path = out / f"{v.id}_{plane}.axv"
        write_stack_array(stack.slices.transpose(1, 0, 2, 3), path)
        print(f"{plane}\t{stack.num_slices}\t{path}")
    return 0


def cmd_train(a) -> int:
    manifest = load_manifest(a.manifest)
    cfg, sched, policy, tc = _configs(a, manifest)
    result = train_loop(manifest, cfg, sched, policy, tc, out_dir=a.out, cache=_load_cache(a))
    print(result.log_lines[-1])
    print(f"checkpoint {Path(a.out) / 'best.axc'}")
    return 0


def cmd_eval(a) -> int:
    manifest = load_manifest(a.manifest)
    cache = read_cache(a.cache) if a.cache else None
    config, _ = read_checkpoint(a.checkpoint)
    if a.extractor is not None:
        config.extractor = dataclasses.replace(config.extractor, kind=a.extractor)
    if config.extractor.kind == "cache" and cache is None:
        raise UsageError("cached features need --cache")
    model = AxialFuseModel(config, cache=cache)
    # trainable parameters do not depend on the extractor kind
    model.load_params(a.checkpoint, strict=a.extractor is None)
    data = Dataset.from_manifest(manifest, a.split)
    if not len(data):
        raise AxialFuseError(f"split {a.split!r} is empty")
    report = evaluate(model, data, manifest.task, a.split, a.batch)
    print(f"acc={format_metric(report.accuracy)} auc={format_metric(report.auc)}")
    return 0


def cmd_gradcheck(a) -> int:
    from .gradcheck import format_table, run_suite

    rows = run_suite(a.seed)
    print(format_table(rows))
    failed = [r.name for r in rows if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


ABLATIONS = ("proposed", "reduced_capacity", "sequential", "reversed_qkv")


def cmd_ablate(a) -> int:
    manifest = load_manifest(a.manifest)
    cache = _load_cache(a)
    variants = {
        "proposed": {},
        "reduced_capacity": {"layers": a.reduced_layers, "heads": a.reduced_heads},
        "sequential": {"fusion": "sequential"},
        "reversed_qkv": {"fusion": "reversed_qkv"},
    }
    out = Path(a.out)
    rows = []
    for name in ABLATIONS:
        cfg, sched, policy, tc = _configs(a, manifest, **variants[name])
        r = train_loop(manifest, cfg, sched, policy, tc, out_dir=out / name, cache=cache)
        rows.append((name, r.test_report.accuracy, r.test_report.auc))
    table = format_ablation(rows)
    (out / "ablation.tsv").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def format_ablation(rows) -> str:
    lines = ["method\tacc\tauc"]
    for name, acc, auc in rows:
        auc_s = "na" if auc is None else f"{100 * auc:.1f}"
        lines.append(f"{name}\t{100 * acc:.1f}\t{auc_s}")
    return "\n".join(lines)


COMMANDS = {
    "synth": cmd_synth,
    "slice": cmd_slice,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"axialfuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (AxialFuseError, OSError, ValueError) as exc:
        print(f"axialfuse {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
