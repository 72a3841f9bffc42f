"""Operator surface: data generation, training, distillation, evaluation,
the epoch sweep, gradient checking, and format info.

Every run writes a resolved-config JSON next to its outputs, output files
carry no timestamps, and identical inputs plus an identical seed reproduce
every artifact byte-for-byte. Exit codes: 0 success, 1 usage, 2 bad
input/validation, 3 numeric failure. DCLIP_SEED serves as the seed fallback
when --seed is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import TOLERANCE, run_suite
from .data import (
    SPEC_FILE,
    SyntheticSpec,
    encode_class_prompts,
    gen_synthetic,
    load_cache_pair,
    load_labels,
    read_cache,
    write_cache,
)
from .evaluation import build_report, confusion_matrix, write_confusion_csv
from .exceptions import DclipError, InputError, NumericError, ParameterError, ParseError, ValidationError
from .training import (
    TrainConfig,
    distill_student,
    epoch_sweep,
    prepare_data,
    train_teacher,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise SystemExit2(f"{self.prog}: error: {message}")


class SystemExit2(Exception):
    pass


def _default_seed() -> int:
    env = os.environ.get("DCLIP_SEED")
    return int(env) if env else 0


def _write_resolved_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="run seed (default: DCLIP_SEED or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker cap (>=1)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=["b", "l"], default="b", help="preset column: b or l")
    p.add_argument("--teacher-epochs", type=int, default=None, help="teacher epochs (b preset: 5, l: 1)")
    p.add_argument("--student-epochs", type=int, default=None, help="student epochs (default 2)")
    p.add_argument("--teacher-lr", type=float, default=None, help="teacher learning rate (default 1e-5)")
    p.add_argument("--student-lr", type=float, default=None, help="student learning rate (default 1e-6)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 32)")
    p.add_argument("--clusters", type=int, default=None, help="aggregation clusters (b: 1, l: 3)")
    p.add_argument("--position-mode", choices=["absolute", "rotary"], default=None,
                   help="position handling (b: absolute, l: rotary)")
    p.add_argument("--anchor", action="store_true", default=None,
                   help="enable the base-encoder anchor loss (l preset: on)")
    p.add_argument("--no-anchor", dest="anchor", action="store_false", help="disable the anchor loss")
    p.add_argument("--anchor-weight", type=float, default=None, help="anchor loss weight (default 1.0)")
    p.add_argument("--grad-clip", type=float, default=None, help="global-norm gradient clip (off by default)")


def _build_config(args) -> TrainConfig:
    overrides = {}
    for attr, key in (
        ("teacher_epochs", "teacher_epochs"),
        ("student_epochs", "student_epochs"),
        ("teacher_lr", "teacher_lr"),
        ("student_lr", "student_lr"),
        ("batch_size", "batch_size"),
        ("clusters", "clusters"),
        ("position_mode", "position_mode"),
        ("anchor_weight", "anchor_weight"),
        ("grad_clip", "grad_clip"),
    ):
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    if args.anchor is not None:
        overrides["anchor_enabled"] = args.anchor
    seed = args.seed if args.seed is not None else _default_seed()
    return TrainConfig.preset(args.variant, seed=seed, **overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="dclip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dclip {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-size", type=int, default=512)
    p.add_argument("--heldout-size", type=int, default=128)
    p.add_argument("--num-concepts", type=int, default=16)
    p.add_argument("--parts-per-image", type=int, default=6)
    p.add_argument("--caption-min", type=int, default=3)
    p.add_argument("--caption-max", type=int, default=8)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--num-classes", type=int, default=10)

    p = sub.add_parser("train-teacher", help="fine-tune the fusion teacher")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("distill", help="distill a student from a teacher checkpoint")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint (teacher.dckp)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score embedding caches (retrieval + zero-shot)")
    _add_common(p)
    p.add_argument("--images", required=True, help="image embedding cache (.dcec)")
    p.add_argument("--texts", required=True, help="text embedding cache (.dcec)")
    p.add_argument("--labels", default=None, help="labels CSV for zero-shot scoring")
    p.add_argument("--prompts", default=None, help="class prompt embedding cache (.dcec)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="teacher-epoch sweep of retrieval vs retention")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--max-epochs", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=20, help="random seeds per check")
    p.add_argument("--eps", type=float, default=1e-3, help="central-difference step")

    p = sub.add_parser("info", help="print version, presets, and file formats")
    _add_common(p)
    return parser


# --------------------------------------------------------------------------
# Subcommand bodies


def _cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    spec = SyntheticSpec(
        num_concepts=args.num_concepts,
        parts_per_image=args.parts_per_image,
        caption_len=(args.caption_min, args.caption_max),
        noise_sigma=args.noise_sigma,
        train_size=args.train_size,
        heldout_size=args.heldout_size,
        num_classes=args.num_classes,
        seed=seed,
    )
    out = Path(args.out)
    gen_synthetic(spec, out)
    _write_resolved_config(out, {"command": "gen-data", "spec": spec.__dict__ | {"caption_len": list(spec.caption_len)}})
    print(f"wrote dataset ({spec.train_size} train / {spec.heldout_size} heldout) to {out}")
    return EXIT_OK


def _cmd_train_teacher(args) -> int:
    config = _build_config(args)
    out = Path(args.out)
    trainer, log = train_teacher(args.data, config, out_dir=out)
    _write_resolved_config(out, {"command": "train-teacher", "config": config.to_dict()})
    vals = log.validation_totals()
    print(f"teacher: {config.teacher_epochs} epochs, validation loss {vals[0]:.5f} -> {vals[-1]:.5f}")
    print(f"checkpoint: {out / 'teacher.dckp'}")
    return EXIT_OK


def _cmd_distill(args) -> int:
    config = _build_config(args)
    out = Path(args.out)
    prepared = prepare_data(args.data, config)
    trainer, log = distill_student(args.data, args.teacher, config, out_dir=out, prepared=prepared)

    # heldout caches so eval (and any external consumer) can run from files
    held = prepared.heldout
    if held:
        ids = [s.id for s in held]
        write_cache(out / "heldout_student_images.dcec", ids, trainer.heldout_image_embeddings())
        write_cache(out / "heldout_base_images.dcec", ids, np.stack([s.base_global for s in held]))
        write_cache(out / "heldout_texts.dcec", ids, np.stack([s.text_global for s in held]))
        spec_path = Path(args.data) / SPEC_FILE
        num_classes = 10
        if spec_path.exists():
            with open(spec_path, "r", encoding="utf-8") as fh:
                num_classes = int(json.load(fh).get("num_classes", 10))
        prompt_ids, prompt_rows = encode_class_prompts(prepared.text_enc, num_classes)
        write_cache(out / "class_prompts.dcec", prompt_ids, prompt_rows)

    _write_resolved_config(out, {"command": "distill", "config": config.to_dict(), "teacher": str(args.teacher)})
    rows = log.val_rows
    print(f"student: {config.student_epochs} epochs, cos_I {rows[0][4]:.6f} -> {rows[-1][4]:.6f}")
    print(f"checkpoint: {out / 'student.dckp'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ids, images, texts = load_cache_pair(args.images, args.texts)
    labels = None
    prompts = None
    if (args.labels is None) != (args.prompts is None):
        raise InputError("zero-shot scoring needs both --labels and --prompts")
    if args.labels is not None:
        label_map = load_labels(args.labels)
        missing = [i for i in ids if i not in label_map]
        if missing:
            raise InputError(f"labels file covers {len(label_map)} ids but not {missing[0]!r}")
        labels = [label_map[i] for i in ids]
        _, prompts = read_cache(args.prompts)

    report = build_report(ids, images, ids, texts, labels=labels, class_prompt_embs=prompts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if labels is not None:
        write_confusion_csv(out / "confusion.csv", confusion_matrix(images, prompts, labels))
    _write_resolved_config(
        out,
        {
            "command": "eval",
            "images": str(args.images),
            "texts": str(args.texts),
            "labels": str(args.labels) if args.labels else None,
            "prompts": str(args.prompts) if args.prompts else None,
        },
    )
    print(json.dumps({"direction": {"t2i": report.t2i, "i2t": report.i2t}, "zero_shot": report.zero_shot}, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    rows = epoch_sweep(args.data, config, args.max_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "sweep.csv", rows)
    _write_resolved_config(out, {"command": "sweep", "config": config.to_dict(), "max_epochs": args.max_epochs})
    for epoch, r1, retention in rows:
        print(f"epoch {epoch}: t2i_r1={r1:.4f} retention={retention:.6f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    results = run_suite(seeds=args.seeds, eps=args.eps)
    failed = False
    for name in sorted(results):
        status = "ok" if results[name] <= TOLERANCE else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{name:<22s} max_rel_err={results[name]:.3e}  {status}")
    if failed:
        print(f"gradcheck FAILED (tolerance {TOLERANCE})")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks within {TOLERANCE}")
    return EXIT_OK


def _cmd_info(args) -> int:
    payload = {
        "version": __version__,
        "variants": {
            "b": TrainConfig.preset("b").to_dict(),
            "l": TrainConfig.preset("l").to_dict(),
        },
        "formats": {
            "embedding_cache": "DCEC v1: magic, u16 version, u32 dim, u32 count, u32-prefixed id block, f32 rows",
            "checkpoint": "DCKP v1: magic, u16 version, u32-prefixed config JSON, named f32 tensors",
            "regions": "JSONL: {image_id, regions: [{bbox, confidence, class_id}]}",
            "train_log": "CSV: epoch,step,total,contrastive,cos_T,cos_I,anchor,tau_loss,tau_agg",
        },
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-teacher": _cmd_train_teacher,
    "distill": _cmd_distill,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "info": _cmd_info,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "threads", 1) < 1:
        print("dclip: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"dclip: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ParseError, ValidationError, ParameterError, DclipError) as exc:
        print(f"dclip: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"dclip: missing file: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
