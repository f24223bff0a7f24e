"""Command-line interface.

Exit codes: 0 success, 2 for contract violations (bad inputs, malformed
files, impossible configurations), 1 for unexpected internal failures.
Set LUNGDENOISE_THREADS to pin the BLAS thread count before startup.
"""
from __future__ import annotations

import os
import sys

_threads = os.environ.get("LUNGDENOISE_THREADS")
if _threads:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

import argparse
import json

import numpy as np

from . import __version__
from . import pipeline
from .errors import LengthError, LungDenoiseError, RateError
from .model import VARIANTS, DenoiseModel
from .noise import TEST_LEVELS_DB, TRAIN_LEVELS_DB
from .segmenter import SEGMENT_LEN
from .signal_io import AudioClip, read_wav, write_wav
from .trainer import TrainConfig, denoise_segments


def _levels(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _kinds(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=111)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--deterministic", action="store_true",
                   help="force 64-bit compute regardless of --precision")
    p.add_argument("--kinds", type=_kinds, default=None,
                   help="restrict training pairs to these noise kinds")


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       lr=args.lr, patience=args.patience, seed=args.seed)


def _precision(args) -> str:
    return "f64" if args.deterministic else args.precision


# --- subcommand bodies -------------------------------------------------------

def cmd_prepare(args) -> int:
    summary = pipeline.prepare_corpus(
        args.input, args.out, seed=args.seed, dataset=args.dataset,
        normalize=not args.no_normalize, progress=_say)
    print(json.dumps(summary, indent=2))
    if summary["failures"] and summary["clips"] == 0:
        return 2
    return 0


def cmd_mix(args) -> int:
    summary = pipeline.mix_corpus(
        args.corpus, seed=args.seed, kinds=args.kinds,
        train_levels=tuple(args.train_levels),
        test_levels=tuple(args.test_levels),
        heart_pool=args.heart_pool, hospital_pool=args.hospital_pool,
        audit=args.audit)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_train(args) -> int:
    summary = pipeline.train_run(
        args.corpus, args.out, variant=args.variant,
        precision=_precision(args), train_cfg=_train_cfg(args),
        kinds=args.kinds, progress=_say)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_denoise(args) -> int:
    model = DenoiseModel.load(args.checkpoint)
    if args.input.endswith(".wav"):
        clip = read_wav(args.input)
        if clip.sample_rate != 8000:
            raise RateError(
                f"denoise expects 8000 Hz input, got {clip.sample_rate}; "
                "run prepare/resample first")
        samples = clip.samples
    else:
        samples = np.fromfile(args.input, dtype="<f8")

    n_seg = len(samples) // SEGMENT_LEN
    if n_seg == 0:
        raise LengthError(
            f"input holds {len(samples)} samples, need at least {SEGMENT_LEN}")
    used = n_seg * SEGMENT_LEN
    if used != len(samples):
        _say(f"dropping {len(samples) - used} trailing samples")
    segs = samples[:used].reshape(n_seg, SEGMENT_LEN)

    out = denoise_segments(model, segs).reshape(-1)
    if args.out.endswith(".wav"):
        write_wav(AudioClip(samples=out, sample_rate=8000), args.out)
    else:
        out.astype("<f8").tofile(args.out)
    _say(f"wrote {args.out} ({n_seg} segments)")
    return 0


def cmd_eval(args) -> int:
    agg = pipeline.evaluate_run(
        args.corpus, args.checkpoint, args.out,
        kinds=args.kinds, levels=args.levels)
    print(json.dumps(agg, indent=2, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    from .report import render_report

    agg_by_variant = {}
    for variant in args.variants:
        run_dir = os.path.join(args.out, variant.replace("+", "plus"))
        _say(f"=== {variant} ===")
        pipeline.train_run(
            args.corpus, run_dir, variant=variant,
            precision=_precision(args), train_cfg=_train_cfg(args),
            kinds=args.kinds, progress=_say)
        agg = pipeline.evaluate_run(
            args.corpus, os.path.join(run_dir, pipeline.CHECKPOINT),
            os.path.join(run_dir, "eval"), kinds=args.kinds)
        agg_by_variant[variant] = agg
    written = render_report(agg_by_variant, args.out)
    print(json.dumps({"written": written}, indent=2))
    return 0


def cmd_report(args) -> int:
    from .report import load_aggregates, render_report

    agg_by_variant = {}
    for item in args.inputs:
        if "=" in item:
            variant, path = item.split("=", 1)
        else:
            variant, path = os.path.basename(os.path.dirname(item)) or "run", item
        agg_by_variant[variant] = load_aggregates(path)
    written = render_report(agg_by_variant, args.out)
    print(json.dumps({"written": written}, indent=2))
    return 0


def cmd_fixtures(args) -> int:
    from .fixtures import make_fixture_corpus

    paths = make_fixture_corpus(
        args.out, n_lung=args.lung, seed=args.seed,
        n_heart=args.heart, n_hospital=args.hospital,
        seconds=args.seconds)
    print(json.dumps({k: len(v) for k, v in paths.items()}, indent=2))
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lungdenoise",
        description="Lung-sound denoising: corpus synthesis, training, "
                    "evaluation, reports.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest and segment a WAV corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=111)
    p.add_argument("--dataset", default="local")
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("mix", help="contaminate segments at target SNRs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=111)
    p.add_argument("--kinds", type=_kinds, default=["wgn"])
    p.add_argument("--train-levels", type=_levels,
                   default=list(TRAIN_LEVELS_DB))
    p.add_argument("--test-levels", type=_levels,
                   default=list(TEST_LEVELS_DB))
    p.add_argument("--heart-pool")
    p.add_argument("--hospital-pool")
    p.add_argument("--audit", action="store_true",
                   help="re-verify every realized SNR from the files")
    p.set_defaults(fn=cmd_mix)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="uformer")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("denoise", help="run a checkpoint over audio")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help=".wav at 8 kHz or raw .f64 segments")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_denoise)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", type=_kinds, default=None)
    p.add_argument("--levels", type=_levels, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and score all variants")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", type=_kinds,
                   default=["noformer", "uformer", "uformer+"])
    _add_train_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="render figures + CSV from aggregates")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+",
                   help="aggregates.json paths, optionally variant=path")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("fixtures", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--lung", type=int, default=12)
    p.add_argument("--heart", type=int, default=4)
    p.add_argument("--hospital", type=int, default=4)
    p.add_argument("--seconds", type=float, default=12.0)
    p.add_argument("--seed", type=int, default=111)
    p.set_defaults(fn=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except LungDenoiseError as exc:
        _say(f"error ({type(exc).__name__}): {exc}")
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _say(f"internal error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
