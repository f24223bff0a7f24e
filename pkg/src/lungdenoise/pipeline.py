"""End-to-end corpus pipeline: prepare, mix, train, evaluate.

Each stage is a plain function over directories, so the CLI stays a thin
argument parser and a full run can be replayed from a recorded spec
(``run_full``) for determinism checks. All iteration orders are fixed
(sorted filenames, manifest order), which makes every artifact byte
reproducible under the 64-bit deterministic mode.
"""
from __future__ import annotations

import glob
import json
import os
from dataclasses import asdict

import numpy as np

from . import noise as noise_mod
from .errors import CorpusTooSmall, LungDenoiseError, ManifestError, PoolError
from .metrics import aggregate, evaluate_pairs, write_aggregates, write_metrics_csv
from .model import DenoiseModel, ModelConfig, variant_config
from .noise import (
    NoisePool,
    TEST_LEVELS_DB,
    TRAIN_LEVELS_DB,
    build_noisy_corpus,
    read_mix_records,
    write_mix_records,
)
from .segmenter import (
    CorpusManifest,
    SegmentStore,
    build_manifest,
    read_manifest,
    write_manifest,
)
from .signal_io import PreprocessConfig, preprocess, read_wav
from .trainer import TrainConfig, denoise_segments, train

CLEAN_DIR = "clean"
NOISY_DIR = "noisy"
MANIFEST = "manifest.jsonl"
MIXES = "mixes.jsonl"
CHECKPOINT = "best.ckpt"
RUNLOG = "runlog.csv"
RUNSPEC = "runspec.json"
METRICS_CSV = "metrics.csv"
AGGREGATES = "aggregates.json"


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- stage 1: prepare --------------------------------------------------------

def prepare_corpus(input_dir: str, out_dir: str, seed: int,
                   dataset: str = "local", normalize: bool = True,
                   train_frac: float = 0.8, val_frac: float = 0.1,
                   progress=None) -> dict:
    """Ingest WAVs, condition them, segment, split, and persist.

    Files that fail to parse are collected (with their errors) and the
    run continues; the stage only fails outright when nothing survives.
    """
    wavs = sorted(glob.glob(os.path.join(input_dir, "*.wav")))
    if not wavs:
        raise CorpusTooSmall(f"no .wav files in {input_dir}")

    cfg = PreprocessConfig(normalize=normalize)
    clips = []
    failures: list[tuple[str, str]] = []
    for path in wavs:
        try:
            clips.append(preprocess(read_wav(path), cfg))
        except LungDenoiseError as exc:
            failures.append((path, f"{type(exc).__name__}: {exc}"))
            if progress is not None:
                progress(f"skipped {path}: {exc}")
    if not clips:
        raise CorpusTooSmall(
            f"all {len(wavs)} files failed to ingest; first error: "
            f"{failures[0][1]}"
        )

    manifest, segments = build_manifest(
        clips, seed=seed, dataset=dataset,
        train_frac=train_frac, val_frac=val_frac)

    os.makedirs(out_dir, exist_ok=True)
    store = SegmentStore(os.path.join(out_dir, CLEAN_DIR))
    for seg in segments:
        store.write(seg.seg_id, seg.samples)
    write_manifest(os.path.join(out_dir, MANIFEST), manifest)

    counts = {s: len(manifest.by_split(s)) for s in ("train", "val", "test")}
    return {
        "clips": len(clips),
        "segments": len(segments),
        "splits": counts,
        "failures": failures,
    }


# --- stage 2: mix ------------------------------------------------------------

def _pool_from_dir(path: str | None, name: str) -> NoisePool | None:
    if path is None:
        return None
    wavs = sorted(glob.glob(os.path.join(path, "*.wav")))
    if not wavs:
        raise PoolError(f"{name} pool directory {path} has no .wav files")
    clips = []
    for p in wavs:
        clip = read_wav(p)
        clip.source = os.path.splitext(os.path.basename(p))[0]
        clips.append(clip)
    return NoisePool(clips, name=name)


def mix_corpus(corpus_dir: str, seed: int, kinds: list[str],
               train_levels: tuple = TRAIN_LEVELS_DB,
               test_levels: tuple = TEST_LEVELS_DB,
               heart_pool: str | None = None,
               hospital_pool: str | None = None,
               audit: bool = False) -> dict:
    """Generate the noisy counterpart of every manifest segment."""
    manifest = read_manifest(os.path.join(corpus_dir, MANIFEST))
    clean = SegmentStore(os.path.join(corpus_dir, CLEAN_DIR))
    noisy = SegmentStore(os.path.join(corpus_dir, NOISY_DIR))

    kinds = [noise_mod.canonical_kind(k) for k in kinds]
    heart = _pool_from_dir(heart_pool, "heart")
    hospital = _pool_from_dir(hospital_pool, "hospital")
    if noise_mod.HEART in kinds and heart is None:
        raise PoolError("kind Heart requested without --heart-pool")
    if noise_mod.HEART_HOSPITAL in kinds and (heart is None or hospital is None):
        raise PoolError("kind HeartPlusHospital needs both noise pools")

    records = build_noisy_corpus(
        manifest, clean, noisy, master_seed=seed, kinds=kinds,
        train_levels=tuple(train_levels), test_levels=tuple(test_levels),
        heart=heart, hospital=hospital)
    write_mix_records(os.path.join(corpus_dir, MIXES), records)

    if audit:
        noise_mod.audit_mixes(records, clean, noisy)
    return {"pairs": len(records), "kinds": kinds,
            "train_levels": list(train_levels),
            "test_levels": list(test_levels), "audited": audit}


# --- data loading ------------------------------------------------------------

def load_pairs(corpus_dir: str, split: str, kinds: list[str] | None = None,
               levels: list[float] | None = None):
    """Materialize (noisy, clean) arrays for one split, manifest order.

    Returns (x_noisy, y_clean, records) with arrays shaped (N, T).
    """
    manifest = read_manifest(os.path.join(corpus_dir, MANIFEST))
    records = read_mix_records(os.path.join(corpus_dir, MIXES))
    clean = SegmentStore(os.path.join(corpus_dir, CLEAN_DIR))
    noisy = SegmentStore(os.path.join(corpus_dir, NOISY_DIR))

    split_ids = {e.seg_id for e in manifest.by_split(split)}
    want_kinds = ({noise_mod.canonical_kind(k) for k in kinds}
                  if kinds else None)
    want_levels = set(float(v) for v in levels) if levels else None

    chosen = [r for r in records
              if r.clean_seg_id in split_ids
              and (want_kinds is None or r.kind in want_kinds)
              and (want_levels is None or r.target_snr_db in want_levels)]
    if not chosen:
        raise ManifestError(
            f"no mixed pairs for split {split!r} with the given filters")

    x = np.stack([noisy.read(r.noisy_id) for r in chosen])
    y = np.stack([clean.read(r.clean_seg_id) for r in chosen])
    return x, y, chosen


# --- stage 3: train ----------------------------------------------------------

def train_run(corpus_dir: str, out_dir: str, variant: str = "uformer",
              precision: str = "f64", train_cfg: TrainConfig | None = None,
              kinds: list[str] | None = None,
              levels: list[float] | None = None,
              model_overrides: dict | None = None,
              progress=None) -> dict:
    """Train one variant on a mixed corpus and write run artifacts."""
    train_cfg = train_cfg or TrainConfig()
    overrides = dict(model_overrides or {})
    overrides["dtype"] = precision
    cfg = variant_config(variant, **overrides)

    x_tr, y_tr, _ = load_pairs(corpus_dir, "train", kinds, levels)
    x_va, y_va, _ = load_pairs(corpus_dir, "val", kinds, levels)

    os.makedirs(out_dir, exist_ok=True)
    runspec = {
        "stage": "train",
        "corpus": os.path.abspath(corpus_dir),
        "variant": variant,
        "precision": precision,
        "kinds": sorted(kinds) if kinds else None,
        "levels": sorted(levels) if levels else None,
        "model": cfg.to_dict(),
        "train": asdict(train_cfg),
    }
    _write_json(os.path.join(out_dir, RUNSPEC), runspec)
    _write_json(os.path.join(out_dir, "config.json"),
                {"model": cfg.to_dict(), "train": asdict(train_cfg)})

    model = DenoiseModel(cfg)
    result = train(
        model, x_tr, y_tr, x_va, y_va, train_cfg,
        checkpoint_path=os.path.join(out_dir, CHECKPOINT),
        log_path=os.path.join(out_dir, RUNLOG),
        progress=progress)

    summary = {
        "variant": variant,
        "n_parameters": model.n_parameters,
        "train_pairs": len(x_tr),
        "val_pairs": len(x_va),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "stopped_epoch": result.stopped_epoch,
        "stop_reason": result.stop_reason,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


# --- stage 4: evaluate -------------------------------------------------------

def evaluate_run(corpus_dir: str, checkpoint: str, out_dir: str,
                 kinds: list[str] | None = None,
                 levels: list[float] | None = None,
                 split: str = "test") -> dict:
    """Denoise the held-out split and write metrics.csv + aggregates."""
    model = DenoiseModel.load(checkpoint)
    x, y, records = load_pairs(corpus_dir, split, kinds, levels)
    estimates = denoise_segments(model, x)

    rows = evaluate_pairs(
        (r.clean_seg_id, r.kind, r.target_snr_db, y[i], x[i], estimates[i])
        for i, r in enumerate(records))
    agg = aggregate(rows)

    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(out_dir, METRICS_CSV), rows)
    write_aggregates(os.path.join(out_dir, AGGREGATES), agg)
    return agg


# --- full pipeline -----------------------------------------------------------

def run_full(spec: dict, workdir: str, progress=None) -> dict:
    """Execute fixtures -> prepare -> mix -> train -> eval from one spec.

    The same spec and seed produce byte-identical manifests, checkpoints
    and metric CSVs in 64-bit precision. Returns artifact paths.
    """
    from .fixtures import make_fixture_corpus  # local import: optional stage

    os.makedirs(workdir, exist_ok=True)
    seed = int(spec.get("seed", 111))

    raw_dir = spec.get("input_dir")
    if raw_dir is None:
        fx = dict(spec.get("fixtures", {"n_lung": 6}))
        raw_dir = os.path.join(workdir, "raw")
        make_fixture_corpus(raw_dir, seed=seed, **fx)

    corpus_dir = os.path.join(workdir, "corpus")
    prepare_corpus(raw_dir, corpus_dir, seed=seed,
                   dataset=spec.get("dataset", "fixture"),
                   progress=progress)

    kinds = spec.get("kinds", ["wgn"])
    heart_dir = os.path.join(raw_dir, "heart")
    hospital_dir = os.path.join(raw_dir, "hospital")
    mix_corpus(
        corpus_dir, seed=seed, kinds=kinds,
        train_levels=tuple(spec.get("train_levels", TRAIN_LEVELS_DB)),
        test_levels=tuple(spec.get("test_levels", TEST_LEVELS_DB)),
        heart_pool=heart_dir if os.path.isdir(heart_dir) else None,
        hospital_pool=hospital_dir if os.path.isdir(hospital_dir) else None,
        audit=bool(spec.get("audit", False)))

    run_dir = os.path.join(workdir, "run")
    train_kwargs = dict(spec.get("train", {}))
    train_kwargs.setdefault("seed", seed)
    train_run(
        corpus_dir, run_dir,
        variant=spec.get("variant", "uformer"),
        precision=spec.get("precision", "f64"),
        train_cfg=TrainConfig(**train_kwargs),
        kinds=kinds,
        model_overrides=spec.get("model"),
        progress=progress)

    eval_dir = os.path.join(workdir, "eval")
    evaluate_run(corpus_dir, os.path.join(run_dir, CHECKPOINT), eval_dir,
                 kinds=kinds)

    return {
        "raw": raw_dir,
        "corpus": corpus_dir,
        "manifest": os.path.join(corpus_dir, MANIFEST),
        "mixes": os.path.join(corpus_dir, MIXES),
        "checkpoint": os.path.join(run_dir, CHECKPOINT),
        "runlog": os.path.join(run_dir, RUNLOG),
        "metrics": os.path.join(eval_dir, METRICS_CSV),
        "aggregates": os.path.join(eval_dir, AGGREGATES),
    }
