"""Fixed-length segmentation and corpus bookkeeping.

Clips (already at the working rate) are cut into exact one-second
windows. A leftover tail covering at least half a window is kept by
concatenating it with itself and truncating; shorter tails are dropped.
Splits are assigned per *clip*, never per segment, so no recording leaks
across train/val/test.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusTooSmall, LengthError, ManifestError, RateError
from .signal_io import AudioClip, TARGET_RATE

SEGMENT_LEN = 8000  # one second at the working rate
RESIDUAL_KEEP_RATIO = 0.5

TRAIN, VAL, TEST = "train", "val", "test"
SPLITS = (TRAIN, VAL, TEST)


@dataclass
class Segment:
    seg_id: str
    parent: str
    index: int
    samples: np.ndarray


@dataclass(frozen=True)
class ManifestEntry:
    seg_id: str
    parent: str
    split: str
    dataset: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    seed: int

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def seg_ids(self) -> list[str]:
        return [e.seg_id for e in self.entries]


def clip_stem(clip: AudioClip, fallback: str) -> str:
    """Stable parent id for a clip: source basename without extension."""
    if not clip.source:
        return fallback
    stem = os.path.splitext(os.path.basename(clip.source))[0]
    return stem or fallback


def segment_clip(clip: AudioClip, parent: str | None = None) -> list[Segment]:
    """Cut one clip into SEGMENT_LEN windows.

    The tail rule: a residual of r samples survives iff
    r / SEGMENT_LEN >= RESIDUAL_KEEP_RATIO, in which case the tail is
    doubled (tail then tail again) and truncated to SEGMENT_LEN. A clip
    shorter than half a window therefore yields nothing.
    """
    if clip.sample_rate != TARGET_RATE:
        raise RateError(
            f"segmentation expects {TARGET_RATE} Hz, got {clip.sample_rate}"
        )
    parent = parent if parent is not None else clip_stem(clip, "clip")
    x = np.asarray(clip.samples, dtype=np.float64)

    out: list[Segment] = []
    n_full = len(x) // SEGMENT_LEN
    for i in range(n_full):
        out.append(Segment(
            seg_id=f"{parent}.seg{i:03d}", parent=parent, index=i,
            samples=x[i * SEGMENT_LEN : (i + 1) * SEGMENT_LEN].copy(),
        ))

    tail = x[n_full * SEGMENT_LEN :]
    if len(tail) / SEGMENT_LEN >= RESIDUAL_KEEP_RATIO:
        doubled = np.concatenate([tail, tail])[:SEGMENT_LEN]
        out.append(Segment(
            seg_id=f"{parent}.seg{n_full:03d}", parent=parent, index=n_full,
            samples=doubled,
        ))
    return out


def split_clips(parents: list[str], seed: int,
                train_frac: float = 0.8,
                val_frac: float = 0.1) -> dict[str, str]:
    """Assign a split tag to each parent clip id.

    Shuffle order is a pure function of the seed. The test share is
    whatever remains after rounding the train pool; validation takes
    ceil(val_frac * pool) clips out of that pool.
    """
    n = len(parents)
    if n < 3:
        raise CorpusTooSmall(f"need at least 3 clips to split, got {n}")

    order = list(parents)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)

    n_pool = int(round(train_frac * n))
    n_val = math.ceil(val_frac * n_pool)
    n_train = n_pool - n_val
    n_test = n - n_pool
    if min(n_train, n_val, n_test) < 1:
        raise CorpusTooSmall(
            f"{n} clips cannot populate all splits "
            f"(train {n_train}, val {n_val}, test {n_test})"
        )

    assignment: dict[str, str] = {}
    for i, pid in enumerate(order):
        if i < n_train:
            assignment[pid] = TRAIN
        elif i < n_pool:
            assignment[pid] = VAL
        else:
            assignment[pid] = TEST
    return assignment


def build_manifest(clips: list[AudioClip], seed: int,
                   dataset: str = "local",
                   train_frac: float = 0.8,
                   val_frac: float = 0.1) -> tuple[CorpusManifest, list[Segment]]:
    """Segment every clip and assign clip-level splits.

    Returns the manifest and the segments themselves (so callers can
    persist both without re-segmenting). Duplicate parent ids would make
    segment ids collide, so they are rejected.
    """
    parents = []
    for i, clip in enumerate(clips):
        parents.append(clip_stem(clip, f"clip{i:03d}"))
    if len(set(parents)) != len(parents):
        dupes = sorted({p for p in parents if parents.count(p) > 1})
        raise ManifestError(f"duplicate clip ids: {dupes}")

    assignment = split_clips(parents, seed, train_frac, val_frac)

    entries: list[ManifestEntry] = []
    segments: list[Segment] = []
    for clip, parent in zip(clips, parents):
        for seg in segment_clip(clip, parent=parent):
            entries.append(ManifestEntry(
                seg_id=seg.seg_id, parent=parent,
                split=assignment[parent], dataset=dataset,
            ))
            segments.append(seg)
    return CorpusManifest(entries=entries, seed=seed), segments


# --- persistence ------------------------------------------------------------

def write_manifest(path: str, manifest: CorpusManifest) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"seed": manifest.seed}) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps({
                "seg_id": e.seg_id, "parent": e.parent,
                "split": e.split, "dataset": e.dataset,
            }) + "\n")


def read_manifest(path: str) -> CorpusManifest:
    """Inverse of write_manifest, with structural validation."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    if not lines:
        raise ManifestError(f"{path}: manifest is empty")

    try:
        head = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: bad JSON line: {exc}") from exc
    if "seed" not in head:
        raise ManifestError(f"{path}: first line must carry the split seed")

    entries = []
    seen: set[str] = set()
    for row in rows:
        missing = {"seg_id", "parent", "split", "dataset"} - row.keys()
        if missing:
            raise ManifestError(f"{path}: entry missing fields {sorted(missing)}")
        if row["split"] not in SPLITS:
            raise ManifestError(f"{path}: unknown split {row['split']!r}")
        if row["seg_id"] in seen:
            raise ManifestError(f"{path}: duplicate segment id {row['seg_id']!r}")
        seen.add(row["seg_id"])
        entries.append(ManifestEntry(
            seg_id=row["seg_id"], parent=row["parent"],
            split=row["split"], dataset=row["dataset"],
        ))
    return CorpusManifest(entries=entries, seed=int(head["seed"]))


class SegmentStore:
    """Flat directory of raw float64 little-endian vectors, one per id."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def path_for(self, seg_id: str) -> str:
        return os.path.join(self.root, f"{seg_id}.f64")

    def write(self, seg_id: str, samples: np.ndarray) -> str:
        path = self.path_for(seg_id)
        np.asarray(samples, dtype="<f8").tofile(path)
        return path

    def read(self, seg_id: str, expect_len: int | None = SEGMENT_LEN) -> np.ndarray:
        path = self.path_for(seg_id)
        try:
            raw = np.fromfile(path, dtype="<f8")
        except OSError as exc:
            raise ManifestError(f"missing segment file {path}") from exc
        if expect_len is not None and len(raw) != expect_len:
            raise LengthError(
                f"{path}: expected {expect_len} samples, found {len(raw)}"
            )
        return raw

    def exists(self, seg_id: str) -> bool:
        return os.path.exists(self.path_for(seg_id))
