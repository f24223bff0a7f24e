"""Segmentation windows, the residual tail rule, and manifest splits."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lungdenoise.errors import CorpusTooSmall, LengthError, ManifestError, RateError
from lungdenoise.segmenter import (
    SEGMENT_LEN,
    SegmentStore,
    build_manifest,
    read_manifest,
    segment_clip,
    split_clips,
    write_manifest,
)
from lungdenoise.signal_io import AudioClip


def clip_of(n: int, source: str = "c", rate: int = 8000,
            seed: int = 0) -> AudioClip:
    rng = np.random.default_rng(seed)
    return AudioClip(rng.uniform(-1, 1, n), rate, source=source)


class TestSegmentClip:
    def test_exact_fit_is_one_segment(self):
        clip = clip_of(8000)
        segs = segment_clip(clip, parent="p")
        assert len(segs) == 1
        assert segs[0].seg_id == "p.seg000"
        assert np.array_equal(segs[0].samples, clip.samples)

    def test_tail_kept_when_half_or_more(self):
        clip = clip_of(20000)
        segs = segment_clip(clip, parent="p")
        assert len(segs) == 3
        tail = clip.samples[16000:20000]
        assert np.array_equal(segs[2].samples, np.concatenate([tail, tail]))
        assert np.array_equal(segs[0].samples, clip.samples[:8000])
        assert np.array_equal(segs[1].samples, clip.samples[8000:16000])

    def test_short_tail_discarded(self):
        assert segment_clip(clip_of(3600)) == []

    def test_sub_second_clip_doubles_itself(self):
        clip = clip_of(5000)
        segs = segment_clip(clip, parent="p")
        assert len(segs) == 1
        doubled = np.concatenate([clip.samples, clip.samples])[:8000]
        assert np.array_equal(segs[0].samples, doubled)

    def test_wrong_rate_rejected(self):
        with pytest.raises(RateError):
            segment_clip(clip_of(8000, rate=44100))

    @given(st.integers(1, 40000))
    def test_count_and_slicing_invariants(self, n):
        clip = clip_of(n, seed=n)
        segs = segment_clip(clip, parent="p")
        n_full = n // SEGMENT_LEN
        keep_tail = (n % SEGMENT_LEN) / SEGMENT_LEN >= 0.5
        assert len(segs) == n_full + (1 if keep_tail else 0)
        for k in range(n_full):
            assert segs[k].samples.shape == (SEGMENT_LEN,)
            assert np.array_equal(
                segs[k].samples,
                clip.samples[SEGMENT_LEN * k : SEGMENT_LEN * (k + 1)])
        if keep_tail:
            assert segs[-1].samples.shape == (SEGMENT_LEN,)


class TestSplits:
    def test_ten_clip_arithmetic(self):
        parents = [f"c{i}" for i in range(10)]
        tags = split_clips(parents, seed=111)
        counts = {t: sum(1 for v in tags.values() if v == t)
                  for t in ("train", "val", "test")}
        assert counts == {"train": 7, "val": 1, "test": 2}

    def test_fraction_arithmetic_generalizes(self):
        for n in (3, 5, 17, 42, 100):
            tags = split_clips([f"c{i}" for i in range(n)], seed=1)
            pool = round(0.8 * n)
            val = math.ceil(0.1 * pool)
            got = {t: sum(1 for v in tags.values() if v == t)
                   for t in ("train", "val", "test")}
            assert got == {"train": pool - val, "val": val, "test": n - pool}

    def test_deterministic_for_seed(self):
        parents = [f"c{i}" for i in range(12)]
        assert split_clips(parents, seed=9) == split_clips(parents, seed=9)
        assert split_clips(parents, seed=9) != split_clips(parents, seed=10)

    def test_two_clips_too_small(self):
        with pytest.raises(CorpusTooSmall):
            split_clips(["a", "b"], seed=0)


class TestManifest:
    def make_clips(self, n=6, length=12000):
        return [clip_of(length, source=f"/in/rec{i:02d}.wav", seed=i)
                for i in range(n)]

    def test_partition_and_clip_locality(self):
        manifest, segments = build_manifest(self.make_clips(), seed=3)
        ids = manifest.seg_ids()
        assert len(ids) == len(set(ids)) == len(segments)
        by_parent = {}
        for e in manifest.entries:
            by_parent.setdefault(e.parent, set()).add(e.split)
        for splits in by_parent.values():
            assert len(splits) == 1

    def test_duplicate_stems_rejected(self):
        clips = self.make_clips(3)
        clips[1].source = clips[0].source
        with pytest.raises(ManifestError):
            build_manifest(clips, seed=3)

    def test_jsonl_shape_and_roundtrip(self, tmp_path):
        manifest, _ = build_manifest(self.make_clips(), seed=3, dataset="dx")
        path = str(tmp_path / "manifest.jsonl")
        write_manifest(path, manifest)

        lines = open(path).read().splitlines()
        header = json.loads(lines[0])
        assert header["seed"] == 3
        entry = json.loads(lines[1])
        assert set(entry) == {"seg_id", "parent", "split", "dataset"}
        assert entry["dataset"] == "dx"

        back = read_manifest(path)
        assert back.seed == manifest.seed
        assert back.entries == manifest.entries

    def test_rerun_same_seed_identical_bytes(self, tmp_path):
        p1, p2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        write_manifest(p1, build_manifest(self.make_clips(), seed=7)[0])
        write_manifest(p2, build_manifest(self.make_clips(), seed=7)[0])
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_malformed_manifest_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"seed": 1}\n{"seg_id": "x"}\n')
        with pytest.raises(ManifestError):
            read_manifest(str(path))


class TestSegmentStore:
    def test_roundtrip_bitwise(self, tmp_path):
        store = SegmentStore(str(tmp_path / "clean"))
        x = np.random.default_rng(4).uniform(-1, 1, SEGMENT_LEN)
        store.write("p.seg000", x)
        assert np.array_equal(store.read("p.seg000"), x)

    def test_length_validated(self, tmp_path):
        store = SegmentStore(str(tmp_path / "clean"))
        path = store.path_for("p.seg000")
        np.zeros(100).tofile(path)
        with pytest.raises(LengthError):
            store.read("p.seg000")
