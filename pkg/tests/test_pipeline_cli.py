"""Pipeline stages, the command-line surface, and report rendering."""
from __future__ import annotations

import csv
import json
import math
import os

import numpy as np
import pytest

from conftest import segments_of
from lungdenoise import pipeline
from lungdenoise.cli import main
from lungdenoise.errors import CorpusTooSmall, ManifestError, PoolError
from lungdenoise.metrics import read_metrics_csv
from lungdenoise.noise import read_mix_records
from lungdenoise.report import column_name, flatten, render_report, write_report_csv
from lungdenoise.signal_io import AudioClip, read_wav, write_wav

MINI_OVERRIDES = dict(kernel=7, encoder_filters=(2, 3, 3, 4, 4),
                      bottleneck_filters=8, decoder_filters=(4, 3, 3, 3),
                      heads=2, key_dim=3, ffn_units=8)


def tone_clip(seconds: float, freq: float = 300.0, rate: int = 8000):
    t = np.arange(int(seconds * rate)) / rate
    x = 0.5 * np.sin(2 * np.pi * freq * t)
    return AudioClip(samples=x, sample_rate=rate)


class TestPrepare:
    def test_counts_splits_and_failure_collection(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        write_wav(tone_clip(2.0), str(raw / "a.wav"))    # 2 segments
        write_wav(tone_clip(1.25), str(raw / "b.wav"))   # 1 (tail dropped)
        write_wav(tone_clip(3.0), str(raw / "c.wav"))    # 3
        (raw / "broken.wav").write_bytes(b"RIFFjunkdata")

        out = tmp_path / "corpus"
        summary = pipeline.prepare_corpus(str(raw), str(out), seed=11)
        assert summary["clips"] == 3
        assert summary["segments"] == 6
        assert len(summary["failures"]) == 1
        assert "broken.wav" in summary["failures"][0][0]
        assert sum(summary["splits"].values()) == 6
        assert min(summary["splits"].values()) >= 1
        assert os.path.exists(out / pipeline.MANIFEST)
        stored = os.listdir(out / pipeline.CLEAN_DIR)
        assert len(stored) == 6

    def test_empty_and_hopeless_directories(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(CorpusTooSmall):
            pipeline.prepare_corpus(str(empty), str(tmp_path / "o1"), seed=1)
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "x.wav").write_bytes(b"not audio")
        with pytest.raises(CorpusTooSmall):
            pipeline.prepare_corpus(str(bad), str(tmp_path / "o2"), seed=1)


class TestMixAndLoad:
    def test_pair_counts_follow_the_grids(self, prepared_corpus):
        records = read_mix_records(
            os.path.join(prepared_corpus, pipeline.MIXES))
        n_trainval = len(segments_of(prepared_corpus, "train")) + len(
            segments_of(prepared_corpus, "val"))
        n_test = len(segments_of(prepared_corpus, "test"))
        assert len(records) == n_trainval * 6 + n_test * 12

    def test_missing_pools_refused(self, prepared_corpus):
        with pytest.raises(PoolError):
            pipeline.mix_corpus(prepared_corpus, seed=5, kinds=["heart"])

    def test_load_pairs_shapes_and_filters(self, prepared_corpus):
        x, y, records = pipeline.load_pairs(prepared_corpus, "test")
        assert x.shape == y.shape == (len(records), 8000)
        assert all(r.kind == "WGN" for r in records)

        x2, _, recs2 = pipeline.load_pairs(
            prepared_corpus, "test", levels=[-12.0])
        assert len(recs2) == len(segments_of(prepared_corpus, "test"))
        assert all(r.target_snr_db == -12.0 for r in recs2)

        with pytest.raises(ManifestError):
            pipeline.load_pairs(prepared_corpus, "test", levels=[99.0])

    def test_splits_do_not_share_segments(self, prepared_corpus):
        ids = {s: set(segments_of(prepared_corpus, s))
               for s in ("train", "val", "test")}
        assert not ids["train"] & ids["val"]
        assert not ids["train"] & ids["test"]
        assert not ids["val"] & ids["test"]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, prepared_corpus):
    """One tiny-channel training run over the shared corpus."""
    from lungdenoise.trainer import TrainConfig

    out = str(tmp_path_factory.mktemp("run"))
    summary = pipeline.train_run(
        prepared_corpus, out, variant="uformer", precision="f64",
        train_cfg=TrainConfig(epochs=1, batch_size=16, lr=1e-4,
                              patience=5, seed=111),
        model_overrides=MINI_OVERRIDES)
    return out, summary


class TestTrainRun:
    def test_artifacts_written(self, trained_run):
        out, summary = trained_run
        for name in (pipeline.CHECKPOINT, pipeline.RUNLOG, pipeline.RUNSPEC,
                     "config.json", "summary.json"):
            assert os.path.exists(os.path.join(out, name)), name
        assert summary["stopped_epoch"] == 1
        assert summary["stop_reason"] == "max_epochs"
        assert summary["best_epoch"] == 1
        assert math.isfinite(summary["best_val_loss"])

    def test_runspec_records_the_recipe(self, trained_run):
        out, _ = trained_run
        runspec = json.load(open(os.path.join(out, pipeline.RUNSPEC)))
        assert runspec["variant"] == "uformer"
        assert runspec["model"]["attention_blocks"] == 1
        assert runspec["model"]["kernel"] == 7
        assert runspec["train"]["epochs"] == 1
        config = json.load(open(os.path.join(out, "config.json")))
        assert config["model"] == runspec["model"]

    def test_checkpoint_reloads(self, trained_run):
        from lungdenoise.model import DenoiseModel

        out, _ = trained_run
        model = DenoiseModel.load(os.path.join(out, pipeline.CHECKPOINT))
        assert model.cfg.kernel == 7
        assert model.predict(np.zeros((1, 8000))).shape == (1, 8000)


class TestEvaluateRun:
    def test_metrics_cover_the_test_split(self, prepared_corpus, trained_run,
                                          tmp_path):
        out, _ = trained_run
        eval_dir = str(tmp_path / "eval")
        agg = pipeline.evaluate_run(
            prepared_corpus, os.path.join(out, pipeline.CHECKPOINT), eval_dir)
        rows = read_metrics_csv(os.path.join(eval_dir, pipeline.METRICS_CSV))
        n_test = len(segments_of(prepared_corpus, "test"))
        assert len(rows) == n_test * 12
        assert set(agg) == {"WGN"}
        assert len(agg["WGN"]) == 12
        for entry in agg["WGN"].values():
            assert entry["n"] == n_test
        saved = json.load(open(os.path.join(eval_dir, pipeline.AGGREGATES)))
        assert saved == agg


class TestRunFullDeterminism:
    SPEC = {
        "seed": 7,
        "fixtures": {"n_lung": 3, "n_heart": 1, "n_hospital": 1,
                     "seconds": 2.0},
        "kinds": ["wgn"],
        "train_levels": [0.0],
        "test_levels": [0.0, -5.0],
        "train": {"epochs": 1, "batch_size": 8, "lr": 1e-4, "patience": 5},
        "model": MINI_OVERRIDES,
        "precision": "f64",
        "audit": True,
    }

    def test_two_runs_are_byte_identical(self, tmp_path):
        outs = []
        for name in ("one", "two"):
            paths = pipeline.run_full(dict(self.SPEC), str(tmp_path / name))
            outs.append(paths)
        for key in ("manifest", "mixes", "checkpoint", "metrics",
                    "aggregates"):
            a = open(outs[0][key], "rb").read()
            b = open(outs[1][key], "rb").read()
            assert a == b, f"{key} differs between identical runs"


class TestReportRendering:
    def agg(self, base):
        entry = lambda v: {"n": 4, "pred_snr_db": v,
                           "snr_improvement_db": v - 1.0,
                           "n_excluded_snr": 0, "prd": 0.5, "rmse": 0.1}
        return {"WGN": {"-5": entry(base), "0": entry(base + 2)},
                "Pink": {"0": entry(base + 1)}}

    def test_column_names(self):
        assert column_name("uformer", "prd") == "uformer_prd"
        assert column_name("uformer+", "n") == "uformer_plus_n"

    def test_flatten_and_pivot(self, tmp_path):
        agg_by_variant = {"noformer": self.agg(4.0), "uformer+": self.agg(6.0)}
        rows = flatten(agg_by_variant)
        assert len(rows) == 6
        path = str(tmp_path / "report.csv")
        fields = write_report_csv(path, rows)
        assert fields[:2] == ["kind", "level_db"]
        assert "uformer_plus_pred_snr_db" in fields
        table = list(csv.DictReader(open(path)))
        assert len(table) == 3  # (Pink,0), (WGN,-5), (WGN,0)
        wgn0 = [r for r in table
                if r["kind"] == "WGN" and r["level_db"] == "0"][0]
        assert float(wgn0["noformer_pred_snr_db"]) == 6.0
        assert float(wgn0["uformer_plus_pred_snr_db"]) == 8.0

    def test_render_writes_csv_and_figures(self, tmp_path):
        agg_by_variant = {"noformer": self.agg(4.0), "uformer": self.agg(6.0)}
        out = str(tmp_path / "report")
        written = render_report(agg_by_variant, out)
        names = {os.path.basename(p) for p in written}
        assert names == {"report.csv", "snr_wgn.svg", "improvement_wgn.svg",
                         "snr_pink.svg", "improvement_pink.svg"}
        for p in written:
            assert os.path.getsize(p) > 0

    def test_svg_bytes_are_reproducible(self, tmp_path):
        agg_by_variant = {"uformer": self.agg(5.0)}
        d1, d2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        render_report(agg_by_variant, d1)
        render_report(agg_by_variant, d2)
        for name in sorted(os.listdir(d1)):
            if name.endswith(".svg"):
                assert (open(os.path.join(d1, name), "rb").read()
                        == open(os.path.join(d2, name), "rb").read()), name

    def test_empty_aggregates_refused(self, tmp_path):
        with pytest.raises(ManifestError):
            render_report({"uformer": {}}, str(tmp_path / "r"))


class TestCLI:
    def test_end_to_end_chain(self, tmp_path, capsys):
        root = str(tmp_path)
        raw = os.path.join(root, "raw")
        corpus = os.path.join(root, "corpus")
        run = os.path.join(root, "run")
        evald = os.path.join(root, "eval")
        report = os.path.join(root, "report")

        assert main(["fixtures", "--out", raw, "--lung", "3", "--heart", "1",
                     "--hospital", "1", "--seconds", "2", "--seed", "3"]) == 0
        assert main(["prepare", "--input", raw, "--out", corpus,
                     "--seed", "3"]) == 0
        assert main(["mix", "--corpus", corpus, "--seed", "3",
                     "--kinds", "wgn", "--train-levels", "0",
                     "--test-levels", "0,-5", "--audit"]) == 0
        assert main(["train", "--corpus", corpus, "--out", run,
                     "--variant", "noformer", "--epochs", "1",
                     "--batch-size", "8", "--deterministic"]) == 0
        ckpt = os.path.join(run, pipeline.CHECKPOINT)
        assert main(["eval", "--corpus", corpus, "--checkpoint", ckpt,
                     "--out", evald]) == 0
        agg_path = os.path.join(evald, pipeline.AGGREGATES)
        assert main(["report", "--out", report,
                     f"noformer={agg_path}"]) == 0
        assert os.path.exists(os.path.join(report, "report.csv"))
        assert os.path.exists(os.path.join(report, "snr_wgn.svg"))

        # denoise a fixture WAV through the trained checkpoint
        wav_in = os.path.join(raw, "lung000.wav")
        wav_out = os.path.join(root, "denoised.wav")
        assert main(["denoise", "--checkpoint", ckpt, "--input", wav_in,
                     "--out", wav_out]) == 0
        clip = read_wav(wav_out)
        assert clip.sample_rate == 8000
        assert len(clip.samples) == 16000
        assert np.max(np.abs(clip.samples)) <= 1.0
        capsys.readouterr()

    def test_contract_violations_exit_2(self, tmp_path, capsys):
        missing = str(tmp_path / "nope")
        assert main(["prepare", "--input", missing,
                     "--out", str(tmp_path / "o")]) == 2
        assert main(["eval", "--corpus", missing,
                     "--checkpoint", str(tmp_path / "x.ckpt"),
                     "--out", str(tmp_path / "e")]) == 2
        bad_ckpt = tmp_path / "bad.ckpt"
        bad_ckpt.write_bytes(b"not a checkpoint")
        short = tmp_path / "short.f64"
        np.zeros(100).astype("<f8").tofile(str(short))
        assert main(["denoise", "--checkpoint", str(bad_ckpt),
                     "--input", str(short),
                     "--out", str(tmp_path / "y.f64")]) == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        capsys.readouterr()
