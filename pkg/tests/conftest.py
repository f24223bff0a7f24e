"""Shared fixtures: miniature model configs, a finite-difference gradient
checker, and tiny on-disk corpora built from the synthetic clip generators."""
from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lungdenoise.engine import Tensor
from lungdenoise.model import ModelConfig

settings.register_profile(
    "pkg",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("pkg")


def mini_config(n_attention: int = 1, input_len: int = 64,
                dtype: str = "f64", **overrides) -> ModelConfig:
    """A model small enough for finite differences and overfit probes."""
    base = dict(
        attention_blocks=n_attention,
        input_len=input_len,
        kernel=7,
        encoder_filters=(2, 3, 3, 4, 4),
        bottleneck_filters=8,
        decoder_filters=(4, 3, 3, 3),
        heads=2,
        key_dim=3,
        ffn_units=8,
        seed=111,
        dtype=dtype,
    )
    base.update(overrides)
    return ModelConfig(**base)


def finite_difference_check(build_loss, params: list[Tensor],
                            eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``build_loss`` must construct the graph afresh on each call and
    return a scalar Tensor; ``params`` are the leaves to probe (a
    subset of entries per tensor keeps the cost bounded).

    Entries that disagree at the base step are re-probed at smaller
    steps and the best agreement is kept.  Central differences on a
    graph with relu units are only trustworthy when no pre-activation
    changes sign between the two evaluations; shrinking the step makes
    such a crossing vanish for a correct gradient, while a genuinely
    wrong gradient keeps the same mismatch at every step size.
    """
    loss = build_loss()
    loss.backward()
    grads = [p.grad.copy() for p in params]

    def probe(flat, j, analytic, step):
        keep = flat[j]
        flat[j] = keep + step
        up = float(build_loss().data)
        flat[j] = keep - step
        down = float(build_loss().data)
        flat[j] = keep
        numeric = (up - down) / (2 * step)
        if max(abs(numeric), abs(analytic)) < 1e-7:
            return 0.0  # both zero up to finite-difference noise
        scale = max(abs(numeric), abs(analytic), 1e-8)
        return abs(numeric - analytic) / scale

    worst = 0.0
    rng = np.random.default_rng(7)
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        n_probe = min(flat.size, 6)
        for j in rng.choice(flat.size, size=n_probe, replace=False):
            analytic = g.reshape(-1)[j]
            err = probe(flat, j, analytic, eps)
            if err > 1e-5:
                err = min(err, probe(flat, j, analytic, eps / 10))
            if err > 1e-5:
                err = min(err, probe(flat, j, analytic, eps / 100))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst


@pytest.fixture(scope="session")
def fixture_wavs(tmp_path_factory):
    """A small directory of synthetic WAVs (with noise pools)."""
    from lungdenoise.fixtures import make_fixture_corpus

    path = tmp_path_factory.mktemp("raw")
    make_fixture_corpus(str(path), n_lung=4, seed=5, n_heart=2,
                        n_hospital=2, seconds=3.0)
    return str(path)


@pytest.fixture(scope="session")
def prepared_corpus(tmp_path_factory, fixture_wavs):
    """fixture_wavs run through prepare + mix (WGN only), shared read-only."""
    from lungdenoise import pipeline

    corpus = str(tmp_path_factory.mktemp("corpus"))
    pipeline.prepare_corpus(fixture_wavs, corpus, seed=5, dataset="fixture")
    pipeline.mix_corpus(corpus, seed=5, kinds=["wgn"])
    return corpus


def segments_of(corpus_dir: str, split: str) -> list[str]:
    from lungdenoise.pipeline import MANIFEST
    from lungdenoise.segmenter import read_manifest

    manifest = read_manifest(os.path.join(corpus_dir, MANIFEST))
    return [e.seg_id for e in manifest.by_split(split)]
