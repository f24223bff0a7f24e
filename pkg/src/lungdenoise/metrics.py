"""Evaluation metrics and corpus-level reporting.

Conventions:

* Every metric takes the estimate first and the reference second:
  ``snr_db(estimate, reference)`` and friends.
* ``snr_db`` is output-side: estimate energy over residual energy. A zero
  residual has no finite ratio, so the function raises
  ``PerfectReconstruction``; corpus evaluation records such rows with a
  ``+inf`` sentinel and excludes them from aggregate means.
* ``prd`` is the root of residual energy over reference energy, so a
  zero estimate scores exactly 1.0.
* ``st_mae`` is the short-time mean absolute error over sliding windows.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateReference, LengthError, PerfectReconstruction

ST_WINDOW = 800
ST_STEP = 400


def _pair(estimate, reference) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(estimate, dtype=np.float64)
    y = np.asarray(reference, dtype=np.float64)
    if e.shape != y.shape:
        raise LengthError(f"estimate {e.shape} vs reference {y.shape}")
    if e.size == 0:
        raise LengthError("metrics need at least one sample")
    return e, y


def snr_db(estimate, reference) -> float:
    """10 log10( sum(estimate^2) / sum((reference - estimate)^2) ).

    Raises PerfectReconstruction when the residual is exactly zero.
    Returns -inf for a zero estimate against a nonzero reference.
    """
    e, y = _pair(estimate, reference)
    num = float(np.sum(e * e))
    den = float(np.sum((y - e) ** 2))
    if den == 0.0:
        raise PerfectReconstruction("zero residual; SNR is unbounded")
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def rmse(estimate, reference) -> float:
    e, y = _pair(estimate, reference)
    return float(np.sqrt(np.mean((y - e) ** 2)))


def prd(estimate, reference) -> float:
    """sqrt( sum((reference - estimate)^2) / sum(reference^2) )."""
    e, y = _pair(estimate, reference)
    ref = float(np.sum(y * y))
    if ref == 0.0:
        raise DegenerateReference("reference has zero energy; PRD undefined")
    return float(np.sqrt(np.sum((y - e) ** 2) / ref))


def st_mae(estimate, reference, window: int = ST_WINDOW,
           step: int = ST_STEP) -> np.ndarray:
    """Windowed mean |error|: one value per window position."""
    e, y = _pair(estimate, reference)
    n = y.shape[-1]
    if window < 1 or step < 1:
        raise LengthError("window and step must be positive")
    if n < window:
        raise LengthError(f"signal of {n} samples shorter than window {window}")
    count = (n - window) // step + 1
    diff = np.abs(y - e)
    return np.array([
        diff[..., i * step : i * step + window].mean() for i in range(count)
    ])


def _snr_or_sentinel(estimate, reference) -> float:
    try:
        return snr_db(estimate, reference)
    except PerfectReconstruction:
        return math.inf


# --- corpus evaluation -------------------------------------------------------

@dataclass
class EvalRow:
    seg_id: str
    kind: str
    level_db: float
    pred_snr_db: float
    prd: float
    rmse: float
    input_snr_db: float = math.nan

    @property
    def improvement_db(self) -> float:
        return self.pred_snr_db - self.input_snr_db


def evaluate_pairs(rows_in) -> list[EvalRow]:
    """rows_in: iterable of (seg_id, kind, level_db, clean, noisy, estimate)."""
    rows = []
    for seg_id, kind, level, clean, noisy, estimate in rows_in:
        rows.append(EvalRow(
            seg_id=seg_id, kind=kind, level_db=float(level),
            pred_snr_db=_snr_or_sentinel(estimate, clean),
            prd=prd(estimate, clean),
            rmse=rmse(estimate, clean),
            input_snr_db=_snr_or_sentinel(noisy, clean),
        ))
    return rows


def _finite_mean(values: list[float]) -> tuple[float | None, int]:
    finite = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    mean = sum(finite) / len(finite) if finite else None
    return mean, excluded


def aggregate(rows: list[EvalRow]) -> dict:
    """Per-(kind, level) means. Non-finite SNR rows are excluded from the
    SNR and improvement means and surfaced via ``n_excluded_snr``."""
    groups: dict[tuple[str, float], list[EvalRow]] = {}
    for row in rows:
        groups.setdefault((row.kind, row.level_db), []).append(row)

    out: dict = {}
    for (kind, level), members in sorted(groups.items()):
        members = sorted(members, key=lambda m: m.seg_id)
        snr_mean, snr_excl = _finite_mean([m.pred_snr_db for m in members])
        imp_mean, imp_excl = _finite_mean(
            [m.improvement_db for m in members])
        entry = {
            "n": len(members),
            "pred_snr_db": snr_mean,
            "snr_improvement_db": imp_mean,
            "n_excluded_snr": max(snr_excl, imp_excl),
            "prd": float(np.mean([m.prd for m in members])),
            "rmse": float(np.mean([m.rmse for m in members])),
        }
        out.setdefault(kind, {})[f"{level:g}"] = entry
    return out


METRICS_HEADER = ["seg_id", "kind", "level_db", "pred_snr_db", "prd", "rmse"]


def write_metrics_csv(path: str, rows: list[EvalRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([
                r.seg_id, r.kind, f"{r.level_db:g}",
                f"{r.pred_snr_db:.12g}", f"{r.prd:.12g}", f"{r.rmse:.12g}",
            ])


def read_metrics_csv(path: str) -> list[EvalRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(EvalRow(
                seg_id=rec["seg_id"], kind=rec["kind"],
                level_db=float(rec["level_db"]),
                pred_snr_db=float(rec["pred_snr_db"]),
                prd=float(rec["prd"]), rmse=float(rec["rmse"]),
            ))
    return rows


def write_aggregates(path: str, agg: dict) -> None:
    with open(path, "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
        fh.write("\n")
