"""Report rendering: delimited summary plus SVG figures.

Consumes the aggregates of one or more evaluation runs (typically the
three ablation variants) and emits a side-by-side CSV, one column group
per variant, next to line charts of output SNR and SNR improvement
against the input level. Figures are rendered with a pinned hash salt
and stripped creation date so replays produce identical bytes.
"""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ManifestError

_STYLE = {
    "noformer": {"color": "#888888", "marker": "o"},
    "uformer": {"color": "#1f6fb2", "marker": "s"},
    "uformer+": {"color": "#b2451f", "marker": "^"},
}
_FALLBACK = {"color": "#3a9d5d", "marker": "d"}

_VARIANT_METRICS = ["pred_snr_db", "snr_improvement_db", "prd", "rmse",
                    "n", "n_excluded_snr"]


def load_aggregates(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot load aggregates {path}: {exc}") from exc


def flatten(agg_by_variant: dict[str, dict]) -> list[dict]:
    """{variant: aggregates} -> flat rows sorted by (kind, level, variant)."""
    rows = []
    for variant, agg in agg_by_variant.items():
        for kind, levels in agg.items():
            for level, entry in levels.items():
                rows.append({
                    "variant": variant, "kind": kind,
                    "level_db": float(level),
                    "pred_snr_db": entry.get("pred_snr_db"),
                    "snr_improvement_db": entry.get("snr_improvement_db"),
                    "prd": entry.get("prd"),
                    "rmse": entry.get("rmse"),
                    "n": entry.get("n"),
                    "n_excluded_snr": entry.get("n_excluded_snr", 0),
                })
    rows.sort(key=lambda r: (r["kind"], r["level_db"], r["variant"]))
    return rows


def column_name(variant: str, metric: str) -> str:
    return f"{variant.replace('+', '_plus')}_{metric}"


def write_report_csv(path: str, rows: list[dict]) -> list[str]:
    """Pivot flat rows into one line per (kind, level), columns per variant."""
    variants = sorted({r["variant"] for r in rows})
    fields = ["kind", "level_db"]
    for v in variants:
        fields.extend(column_name(v, m) for m in _VARIANT_METRICS)

    cells: dict[tuple[str, float], dict] = {}
    for r in rows:
        cell = cells.setdefault((r["kind"], r["level_db"]), {
            "kind": r["kind"], "level_db": f"{r['level_db']:g}"})
        for m in _VARIANT_METRICS:
            v = r.get(m)
            cell[column_name(r["variant"], m)] = (
                f"{v:.12g}" if isinstance(v, float) else v)

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for key in sorted(cells):
            writer.writerow(cells[key])
    return fields


def _plot_metric(rows: list[dict], kind: str, metric: str, ylabel: str,
                 path: str) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "lungdenoise"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        variants = sorted({r["variant"] for r in rows})
        for variant in variants:
            pts = sorted(
                (r["level_db"], r[metric]) for r in rows
                if r["variant"] == variant and r["kind"] == kind
                and r[metric] is not None)
            if not pts:
                continue
            style = _STYLE.get(variant, _FALLBACK)
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    label=variant, markersize=4, linewidth=1.4, **style)
        ax.set_xlabel("input SNR (dB)")
        ax.set_ylabel(ylabel)
        ax.set_title(f"{kind}: {ylabel} by input level")
        ax.grid(True, alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def render_report(agg_by_variant: dict[str, dict], out_dir: str) -> list[str]:
    """Write report.csv and one SVG pair per noise kind; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    rows = flatten(agg_by_variant)
    if not rows:
        raise ManifestError("nothing to report: aggregates are empty")

    written = []
    csv_path = os.path.join(out_dir, "report.csv")
    write_report_csv(csv_path, rows)
    written.append(csv_path)

    for kind in sorted({r["kind"] for r in rows}):
        for metric, label, stem in (
                ("pred_snr_db", "output SNR (dB)", "snr"),
                ("snr_improvement_db", "SNR improvement (dB)", "improvement")):
            path = os.path.join(out_dir, f"{stem}_{kind.lower()}.svg")
            _plot_metric(rows, kind, metric, label, path)
            written.append(path)
    return written
