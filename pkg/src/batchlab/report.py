"""Report generation: publication-style summary tables from a record file.

Emits machine-readable CSVs plus one human-readable text report. The report
body is a pure function of the records and settings; the current timestamp
appears only in a metadata block at the top.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import causal, stats, sweep
from .analysis import AnalysisBundle, AnalysisSettings, analyze_records
from .training import RunRecord


def format_mean_std_percent(mean: float, std: float | None) -> str:
    """Accuracy-cell formatting: fractions in, percent 'mean ± std' out."""
    if std is None:
        return f"{mean * 100:.1f}"
    return f"{mean * 100:.1f} ± {std * 100:.1f}"


@dataclass(frozen=True)
class PointAteRow:
    label: str
    expected_treat: float
    expected_control: float

    @property
    def difference(self) -> float:
        return self.expected_treat - self.expected_control


@dataclass(frozen=True)
class PointAteTable:
    rows: tuple[PointAteRow, ...]

    @property
    def mean_difference(self) -> float:
        return float(np.mean([r.difference for r in self.rows]))


def ate_point_table(rows) -> PointAteTable:
    """Per-row treatment-control differences from supplied expected outcomes.

    Arithmetic only: rows are (label, expected under treatment, expected
    under control); the mean row is the plain average of the differences.
    """
    built = tuple(PointAteRow(str(l), float(t), float(c)) for l, t, c in rows)
    if not built:
        raise ValueError("no rows")
    return PointAteTable(rows=built)


# -- aggregation ------------------------------------------------------------------


def _usable(records: list[RunRecord]) -> list[RunRecord]:
    return [r for r in records if r.final is not None]


def accuracy_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    groups: dict[tuple[int, str], list[float]] = {}
    for r in _usable(records):
        groups.setdefault((r.batch_size, r.ablation), []).append(r.final.test_accuracy)
    for (b, abl), accs in sorted(groups.items()):
        s = stats.summarize(accs)
        rows.append(
            {
                "batch_size": b,
                "ablation": abl,
                "n": s.n,
                "mean_accuracy": s.mean,
                "std_accuracy": s.std,
                "cell": format_mean_std_percent(s.mean, s.std),
            }
        )
    return rows


def sharpness_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    groups: dict[int, list[float]] = {}
    for r in _usable(records):
        if r.ablation == "none":
            groups.setdefault(r.batch_size, []).append(r.final.sharpness)
    for b, values in sorted(groups.items()):
        s = stats.summarize(values)
        rows.append(
            {
                "batch_size": b,
                "n": s.n,
                "median_sharpness": float(np.median(values)),
                "mean_sharpness": s.mean,
                "std_sharpness": s.std,
            }
        )
    return rows


def timing_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    groups: dict[int, list[float]] = {}
    for r in records:
        if r.ablation == "none" and r.epoch_wall_seconds:
            groups.setdefault(r.batch_size, []).extend(r.epoch_wall_seconds)
    for b, secs in sorted(groups.items()):
        rows.append(
            {
                "batch_size": b,
                "epochs_timed": len(secs),
                "mean_epoch_seconds": float(np.mean(secs)),
            }
        )
    return rows


def significance_result(records: list[RunRecord], treat: int, control: int) -> dict:
    """Welch and Wilcoxon (paired by seed) on accuracies at two batch sizes."""
    by_seed: dict[int, dict[int, float]] = {}
    for r in _usable(records):
        if r.ablation == "none" and r.batch_size in (treat, control):
            by_seed.setdefault(r.seed, {})[r.batch_size] = r.final.test_accuracy
    xs = [v[treat] for v in by_seed.values() if treat in v]
    ys = [v[control] for v in by_seed.values() if control in v]
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError(f"need at least 2 seeds at both B={treat} and B={control}")
    welch = stats.welch_t_test(xs, ys)
    out = {
        "treat": treat,
        "control": control,
        "n_treat": len(xs),
        "n_control": len(ys),
        "mean_diff": float(np.mean(xs) - np.mean(ys)),
        "welch_t": welch.t,
        "welch_df": welch.df,
        "welch_p": welch.p,
        "wilcoxon_w": None,
        "wilcoxon_p": None,
        "wilcoxon_method": None,
    }
    diffs = [v[treat] - v[control] for v in by_seed.values() if treat in v and control in v]
    if diffs and any(d != 0 for d in diffs):
        wil = stats.wilcoxon_signed_rank(diffs)
        out.update(wilcoxon_w=wil.w, wilcoxon_p=wil.p, wilcoxon_method=wil.method)
    elif diffs:
        # all paired differences zero: no evidence against the null
        out.update(wilcoxon_w=0.0, wilcoxon_p=1.0, wilcoxon_method="degenerate")
    return out


# -- emission ---------------------------------------------------------------------


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            fh.write("")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _fmt(value, digits=6) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def render_report_body(
    records: list[RunRecord],
    settings: AnalysisSettings,
    bundle: AnalysisBundle | None,
    sig: dict | None,
) -> str:
    lines: list[str] = []
    add = lines.append
    add("== accuracy by batch size (percent, mean ± std over seeds) ==")
    for row in accuracy_rows(records):
        add(
            f"  B={row['batch_size']:<5d} ablation={row['ablation']:<18s} "
            f"n={row['n']:<3d} {row['cell']}"
        )
    add("")
    add("== sharpness (top Hessian eigenvalue) by batch size ==")
    for row in sharpness_rows(records):
        add(
            f"  B={row['batch_size']:<5d} n={row['n']:<3d} "
            f"median={_fmt(row['median_sharpness'])} mean={_fmt(row['mean_sharpness'])} "
            f"std={_fmt(row['std_sharpness'])}"
        )
    add("")
    add("== time per epoch (seconds) ==")
    for row in timing_rows(records):
        add(
            f"  B={row['batch_size']:<5d} epochs={row['epochs_timed']:<5d} "
            f"mean={row['mean_epoch_seconds']:.4f}"
        )
    add("")
    if bundle is not None:
        add(f"== interventional distributions (bins={settings.bins}, alpha={settings.alpha}) ==")
        for mode, results in bundle.interventions.items():
            for res in results:
                dist = ", ".join(f"{p:.4f}" for p in res.distribution)
                add(f"  mode={mode:<11s} do(B={res.b}): [{dist}]  E[G]={res.expected:.4f}")
        add("")
        add(f"== average treatment effect: do(B={bundle.treat}) vs do(B={bundle.control}) ==")
        for mode, value in bundle.ate.items():
            add(f"  mode={mode:<11s} ATE={value * 100:+.2f} accuracy points")
        add("")
        add("== back-door diagnostic: outcome x treatment within complexity strata ==")
        for row in bundle.backdoor:
            if row.skipped:
                add(f"  stratum={row.stratum} n={row.n} skipped ({row.reason})")
            else:
                add(
                    f"  stratum={row.stratum} n={row.n} chi2={row.chi_square:.4f} "
                    f"dof={row.dof} p={row.p_value:.4g}"
                )
        add("")
    if sig is not None:
        add(f"== significance: B={sig['treat']} vs B={sig['control']} ==")
        add(
            f"  mean diff = {sig['mean_diff'] * 100:+.2f} points "
            f"(n={sig['n_treat']}/{sig['n_control']})"
        )
        add(f"  Welch t = {_fmt(sig['welch_t'])}, df = {_fmt(sig['welch_df'])}, p = {_fmt(sig['welch_p'])}")
        add(
            f"  Wilcoxon W = {_fmt(sig['wilcoxon_w'])}, p = {_fmt(sig['wilcoxon_p'])} "
            f"({sig['wilcoxon_method']})"
        )
        add("")
    return "\n".join(lines) + "\n"


def emit_report(records_path, settings: AnalysisSettings, out_dir) -> dict[str, Path]:
    """Build every report artifact from a record file.

    Writes accuracy/sharpness/timing/interventions/ate/significance/backdoor
    CSVs, the analysis bundle JSON, and a plain-text report. Returns the
    paths written, keyed by artifact name.
    """
    records = sweep.load_records(records_path)
    if not records:
        raise ValueError(f"record file {records_path} is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bundle = None
    sig = None
    analysis_error = None
    try:
        bundle = analyze_records(records, settings)
        sig = significance_result(records, bundle.treat, bundle.control)
    except ValueError as exc:
        analysis_error = str(exc)

    paths: dict[str, Path] = {}

    def emit_csv(name: str, rows: list[dict]) -> None:
        paths[name] = out_dir / f"{name}.csv"
        _write_csv(paths[name], rows)

    emit_csv("accuracy", accuracy_rows(records))
    emit_csv("sharpness", sharpness_rows(records))
    emit_csv("timing", timing_rows(records))
    if bundle is not None:
        emit_csv(
            "interventions",
            [
                {
                    "mode": mode,
                    "b": res.b,
                    "bin": i,
                    "probability": float(p),
                    "expected_outcome": res.expected,
                }
                for mode, results in bundle.interventions.items()
                for res in results
                for i, p in enumerate(res.distribution)
            ],
        )
        emit_csv(
            "ate",
            [
                {
                    "mode": mode,
                    "treat": bundle.treat,
                    "control": bundle.control,
                    "ate": value,
                }
                for mode, value in bundle.ate.items()
            ],
        )
        emit_csv("backdoor", [row.to_dict() for row in bundle.backdoor])
        paths["analysis"] = out_dir / "analysis.json"
        bundle.save(paths["analysis"])
    if sig is not None:
        emit_csv("significance", [sig])

    meta = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "records": str(records_path),
        "n_records": len(records),
        "analysis_error": analysis_error,
    }
    body = render_report_body(records, settings, bundle, sig)
    paths["report"] = out_dir / "report.txt"
    paths["report"].write_text(
        "# metadata: " + json.dumps(meta) + "\n\n" + body
    )
    return paths
