"""End-to-end causal analysis of a set of run records.

Extracts the five observed variables from completed, unablated runs, bins
them, fits tables for both engine modes, answers interventional queries for
every observed batch size, and bundles everything into one JSON-serializable
document so reports can be regenerated without re-training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import causal
from .training import RunRecord


@dataclass(frozen=True)
class AnalysisSettings:
    """Engine settings; treat/control of None resolve to the smallest and
    largest observed batch size."""

    bins: int = 3
    alpha: float = 1.0
    mode: str = causal.MODE_HYPERGRAPH
    treat: int | None = 16
    control: int | None = 512

    def __post_init__(self) -> None:
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.mode not in causal.MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "alpha": self.alpha,
            "mode": self.mode,
            "treat": self.treat,
            "control": self.control,
        }

    @staticmethod
    def from_dict(d: dict) -> "AnalysisSettings":
        return AnalysisSettings(**d)


def records_to_observations(records: list[RunRecord]) -> list[dict]:
    """One observation per usable run: unablated, non-degenerate, measured."""
    obs = []
    for r in records:
        if r.ablation != "none" or r.final is None:
            continue
        obs.append(
            {
                causal.VAR_BATCH: int(r.batch_size),
                causal.VAR_NOISE: float(r.final.grad_noise),
                causal.VAR_SHARPNESS: float(r.final.sharpness),
                causal.VAR_COMPLEXITY: float(r.final.complexity),
                causal.VAR_GENERALIZATION: float(r.final.test_accuracy),
            }
        )
    return obs


@dataclass
class AnalysisBundle:
    settings: AnalysisSettings
    treat: int
    control: int
    scheme: causal.DiscretizationScheme
    tables: dict[str, list[causal.ConditionalTable]]  # per engine mode
    interventions: dict[str, list[causal.InterventionResult]]  # per engine mode
    ate: dict[str, float]  # per engine mode
    backdoor: list[causal.StratumDiagnostic]
    n_observations: int

    def to_json_dict(self) -> dict:
        return {
            "settings": self.settings.to_dict(),
            "treat": self.treat,
            "control": self.control,
            "scheme": self.scheme.to_dict(),
            "tables": {
                mode: [t.to_dict() for t in tabs] for mode, tabs in self.tables.items()
            },
            "interventions": {
                mode: [r.to_dict() for r in results]
                for mode, results in self.interventions.items()
            },
            "ate": self.ate,
            "backdoor": [row.to_dict() for row in self.backdoor],
            "n_observations": self.n_observations,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "AnalysisBundle":
        return AnalysisBundle(
            settings=AnalysisSettings.from_dict(d["settings"]),
            treat=int(d["treat"]),
            control=int(d["control"]),
            scheme=causal.DiscretizationScheme.from_dict(d["scheme"]),
            tables={
                mode: [causal.ConditionalTable.from_dict(t) for t in tabs]
                for mode, tabs in d["tables"].items()
            },
            interventions={
                mode: [
                    causal.InterventionResult(
                        b=r["b"],
                        mode=r["mode"],
                        distribution=np.asarray(r["distribution"]),
                        expected=r["expected"],
                    )
                    for r in results
                ]
                for mode, results in d["interventions"].items()
            },
            ate={mode: float(v) for mode, v in d["ate"].items()},
            backdoor=[causal.StratumDiagnostic(**row) for row in d["backdoor"]],
            n_observations=int(d["n_observations"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    @staticmethod
    def load(path) -> "AnalysisBundle":
        return AnalysisBundle.from_json_dict(json.loads(Path(path).read_text()))


def analyze_observations(observations: list[dict], settings: AnalysisSettings) -> AnalysisBundle:
    """Fit both engine modes on the observations and answer every do() query.

    Variables with fewer distinct values than the requested bin count are
    binned at their distinct-value count (a constant column becomes a single
    bin), so degenerate sweeps still analyze cleanly.
    """
    if not observations:
        raise ValueError("no usable observations (completed, unablated runs)")
    variables = sorted(observations[0].keys())
    k_map = {}
    for var in variables:
        if var == causal.VAR_BATCH:
            continue
        distinct = len({obs[var] for obs in observations})
        k_map[var] = max(1, min(settings.bins, distinct))
    scheme, binned = causal.discretize_records(observations, k=k_map)

    graph = causal.default_hypergraph()
    tables = {
        causal.MODE_HYPERGRAPH: causal.fit_cpts(graph, binned, alpha=settings.alpha),
        causal.MODE_ALGORITHM1: causal.fit_cpts(
            causal.algorithm1_structure(), binned, alpha=settings.alpha
        ),
    }

    levels = scheme.bins[causal.VAR_BATCH].levels
    treat = settings.treat if settings.treat is not None else min(levels)
    control = settings.control if settings.control is not None else max(levels)
    for name, level in (("treat", treat), ("control", control)):
        if level not in levels:
            raise ValueError(f"unknown {name} level {level}; observed levels {list(levels)}")

    interventions: dict[str, list[causal.InterventionResult]] = {}
    ate_by_mode: dict[str, float] = {}
    for mode in causal.MODES:
        interventions[mode] = [
            causal.interventional_distribution(
                graph, tables[mode], b, mode=mode, scheme=scheme
            )
            for b in levels
        ]
        ate_by_mode[mode] = causal.ate(
            graph, tables[mode], treat, control, mode=mode, scheme=scheme
        )

    return AnalysisBundle(
        settings=settings,
        treat=treat,
        control=control,
        scheme=scheme,
        tables=tables,
        interventions=interventions,
        ate=ate_by_mode,
        backdoor=causal.backdoor_diagnostic(binned),
        n_observations=len(observations),
    )


def analyze_records(records: list[RunRecord], settings: AnalysisSettings) -> AnalysisBundle:
    return analyze_observations(records_to_observations(records), settings)
