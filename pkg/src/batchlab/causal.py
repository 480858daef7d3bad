"""Discrete causal engine over a hypergraph of training-run variables.

A causal hypergraph maps tail variable sets to single head variables; fitting
one smoothed conditional probability table per hyperedge turns observed run
records into a discrete structural model. Interventions on the batch-size
variable are answered by truncated factorization (summing the product of the
remaining factors over every mediator bin), and the average treatment effect
is the difference of expected outcomes under two interventions.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.stats import chi2 as chi2_dist

VAR_BATCH = "batch_size"
VAR_NOISE = "grad_noise"
VAR_SHARPNESS = "sharpness"
VAR_COMPLEXITY = "complexity"
VAR_GENERALIZATION = "generalization"
DEFAULT_VARIABLES = (VAR_BATCH, VAR_NOISE, VAR_SHARPNESS, VAR_COMPLEXITY, VAR_GENERALIZATION)

MODE_HYPERGRAPH = "hypergraph"
MODE_ALGORITHM1 = "algorithm1"
MODES = (MODE_HYPERGRAPH, MODE_ALGORITHM1)


class GraphError(ValueError):
    """Structurally invalid hypergraph."""


class DiscretizationError(ValueError):
    """Records cannot be binned as requested."""


@dataclass(frozen=True)
class Hyperedge:
    tails: tuple[str, ...]
    head: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "tails", tuple(sorted(self.tails)))
        if self.head in self.tails:
            raise GraphError(f"self-loop on {self.head!r}")


@dataclass(frozen=True)
class CausalHypergraph:
    variables: tuple[str, ...]
    hyperedges: tuple[Hyperedge, ...]

    @staticmethod
    def from_edges(variables, edges) -> "CausalHypergraph":
        return CausalHypergraph(
            variables=tuple(variables),
            hyperedges=tuple(Hyperedge(tuple(t), h) for t, h in edges),
        )


def default_hypergraph() -> CausalHypergraph:
    """Batch size drives noise, noise drives sharpness, noise and sharpness
    jointly drive complexity, complexity drives generalization."""
    return CausalHypergraph.from_edges(
        DEFAULT_VARIABLES,
        [
            ((VAR_BATCH,), VAR_NOISE),
            ((VAR_NOISE,), VAR_SHARPNESS),
            ((VAR_NOISE, VAR_SHARPNESS), VAR_COMPLEXITY),
            ((VAR_COMPLEXITY,), VAR_GENERALIZATION),
        ],
    )


def pairwise_hypergraph() -> CausalHypergraph:
    """Pairwise-only variant: the joint noise+sharpness edge into complexity
    is replaced by a single noise edge."""
    return CausalHypergraph.from_edges(
        DEFAULT_VARIABLES,
        [
            ((VAR_BATCH,), VAR_NOISE),
            ((VAR_NOISE,), VAR_SHARPNESS),
            ((VAR_NOISE,), VAR_COMPLEXITY),
            ((VAR_COMPLEXITY,), VAR_GENERALIZATION),
        ],
    )


def algorithm1_structure() -> CausalHypergraph:
    """Factor set of the alternate (algorithm1) engine mode: the complexity
    factor is dropped and the outcome conditions jointly on all mediators."""
    return CausalHypergraph.from_edges(
        DEFAULT_VARIABLES,
        [
            ((VAR_BATCH,), VAR_NOISE),
            ((VAR_NOISE,), VAR_SHARPNESS),
            ((VAR_NOISE, VAR_SHARPNESS, VAR_COMPLEXITY), VAR_GENERALIZATION),
        ],
    )


def validate_hypergraph(h: CausalHypergraph) -> list[str]:
    """Topological factorization order (tails always precede heads).

    Rejects variables with more than one incoming hyperedge, unknown
    variables, and cycles in the induced tail-to-head digraph.
    """
    known = set(h.variables)
    heads_seen: set[str] = set()
    for edge in h.hyperedges:
        if edge.head not in known or any(t not in known for t in edge.tails):
            raise GraphError(f"edge {edge} references unknown variable")
        if edge.head in heads_seen:
            raise GraphError(f"variable {edge.head!r} has two incoming hyperedges")
        heads_seen.add(edge.head)
    incoming = {e.head: set(e.tails) for e in h.hyperedges}
    order: list[str] = []
    remaining = set(h.variables)
    while remaining:
        ready = sorted(
            v for v in remaining if not (incoming.get(v, set()) & remaining)
        )
        if not ready:
            raise GraphError(f"cycle detected among {sorted(remaining)}")
        order.extend(ready)
        remaining -= set(ready)
    return order


# -- discretization -------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousBinning:
    cuts: tuple[float, ...]
    representatives: tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.representatives)

    def assign(self, values: np.ndarray) -> np.ndarray:
        # side="left": a value equal to a cut point goes to the lower bin
        return np.searchsorted(np.asarray(self.cuts), values, side="left").astype(np.int64)


@dataclass(frozen=True)
class DiscreteBinning:
    levels: tuple

    @property
    def k(self) -> int:
        return len(self.levels)

    @property
    def representatives(self) -> tuple:
        return self.levels

    def assign(self, values: np.ndarray) -> np.ndarray:
        index = {v: i for i, v in enumerate(self.levels)}
        try:
            return np.asarray([index[v] for v in values], dtype=np.int64)
        except KeyError as exc:
            raise DiscretizationError(f"unknown level {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class DiscretizationScheme:
    bins: dict[str, ContinuousBinning | DiscreteBinning]

    def k(self, var: str) -> int:
        return self.bins[var].k

    def representatives(self, var: str) -> tuple:
        return tuple(self.bins[var].representatives)

    def to_dict(self) -> dict:
        out = {}
        for var, b in self.bins.items():
            if isinstance(b, DiscreteBinning):
                out[var] = {"kind": "discrete", "levels": list(b.levels)}
            else:
                out[var] = {
                    "kind": "continuous",
                    "cuts": list(b.cuts),
                    "representatives": list(b.representatives),
                }
        return out

    @staticmethod
    def from_dict(d: dict) -> "DiscretizationScheme":
        bins: dict[str, ContinuousBinning | DiscreteBinning] = {}
        for var, spec in d.items():
            if spec["kind"] == "discrete":
                bins[var] = DiscreteBinning(levels=tuple(spec["levels"]))
            else:
                bins[var] = ContinuousBinning(
                    cuts=tuple(spec["cuts"]), representatives=tuple(spec["representatives"])
                )
        return DiscretizationScheme(bins=bins)


@dataclass
class BinnedRecords:
    columns: dict[str, np.ndarray]
    k: dict[str, int]

    def __post_init__(self) -> None:
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("ragged record columns")
        for var, col in self.columns.items():
            col = np.asarray(col, dtype=np.int64)
            if col.size and (col.min() < 0 or col.max() >= self.k[var]):
                raise ValueError(f"bin index out of range for {var!r}")
            self.columns[var] = col

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values())))


def _equal_frequency_binning(values: np.ndarray, k: int) -> ContinuousBinning:
    distinct = np.unique(values)
    if distinct.size < k:
        raise DiscretizationError(
            f"{distinct.size} distinct values cannot fill {k} bins"
        )
    if k == 1:
        return ContinuousBinning(cuts=(), representatives=(float(values.mean()),))
    cuts = np.quantile(values, [i / k for i in range(1, k)])
    if not np.all(np.diff(cuts) > 0):
        raise DiscretizationError("quantile cut points are not strictly increasing")
    binning = ContinuousBinning(cuts=tuple(float(c) for c in cuts), representatives=())
    assigned = binning.assign(values)
    reps = []
    for b in range(k):
        members = values[assigned == b]
        if members.size:
            reps.append(float(members.mean()))
        elif b == 0:
            reps.append(float(values.min()))
        elif b == k - 1:
            reps.append(float(values.max()))
        else:
            reps.append(float((cuts[b - 1] + cuts[b]) / 2.0))
    return ContinuousBinning(cuts=binning.cuts, representatives=tuple(reps))


def discretize_records(
    records,
    k: int | dict = 3,
    discrete_vars=(VAR_BATCH,),
) -> tuple[DiscretizationScheme, BinnedRecords]:
    """Equal-frequency binning of continuous variables; discrete ones keep
    their sorted unique levels. ``k`` may be an int or a per-variable mapping.
    Representatives are within-bin means of the fitting records."""
    records = list(records)
    if not records:
        raise ValueError("no records to discretize")
    variables = sorted(records[0].keys())
    columns = {v: np.asarray([r[v] for r in records]) for v in variables}
    bins: dict[str, ContinuousBinning | DiscreteBinning] = {}
    binned: dict[str, np.ndarray] = {}
    k_map: dict[str, int] = {}
    for var in variables:
        if var in discrete_vars:
            levels = tuple(sorted(set(columns[var].tolist())))
            binning: ContinuousBinning | DiscreteBinning = DiscreteBinning(levels=levels)
        else:
            kv = k[var] if isinstance(k, dict) else int(k)
            binning = _equal_frequency_binning(columns[var].astype(np.float64), kv)
        bins[var] = binning
        binned[var] = binning.assign(columns[var])
        k_map[var] = binning.k
    scheme = DiscretizationScheme(bins=bins)
    return scheme, BinnedRecords(columns=binned, k=k_map)


# -- conditional probability tables ----------------------------------------------


@dataclass
class ConditionalTable:
    """P(head | tails), probabilities indexed by (tail bins..., head bin)."""

    head: str
    tails: tuple[str, ...]
    probs: np.ndarray
    alpha: float

    def row(self, tail_bins: tuple[int, ...]) -> np.ndarray:
        return self.probs[tail_bins]

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "tails": list(self.tails),
            "shape": list(self.probs.shape),
            "probs": self.probs.ravel().tolist(),
            "alpha": self.alpha,
        }

    @staticmethod
    def from_dict(d: dict) -> "ConditionalTable":
        return ConditionalTable(
            head=d["head"],
            tails=tuple(d["tails"]),
            probs=np.asarray(d["probs"], dtype=np.float64).reshape(d["shape"]),
            alpha=d["alpha"],
        )


def fit_cpts(
    h: CausalHypergraph, binned: BinnedRecords, alpha: float = 1.0
) -> list[ConditionalTable]:
    """One Laplace-smoothed table per hyperedge:
    P(head | tail) = (count + alpha) / (row_total + alpha * k_head).

    With alpha = 0, rows never observed fall back to uniform.
    """
    if binned.n == 0:
        raise ValueError("no records to fit")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    validate_hypergraph(h)
    tables = []
    for edge in h.hyperedges:
        k_head = binned.k[edge.head]
        shape = tuple(binned.k[t] for t in edge.tails) + (k_head,)
        counts = np.zeros(shape, dtype=np.float64)
        idx = tuple(binned.columns[t] for t in edge.tails) + (binned.columns[edge.head],)
        np.add.at(counts, idx, 1.0)
        row_totals = counts.sum(axis=-1, keepdims=True)
        if alpha > 0:
            probs = (counts + alpha) / (row_totals + alpha * k_head)
        else:
            probs = np.where(
                row_totals > 0, counts / np.where(row_totals > 0, row_totals, 1.0), 1.0 / k_head
            )
        tables.append(ConditionalTable(head=edge.head, tails=edge.tails, probs=probs, alpha=alpha))
    return tables


# -- interventional queries -------------------------------------------------------


@dataclass(frozen=True)
class InterventionResult:
    b: object
    mode: str
    distribution: np.ndarray
    expected: float

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "mode": self.mode,
            "distribution": [float(p) for p in self.distribution],
            "expected": float(self.expected),
        }


def _tables_by_head(tables) -> dict[str, ConditionalTable]:
    return {t.head: t for t in tables}


def _resolve_level(b, levels) -> int:
    if levels is None:
        index = int(b)
        return index
    levels = list(levels)
    if b not in levels:
        raise ValueError(f"unknown intervention level {b!r}; known levels {levels}")
    return levels.index(b)


def _expected(dist: np.ndarray, representatives) -> float:
    reps = (
        np.arange(dist.size, dtype=np.float64)
        if representatives is None
        else np.asarray(representatives, dtype=np.float64)
    )
    return float(dist @ reps)


def interventional_distribution(
    h: CausalHypergraph,
    tables,
    b,
    mode: str = MODE_HYPERGRAPH,
    scheme: DiscretizationScheme | None = None,
    intervention: str = VAR_BATCH,
    outcome: str = VAR_GENERALIZATION,
) -> InterventionResult:
    """Outcome distribution under do(intervention = b), by exact summation.

    ``hypergraph`` mode multiplies every hyperedge factor in topological
    order, marginalizing variables as soon as no later factor needs them.
    ``algorithm1`` mode instead uses the alternate factor set (no complexity
    factor, outcome conditioned jointly on all three mediators) and
    normalizes the result. When a scheme is given, ``b`` is an actual level
    of the intervention variable; otherwise it is a bin index.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    by_head = _tables_by_head(tables)
    levels = None
    g_reps = None
    if scheme is not None:
        binning = scheme.bins.get(intervention)
        if isinstance(binning, DiscreteBinning):
            levels = binning.levels
        if outcome in scheme.bins:
            g_reps = scheme.representatives(outcome)
    b_index = _resolve_level(b, levels)

    if mode == MODE_ALGORITHM1:
        dist = _algorithm1_distribution(by_head, b_index, intervention, outcome)
    else:
        dist = _hypergraph_distribution(h, by_head, b_index, intervention, outcome)
    return InterventionResult(b=b, mode=mode, distribution=dist, expected=_expected(dist, g_reps))


def _hypergraph_distribution(
    h: CausalHypergraph,
    by_head: dict[str, ConditionalTable],
    b_index: int,
    intervention: str,
    outcome: str,
) -> np.ndarray:
    order = validate_hypergraph(h)
    if outcome not in order:
        raise ValueError(f"outcome {outcome!r} not in hypergraph")
    to_process = [v for v in order if v != intervention]
    for v in to_process:
        if v not in by_head:
            raise ValueError(f"missing table for variable {v!r}")
        for j, t in enumerate(by_head[v].tails):
            if t == intervention:
                k_b = by_head[v].probs.shape[j]
                if not (0 <= b_index < k_b):
                    raise ValueError(
                        f"unknown intervention level index {b_index} (have {k_b} levels)"
                    )
    k_of = {v: by_head[v].probs.shape[-1] for v in to_process}
    k_of[intervention] = None  # fixed by the intervention

    # joint over "live" variables, as {assignment tuple: probability}
    live: list[str] = []
    joint: dict[tuple[int, ...], float] = {(): 1.0}
    remaining = list(to_process)
    for i, v in enumerate(remaining):
        table = by_head[v]
        tail_pos = []
        for t in table.tails:
            if t == intervention:
                tail_pos.append(None)
            elif t in live:
                tail_pos.append(live.index(t))
            else:
                raise ValueError(
                    f"table for {v!r} conditions on {t!r} before it is generated"
                )
        new_joint: dict[tuple[int, ...], float] = {}
        for assign, p in joint.items():
            tail_bins = tuple(
                b_index if pos is None else assign[pos] for pos in tail_pos
            )
            row = table.row(tail_bins)
            for vb in range(k_of[v]):
                key = assign + (vb,)
                new_joint[key] = new_joint.get(key, 0.0) + p * row[vb]
        live.append(v)
        joint = new_joint
        # marginalize out variables no later factor conditions on
        still_needed = {outcome}
        for later in remaining[i + 1 :]:
            still_needed.update(by_head[later].tails)
        drop = [lv for lv in live if lv not in still_needed]
        if drop:
            keep_pos = [j for j, lv in enumerate(live) if lv not in drop]
            reduced: dict[tuple[int, ...], float] = {}
            for assign, p in joint.items():
                key = tuple(assign[j] for j in keep_pos)
                reduced[key] = reduced.get(key, 0.0) + p
            live = [lv for lv in live if lv not in drop]
            joint = reduced

    out_pos = live.index(outcome)
    dist = np.zeros(k_of[outcome])
    for assign, p in joint.items():
        dist[assign[out_pos]] += p
    # mathematically normalized already; divide out float drift
    return dist / dist.sum()


def _algorithm1_distribution(
    by_head: dict[str, ConditionalTable],
    b_index: int,
    intervention: str,
    outcome: str,
) -> np.ndarray:
    for needed in (VAR_NOISE, VAR_SHARPNESS, outcome):
        if needed not in by_head:
            raise ValueError(f"algorithm1 mode requires a table for {needed!r}")
    t_noise = by_head[VAR_NOISE]
    t_sharp = by_head[VAR_SHARPNESS]
    t_out = by_head[outcome]
    expected_tails = tuple(sorted((VAR_COMPLEXITY, VAR_NOISE, VAR_SHARPNESS)))
    if t_out.tails != expected_tails:
        raise ValueError(
            f"algorithm1 outcome table must condition on {expected_tails}, got {t_out.tails}"
        )
    k_b = t_noise.probs.shape[0]
    if not (0 <= b_index < k_b):
        raise ValueError(f"unknown intervention level index {b_index} (have {k_b} levels)")
    k_n = t_noise.probs.shape[-1]
    k_s = t_sharp.probs.shape[-1]
    k_c = t_out.probs.shape[t_out.tails.index(VAR_COMPLEXITY)]
    k_g = t_out.probs.shape[-1]
    dist = np.zeros(k_g)
    for n, s, c in product(range(k_n), range(k_s), range(k_c)):
        weight = t_noise.row((b_index,))[n] * t_sharp.row((n,))[s]
        tail_bins = tuple(
            {VAR_COMPLEXITY: c, VAR_NOISE: n, VAR_SHARPNESS: s}[t] for t in t_out.tails
        )
        dist += weight * t_out.row(tail_bins)
    total = dist.sum()
    if total <= 0:
        raise ValueError("algorithm1 factorization produced zero mass")
    return dist / total


def ate(
    h: CausalHypergraph,
    tables,
    b_treat,
    b_control,
    mode: str = MODE_HYPERGRAPH,
    scheme: DiscretizationScheme | None = None,
) -> float:
    """Expected outcome under do(b_treat) minus do(b_control)."""
    treat = interventional_distribution(h, tables, b_treat, mode=mode, scheme=scheme)
    control = interventional_distribution(h, tables, b_control, mode=mode, scheme=scheme)
    return treat.expected - control.expected


# -- back-door diagnostic ----------------------------------------------------------


@dataclass(frozen=True)
class StratumDiagnostic:
    stratum: int
    n: int
    chi_square: float | None
    dof: int | None
    p_value: float | None
    skipped: bool
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum,
            "n": self.n,
            "chi_square": self.chi_square,
            "dof": self.dof,
            "p_value": self.p_value,
            "skipped": self.skipped,
            "reason": self.reason,
        }


def pearson_chi_square(table: np.ndarray) -> tuple[float, int]:
    """Pearson statistic and dof of a contingency table (empty margins dropped)."""
    obs = np.asarray(table, dtype=np.float64)
    obs = obs[obs.sum(axis=1) > 0][:, obs.sum(axis=0) > 0]
    r, c = obs.shape
    if r < 2 or c < 2:
        raise ValueError("contingency table needs two nonempty rows and columns")
    total = obs.sum()
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / total
    stat = float(((obs - expected) ** 2 / expected).sum())
    return stat, (r - 1) * (c - 1)


def backdoor_diagnostic(
    binned: BinnedRecords,
    stratify: str = VAR_COMPLEXITY,
    treatment: str = VAR_BATCH,
    outcome: str = VAR_GENERALIZATION,
    min_count: int = 5,
) -> list[StratumDiagnostic]:
    """Per-stratum chi-square tests of outcome-treatment independence.

    Diagnostic only: checks the conditional independence the back-door
    adjustment assumes, within each stratum of the conditioning variable.
    Strata with fewer than ``min_count`` records (or degenerate tables) are
    skipped and reported as such.
    """
    results = []
    strata = binned.columns[stratify]
    for s in range(binned.k[stratify]):
        mask = strata == s
        n = int(mask.sum())
        if n < min_count:
            results.append(
                StratumDiagnostic(s, n, None, None, None, True, f"fewer than {min_count} records")
            )
            continue
        table = np.zeros((binned.k[outcome], binned.k[treatment]))
        np.add.at(table, (binned.columns[outcome][mask], binned.columns[treatment][mask]), 1.0)
        try:
            stat, dof = pearson_chi_square(table)
        except ValueError as exc:
            results.append(StratumDiagnostic(s, n, None, None, None, True, str(exc)))
            continue
        p = float(chi2_dist.sf(stat, dof))
        results.append(StratumDiagnostic(s, n, stat, dof, p, False))
    return results
