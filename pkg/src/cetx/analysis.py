"""Counterfactual quality metrics and the whole-series importance sweep.

Metrics follow the package-wide window conventions: the tracking loss
re-weights squared target gaps with the problem's step weights, the
proximity loss is the plain (unweighted) squared displacement of the
intervention grid, and temporal smoothness sums absolute second differences
along each variable's intervention row.

The importance sweep repeats one counterfactual-search template at every
admissible anchor, walking backward one step at a time from the next-to-last
time point until the pre-window history would fall off the start of the
series, then aggregates the per-cell displacements ``z_tilde - z`` into
mean / standard deviation / min / max statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ce import (
    CEProblem,
    CESolution,
    OptimizerConfig,
    WeightScheme,
    make_weights,
    restrict_mask,
    rollout,
    solve_ce,
)
from .errors import CetxError, DomainError
from .models import ForecastModel
from .series import SeriesSet

MAE_DENOMINATORS = ("k-plus-q", "k-times-q")


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------


def x_loss(problem: CEProblem, solution: CESolution) -> float:
    """Weighted squared gap between targets and the counterfactual rollout."""
    gaps = problem.target - solution.rollout
    return float(np.sum(problem.weights * gaps * gaps))


def z_loss(problem: CEProblem, solution: CESolution) -> float:
    """Unweighted squared displacement of the intervention grid.

    Cell costs deliberately do not enter: this is the raw proximity metric,
    not the penalized distance term.
    """
    d = solution.z_tilde - problem.observed_grid()
    return float(np.sum(d * d))


def total_loss(x_value: float, z_value: float, tradeoff: float) -> float:
    """Combined score ``x_loss + tradeoff * z_loss``."""
    if tradeoff < 0:
        raise DomainError(f"tradeoff must be >= 0, got {tradeoff}")
    return float(x_value + tradeoff * z_value)


def temporal_smoothness(solution: CESolution) -> float | None:
    """Sum of absolute second differences along each intervention row.

    Needs at least one (t, t+1, t+2) triple inside the window, i.e.
    ``q >= 3``; below that the metric is undefined and ``None`` is returned
    (absent, not zero).
    """
    zt = solution.z_tilde
    if zt.shape[1] < 3:
        return None
    second = zt[:, 2:] - 2.0 * zt[:, 1:-1] + zt[:, :-2]
    return float(np.sum(np.abs(second)))


def mae_vs_oracle(
    solution: CESolution,
    oracle_grid: np.ndarray,
    denominator: str = "k-plus-q",
) -> float:
    """Mean absolute gap between a reference grid and the solution grid.

    The default denominator is ``K + q``, matching the metric's printed
    definition; ``"k-times-q"`` selects the per-cell average ``K * q``
    variant instead.
    """
    oracle_grid = np.asarray(oracle_grid, dtype=np.float64)
    if oracle_grid.shape != solution.z_tilde.shape:
        raise DomainError(
            f"oracle grid shape {oracle_grid.shape} != solution shape "
            f"{solution.z_tilde.shape}"
        )
    if denominator not in MAE_DENOMINATORS:
        raise DomainError(f"denominator must be one of {MAE_DENOMINATORS}")
    K, q = solution.z_tilde.shape
    div = K + q if denominator == "k-plus-q" else K * q
    return float(np.sum(np.abs(oracle_grid - solution.z_tilde)) / div)


@dataclass(frozen=True)
class MetricsReport:
    """The five quality metrics for one solved problem.

    ``ts`` is ``None`` when the window is too short for second differences;
    ``mae`` is ``None`` when no reference solution is available.
    """

    x_loss: float
    z_loss: float
    tradeoff: float
    total_loss: float
    ts: float | None = None
    mae: float | None = None

    def as_dict(self) -> dict:
        return {
            "x_loss": self.x_loss,
            "z_loss": self.z_loss,
            "tradeoff": self.tradeoff,
            "total_loss": self.total_loss,
            "ts": self.ts,
            "mae": self.mae,
        }


def compute_metrics(
    problem: CEProblem,
    solution: CESolution,
    tradeoff: float | None = None,
    oracle_grid: np.ndarray | None = None,
    mae_denominator: str = "k-plus-q",
) -> MetricsReport:
    """Evaluate all metrics; ``tradeoff`` defaults to the problem's penalty."""
    lam = problem.penalty if tradeoff is None else tradeoff
    xv = x_loss(problem, solution)
    zv = z_loss(problem, solution)
    return MetricsReport(
        x_loss=xv,
        z_loss=zv,
        tradeoff=lam,
        total_loss=total_loss(xv, zv, lam),
        ts=temporal_smoothness(solution),
        mae=None
        if oracle_grid is None
        else mae_vs_oracle(solution, oracle_grid, mae_denominator),
    )


# ---------------------------------------------------------------------------
# Importance sweep.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CETemplate:
    """Anchor-free description of one counterfactual-search configuration.

    ``target_rule`` is ``("fixed", value)`` for the same absolute target at
    every window, or ``("offset", delta)`` for the unintervened rollout
    shifted by ``delta`` (useful on non-stationary data where one absolute
    level is meaningless).
    """

    q: int
    penalty: float
    weights: WeightScheme = WeightScheme("uniform")
    target_rule: tuple[str, float] = ("fixed", 2.0)
    distance: str = "weighted-squared"
    cell_costs: float | np.ndarray = 1.0
    keep: tuple[int, ...] | None = None
    boundary: str = "observed-history"

    def __post_init__(self):
        rule, _ = self.target_rule
        if rule not in ("fixed", "offset"):
            raise DomainError(f"target rule must be 'fixed' or 'offset', got '{rule}'")


def build_problem(
    template: CETemplate, model: ForecastModel, series: SeriesSet, anchor: int
) -> CEProblem:
    """Instantiate the template at one anchor."""
    w = make_weights(template.weights, template.q)
    mask = (
        None
        if template.keep is None
        else restrict_mask(series.n_exog, template.q, template.keep)
    )
    rule, value = template.target_rule
    if rule == "fixed":
        target = np.full(template.q + 1, value)
    else:
        probe = CEProblem(
            model=model, series=series, q=template.q,
            target=np.zeros(template.q + 1), weights=w,
            penalty=template.penalty, anchor=anchor,
            distance=template.distance, cell_costs=template.cell_costs,
            mask=mask, boundary=template.boundary,
        )
        target = rollout(model, probe, probe.observed_grid()) + value
    return CEProblem(
        model=model, series=series, q=template.q, target=target, weights=w,
        penalty=template.penalty, anchor=anchor, distance=template.distance,
        cell_costs=template.cell_costs, mask=mask, boundary=template.boundary,
    )


@dataclass(frozen=True)
class SweepSampling:
    """Which admissible anchors to visit: all, every ``stride``-th, or a
    seeded random subset of ``count`` anchors."""

    kind: str = "all"
    stride: int = 1
    count: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("all", "stride", "random"):
            raise DomainError(f"sampling kind must be all/stride/random, got '{self.kind}'")
        if self.kind == "stride" and self.stride < 1:
            raise DomainError("stride must be >= 1")
        if self.kind == "random" and (self.count is None or self.count < 1):
            raise DomainError("random sampling needs a positive count")


@dataclass
class ImportanceReport:
    """Per-cell displacement statistics across the sweep's windows.

    Arrays have shape ``(K, q)``; column ``j`` corresponds to lag offset
    ``q - j`` before each window's anchor (column ``q-1`` is the cell one
    step before the anchor).  ``std`` is the population standard deviation,
    so a single-window sweep reports zeros.
    """

    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray
    n_windows: int
    anchors: list[int]
    n_failed: int
    labels: tuple[str, ...]
    q: int
    solutions: list[CESolution] | None = None

    def rows(self) -> list[dict]:
        """Flat (variable, offset) rows mirroring the statistics tables."""
        out = []
        for k in range(self.mean.shape[0]):
            for j in range(self.mean.shape[1]):
                offset = self.q - j
                out.append(
                    {
                        "variable": self.labels[k],
                        "k": k,
                        "lag_offset": offset,
                        "mean": float(self.mean[k, j]),
                        "std": float(self.std[k, j]),
                        "min": float(self.min[k, j]),
                        "max": float(self.max[k, j]),
                    }
                )
        return out


def admissible_anchors(model: ForecastModel, series: SeriesSet, q: int) -> list[int]:
    """Sweep anchors, newest first: from ``T-2`` down while history remains."""
    lags = max(model.m, model.n)
    first = series.n_points - 2
    last = q + lags
    if first < last:
        raise DomainError(
            f"no admissible sweep anchors for q={q}, lags={lags}, T={series.n_points}"
        )
    return list(range(first, last - 1, -1))


def importance_sweep(
    model: ForecastModel,
    series: SeriesSet,
    template: CETemplate,
    sampling: SweepSampling | None = None,
    opt: OptimizerConfig | None = None,
    retain_solutions: bool = False,
) -> ImportanceReport:
    """Solve the template at every sampled anchor and aggregate displacements.

    Individual solve failures are skipped and counted rather than aborting
    the sweep.  Deterministic for fixed seeds: anchors are visited newest
    first and statistics accumulate in that order.
    """
    sampling = sampling or SweepSampling()
    anchors = admissible_anchors(model, series, template.q)
    if sampling.kind == "stride":
        anchors = anchors[:: sampling.stride]
    elif sampling.kind == "random":
        rng = np.random.default_rng(sampling.seed)
        count = min(sampling.count, len(anchors))
        picked = rng.choice(len(anchors), size=count, replace=False)
        anchors = [anchors[i] for i in sorted(picked)]

    diffs = []
    used = []
    kept: list[CESolution] | None = [] if retain_solutions else None
    n_failed = 0
    for anchor in anchors:
        try:
            problem = build_problem(template, model, series, anchor)
            solution = solve_ce(problem, opt)
        except CetxError:
            n_failed += 1
            continue
        diffs.append(solution.z_tilde - problem.observed_grid())
        used.append(anchor)
        if kept is not None:
            kept.append(solution)
    if not diffs:
        raise DomainError("importance sweep: every window failed to solve")
    stacked = np.stack(diffs)
    return ImportanceReport(
        mean=stacked.mean(axis=0),
        std=stacked.std(axis=0),
        min=stacked.min(axis=0),
        max=stacked.max(axis=0),
        n_windows=len(diffs),
        anchors=used,
        n_failed=n_failed,
        labels=series.labels,
        q=template.q,
        solutions=kept,
    )
