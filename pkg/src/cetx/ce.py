"""Counterfactual intervention extraction over a forecast window.

Given a trained one-step model and an anchor time ``T`` (0-based index into
the series), the engine rolls the model forward recursively over the window
``[T-q, T]``: the first prediction uses only pre-window data, and every
later step feeds earlier predictions back as autoregressive inputs while
exogenous inputs inside the window come from a candidate intervention grid.
The search then minimizes

    sum_t w_t * (target_t - prediction_t)^2  +  penalty * d(grid, observed)

over the masked grid cells by gradient descent with momentum, starting from
the observed exogenous values (so the distance term starts at zero and the
large-penalty limit is exact from iteration zero).

Two details worth knowing:

* The tracking sum intentionally includes the first window step even though
  no intervention can influence it (it is a constant offset in the
  objective); keeping it preserves the documented loss definition.
* The first prediction's autoregressive inputs come from observed history by
  default; ``boundary="predicted-history"`` substitutes recursively
  predicted values for them instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .autodiff import Var, absolute, evaluate_with_gradient, stack
from .errors import DomainError, NumericError, RolloutDivergenceError, SolveDivergenceError
from .models import ForecastModel
from .series import SeriesSet

DISTANCE_KINDS = ("weighted-squared", "weighted-euclidean")
BOUNDARY_MODES = ("observed-history", "predicted-history")


@dataclass(frozen=True)
class WeightScheme:
    """Named recipes for the per-step tracking weights.

    ``uniform`` spreads weight evenly, ``exponential`` decays by ``decay``
    from the oldest window step toward the anchor, and ``final-only`` puts
    all weight on the anchor step.
    """

    kind: str = "uniform"
    decay: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform", "exponential", "final-only"):
            raise DomainError(f"unknown weight scheme '{self.kind}'")
        if self.kind == "exponential" and not 0.0 < self.decay < 1.0:
            raise DomainError(f"decay must be in (0, 1), got {self.decay}")


def make_weights(scheme: WeightScheme, q: int) -> np.ndarray:
    """Materialize a weight vector of length ``q + 1``."""
    if q < 1:
        raise DomainError(f"horizon q must be >= 1, got {q}")
    size = q + 1
    if scheme.kind == "uniform":
        return np.full(size, 1.0 / size)
    if scheme.kind == "exponential":
        powers = scheme.decay ** np.arange(1, size + 1)
        return powers / powers.sum()
    w = np.zeros(size)
    w[-1] = 1.0
    return w


@dataclass(frozen=True)
class CEProblem:
    """Frozen statement of one counterfactual-search instance.

    ``anchor`` is the 0-based index of the last targeted time point; the
    window covers times ``anchor - q .. anchor`` and the intervention grid
    has shape ``(K, q)`` with column ``j`` holding time ``anchor - q + j``.
    """

    model: ForecastModel
    series: SeriesSet
    q: int
    target: np.ndarray
    weights: np.ndarray
    penalty: float
    anchor: int | None = None
    distance: str = "weighted-squared"
    cell_costs: np.ndarray | float = 1.0
    mask: np.ndarray | None = None
    boundary: str = "observed-history"
    _boundary_cache: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        K = self.series.n_exog
        if self.anchor is None:
            object.__setattr__(self, "anchor", self.series.n_points - 1)
        if self.q < 1:
            raise DomainError(f"horizon q must be >= 1, got {self.q}")
        lags = max(self.model.m, self.model.n)
        if self.anchor - self.q - lags < 0:
            raise DomainError(
                f"anchor {self.anchor} leaves no history before the window "
                f"(need anchor - q - max(m, n) >= 0 with q={self.q}, lags={lags})"
            )
        if self.anchor > self.series.n_points - 1:
            raise DomainError("anchor beyond the end of the series")
        if self.model.n_exog != K:
            raise DomainError(
                f"model expects {self.model.n_exog} exogenous series, data has {K}"
            )
        target = np.asarray(self.target, dtype=np.float64)
        if target.shape != (self.q + 1,):
            raise DomainError(f"target must have length q+1={self.q + 1}")
        if not np.isfinite(target).all():
            raise DomainError("target values must be finite")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (self.q + 1,):
            raise DomainError(f"weights must have length q+1={self.q + 1}")
        if (weights < 0).any() or not (weights > 0).any():
            raise DomainError("weights must be >= 0 with at least one positive")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

        if self.distance not in DISTANCE_KINDS:
            raise DomainError(f"distance must be one of {DISTANCE_KINDS}")
        if self.boundary not in BOUNDARY_MODES:
            raise DomainError(f"boundary must be one of {BOUNDARY_MODES}")

        costs = np.broadcast_to(
            np.asarray(self.cell_costs, dtype=np.float64), (K, self.q)
        ).copy()
        if (costs <= 0).any():
            raise DomainError("cell costs must be strictly positive")
        costs.setflags(write=False)
        object.__setattr__(self, "cell_costs", costs)

        mask = self.mask
        mask = np.ones((K, self.q), dtype=bool) if mask is None else np.array(mask, dtype=bool)
        if mask.shape != (K, self.q):
            raise DomainError(f"mask must have shape (K, q) = ({K}, {self.q})")
        if not mask.any():
            raise DomainError("mask must leave at least one optimizable cell")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def window_start(self) -> int:
        return self.anchor - self.q

    def observed_grid(self) -> np.ndarray:
        """Observed exogenous values over the window, shape (K, q)."""
        return self.series.z[:, self.window_start : self.anchor].copy()


@dataclass
class CESolution:
    """Optimized intervention plus diagnostics.

    Cells outside the problem mask are bit-identical to the observed values.
    The objective trace records the accepted iterate's total per iteration
    (index 0 is the starting point).
    """

    z_tilde: np.ndarray
    rollout: np.ndarray
    trace: list[float]
    converged: bool
    iterations: int
    metrics: Any = None


def restrict_mask(n_exog: int, q: int, keep) -> np.ndarray:
    """Mask that frees only the 0-based variable rows listed in ``keep``."""
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise DomainError("keep must name at least one variable")
    for k in keep:
        if not 0 <= k < n_exog:
            raise DomainError(f"variable index {k} out of range [0, {n_exog})")
    mask = np.zeros((n_exog, q), dtype=bool)
    mask[keep, :] = True
    return mask


# ---------------------------------------------------------------------------
# Rollout.
# ---------------------------------------------------------------------------


def _boundary_x(problem: CEProblem) -> dict[int, float]:
    """Autoregressive inputs for times before the window, per boundary mode.

    Constant for a given problem, so the result is cached on it.
    """
    if problem._boundary_cache is not None:
        return problem._boundary_cache
    model, s = problem.model, problem.series
    lo = problem.window_start
    need = range(lo - model.m, lo)
    if problem.boundary == "observed-history":
        out = {t: float(s.x[t]) for t in need}
    else:
        # predicted-history: recursive one-model forecast from the earliest
        # predictable time to the window edge, fed by observed exogenous data.
        lags = max(model.m, model.n)
        xhat: dict[int, float] = {t: float(s.x[t]) for t in range(lags)}
        for t in range(lags, lo):
            feats = [xhat.get(t - j, float(s.x[t - j])) for j in range(1, model.m + 1)]
            for k in range(s.n_exog):
                feats.extend(float(s.z[k, t - j]) for j in range(1, model.n + 1))
            xhat[t] = model.predict_one(np.asarray(feats))
        out = {t: xhat.get(t, float(s.x[t])) for t in need}
    object.__setattr__(problem, "_boundary_cache", out)
    return out


def _rollout_values(problem: CEProblem, grid) -> list:
    """Window predictions; entries are floats or Vars depending on ``grid``.

    ``grid`` is a list of K lists of q scalars (float or Var), column j
    holding time ``window_start + j``.
    """
    model, s = problem.model, problem.series
    lo, anchor = problem.window_start, problem.anchor
    pre_x = _boundary_x(problem)
    xhat: list = []

    def x_at(t: int):
        return xhat[t - lo] if t >= lo else pre_x[t]

    def z_at(k: int, t: int):
        return grid[k][t - lo] if t >= lo else float(s.z[k, t])

    for step, t in enumerate(range(lo, anchor + 1)):
        feats = [x_at(t - j) for j in range(1, model.m + 1)]
        for k in range(s.n_exog):
            feats.extend(z_at(k, t - j) for j in range(1, model.n + 1))
        try:
            pred = model.predict_one(stack(feats))
        except NumericError as exc:
            raise RolloutDivergenceError(
                f"prediction became non-finite at window step {step} (time {t})",
                step=step,
            ) from exc
        value = pred.value if isinstance(pred, Var) else pred
        if not np.isfinite(value):
            raise RolloutDivergenceError(
                f"prediction became non-finite at window step {step} (time {t})",
                step=step,
            )
        xhat.append(pred)
    return xhat


def rollout(model: ForecastModel, problem: CEProblem, z_tilde: np.ndarray) -> np.ndarray:
    """Recursive window forecast under an intervention grid.

    Returns the ``q + 1`` predictions for times ``anchor - q .. anchor``.
    """
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    if z_tilde.shape != problem.mask.shape:
        raise DomainError(f"z_tilde must have shape {problem.mask.shape}")
    if not np.isfinite(z_tilde).all():
        raise DomainError("z_tilde must be finite")
    if model is not problem.model:
        problem = CEProblem(
            model=model,
            series=problem.series,
            q=problem.q,
            target=problem.target,
            weights=problem.weights,
            penalty=problem.penalty,
            anchor=problem.anchor,
            distance=problem.distance,
            cell_costs=problem.cell_costs,
            mask=problem.mask,
            boundary=problem.boundary,
        )
    grid = [[float(z_tilde[k, j]) for j in range(problem.q)] for k in range(z_tilde.shape[0])]
    values = _rollout_values(problem, grid)
    return np.array([float(v) for v in values])


# ---------------------------------------------------------------------------
# Objective.
# ---------------------------------------------------------------------------


def _objective_terms(problem: CEProblem, grid):
    """Tracking and distance terms for a scalar/Var grid; shared code path."""
    xhat = _rollout_values(problem, grid)
    w = problem.weights
    fit = 0.0
    for i, pred in enumerate(xhat):
        if w[i] == 0.0:
            continue
        d = problem.target[i] - pred
        fit = fit + w[i] * (d * d)
    z = problem.series.z
    lo = problem.window_start
    dist = 0.0
    euclidean = problem.distance == "weighted-euclidean"
    for k in range(z.shape[0]):
        for j in range(problem.q):
            if not problem.mask[k, j]:
                continue
            delta = grid[k][j] - float(z[k, lo + j])
            if euclidean:
                # sqrt(cost * diff^2) == sqrt(cost) * |diff|; subgradient 0
                # at zero displacement.
                contrib = absolute(delta) * float(np.sqrt(problem.cell_costs[k, j]))
            else:
                contrib = problem.cell_costs[k, j] * (delta * delta)
            dist = dist + contrib
    return fit, dist


def objective(problem: CEProblem, z_tilde: np.ndarray) -> tuple[float, float, float]:
    """Return ``(total, tracking_term, distance_term)`` at ``z_tilde``."""
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    grid = [[float(z_tilde[k, j]) for j in range(problem.q)] for k in range(z_tilde.shape[0])]
    fit, dist = _objective_terms(problem, grid)
    return float(fit + problem.penalty * dist), float(fit), float(dist)


# ---------------------------------------------------------------------------
# Solver.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    """Gradient-descent settings for :func:`solve_ce`.

    ``seed`` is recorded for reproducibility bookkeeping; the default solver
    is deterministic and does not consume it.  Momentum above ~0.5 can make
    the objective trace oscillate near convergence.
    """

    learning_rate: float = 0.01
    momentum: float = 0.1
    max_iterations: int = 5000
    tolerance: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError("momentum must be in [0, 1)")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


_PATIENCE = 10          # consecutive small deltas required to stop
_RUNAWAY_FACTOR = 10.0  # objective blow-up threshold triggering a restart


def solve_ce(problem: CEProblem, opt: OptimizerConfig | None = None) -> CESolution:
    """Minimize the counterfactual objective over the masked grid cells.

    Plain gradient descent with momentum, initialized at the observed
    exogenous values.  If an iterate blows the objective up (large penalty
    with too large a step), the solver rewinds to the best-seen iterate,
    resets the velocity and halves its internal step multiplier, which keeps
    the search stable for any penalty without changing well-behaved runs.
    Returns the best-seen iterate.
    """
    opt = opt or OptimizerConfig()
    mask = problem.mask
    rows, cols = np.nonzero(mask)
    z_obs = problem.observed_grid()
    u = z_obs[rows, cols].copy()

    def masked_objective(uv):
        # uv is a Var (recorded pass) or a numpy vector (plain evaluation);
        # the shared dispatch ops make one code path serve both.
        grid = [
            [float(z_obs[k, j]) for j in range(problem.q)]
            for k in range(z_obs.shape[0])
        ]
        for pos, (k, j) in enumerate(zip(rows, cols)):
            grid[k][j] = uv[pos]
        fit, dist = _objective_terms(problem, grid)
        return fit + problem.penalty * dist

    def eval_grad(uv):
        return evaluate_with_gradient(masked_objective, uv)

    def eval_plain(uv):
        return float(masked_objective(np.asarray(uv, dtype=np.float64)))

    total = eval_plain(u)
    trace = [total]
    best_total, best_u = total, u.copy()
    velocity = np.zeros_like(u)
    step_scale = 1.0
    calm = 0
    iterations = 0
    converged = False

    for iterations in range(1, opt.max_iterations + 1):
        try:
            value, grad = eval_grad(u)
            velocity = opt.momentum * velocity - opt.learning_rate * step_scale * grad
            candidate = u + velocity
            cand_total = eval_plain(candidate)
        except (NumericError, RolloutDivergenceError):
            cand_total = np.inf

        if not np.isfinite(cand_total) or cand_total > _RUNAWAY_FACTOR * (best_total + 1.0):
            if step_scale < 1e-14:
                raise SolveDivergenceError(
                    "counterfactual search kept diverging at the smallest step",
                    trace=trace,
                )
            u = best_u.copy()
            velocity = np.zeros_like(u)
            step_scale *= 0.5
            calm = 0
            trace.append(best_total)
            continue

        u = candidate
        prev_total = trace[-1]
        trace.append(cand_total)
        if cand_total < best_total:
            best_total, best_u = cand_total, u.copy()
        if abs(prev_total - cand_total) < opt.tolerance:
            calm += 1
            if calm >= _PATIENCE:
                converged = True
                break
        else:
            calm = 0

    z_tilde = z_obs.copy()
    z_tilde[rows, cols] = best_u
    z_tilde.setflags(write=False)
    preds = rollout(problem.model, problem, z_tilde)
    return CESolution(
        z_tilde=z_tilde,
        rollout=preds,
        trace=trace,
        converged=converged,
        iterations=iterations,
    )
