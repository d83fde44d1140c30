"""Seeded synthetic data generators.

Two designs: a linear autoregression driven by independent standard-normal
exogenous series, and a nonlinear variant mixing a saturating term, a
three-halves power of the second lag, squared exogenous effects and a small
interaction.  Both start from zero initial values, keep every generated
point (no burn-in) and are bit-reproducible per seed: the exogenous matrix
is drawn first, then the noise vector, then the recursion runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import spow
from .errors import DomainError
from .series import SeriesSet, write_csv

POWER_CONVENTIONS = ("sign-preserving", "clamp-at-zero")


@dataclass(frozen=True)
class LinearGenSpec:
    """x[t] = alpha * x[t-1] + sum_k beta[k] * z[k, t-1] + noise."""

    alpha: float = 0.6
    beta: tuple[float, ...] = (0.2, 0.5)
    sigma: float = 0.1
    n_points: int = 200
    seed: int = 0

    def __post_init__(self):
        if abs(self.alpha) >= 1:
            raise DomainError(f"|alpha| must be < 1 for stationarity, got {self.alpha}")
        if self.sigma < 0:
            raise DomainError("sigma must be >= 0")
        if self.n_points < 2:
            raise DomainError("need at least 2 points")


@dataclass(frozen=True)
class NonlinearGenSpec:
    """Saturating + power + squared-exogenous + interaction recursion.

    ``x[t] = tanh_weight * tanh(x[t-1]) + power_weight * x[t-2]**power
    + sum_k beta[k] * z[k, t-1]**2
    + interaction_weight * sum_k x[t-1] * z[k, t-2] + noise``

    The power term is undefined for negative bases at fractional exponents;
    ``power_convention`` picks the extension (sign-preserving
    ``sign(x)*|x|**p`` by default, or clamping negative bases to zero).
    """

    tanh_weight: float = 0.3
    power_weight: float = 0.1
    power: float = 1.5
    beta: tuple[float, ...] = (0.2, 0.5)
    interaction_weight: float = 0.05
    sigma: float = 0.1
    n_points: int = 200
    seed: int = 0
    power_convention: str = "sign-preserving"

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError("sigma must be >= 0")
        if self.n_points < 3:
            raise DomainError("need at least 3 points (two lags)")
        if self.power_convention not in POWER_CONVENTIONS:
            raise DomainError(
                f"power_convention must be one of {POWER_CONVENTIONS}"
            )


def _labels(count: int) -> tuple[str, ...]:
    return tuple(f"z{k + 1}" for k in range(count))


def gen_linear(spec: LinearGenSpec) -> SeriesSet:
    """Generate the linear design; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    K = len(spec.beta)
    T = spec.n_points
    z = rng.standard_normal((K, T))
    eps = rng.normal(0.0, spec.sigma, T) if spec.sigma > 0 else np.zeros(T)
    beta = np.asarray(spec.beta)
    x = np.zeros(T)
    for t in range(1, T):
        x[t] = spec.alpha * x[t - 1] + beta @ z[:, t - 1] + eps[t]
    return SeriesSet(x=x, z=z, labels=_labels(K))


def gen_nonlinear(spec: NonlinearGenSpec) -> SeriesSet:
    """Generate the nonlinear design; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    K = len(spec.beta)
    T = spec.n_points
    z = rng.standard_normal((K, T))
    eps = rng.normal(0.0, spec.sigma, T) if spec.sigma > 0 else np.zeros(T)
    beta = np.asarray(spec.beta)
    x = np.zeros(T)
    for t in range(2, T):
        prev = x[t - 1]
        if spec.power_convention == "sign-preserving":
            powered = spow(x[t - 2], spec.power)
        else:
            powered = max(x[t - 2], 0.0) ** spec.power
        x[t] = (
            spec.tanh_weight * np.tanh(prev)
            + spec.power_weight * powered
            + beta @ (z[:, t - 1] ** 2)
            + spec.interaction_weight * prev * np.sum(z[:, t - 2])
            + eps[t]
        )
        if not np.isfinite(x[t]):
            raise DomainError(
                f"nonlinear generation became non-finite at t={t}; "
                "consider the clamp-at-zero power convention"
            )
    return SeriesSet(x=x, z=z, labels=_labels(K))


def stationary_variance(spec: LinearGenSpec) -> float:
    """Analytic long-run variance of the linear design's target series."""
    drive = float(np.sum(np.square(spec.beta))) + spec.sigma**2
    return drive / (1.0 - spec.alpha**2)


def save_generated(series: SeriesSet, spec, csv_path, sidecar_path=None) -> None:
    """Write the standard CSV plus a JSON sidecar recording the full spec."""
    write_csv(series, csv_path)
    if sidecar_path is not None:
        doc = {
            "schema_version": 1,
            "generator": type(spec).__name__,
            "spec": asdict(spec),
        }
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
