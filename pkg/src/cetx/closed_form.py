"""Exact counterfactual solution for linear one-step models.

For a linear autoregression with exogenous inputs the window rollout is an
affine map of the intervention cells, so the counterfactual objective is a
ridge problem with a closed-form minimizer.  This module materializes that
affine map as explicit matrices and solves the regularized normal equations,
providing the exactness oracle for the gradient-based solver.

Matrix convention (lag orders ``m = n = 1``)::

    predictions = A @ x + B_fix @ Z_fix + B_opt @ Z_opt + intercepts

* ``A`` is ``(q+1, q+1)`` lower triangular with entry ``(i, j)`` equal to
  ``alpha**(i - j + 1)``; ``x`` carries the boundary value ``x[T-q-1]`` in
  its first slot (zeros elsewhere), so ``A @ x`` contributes
  ``alpha**(i+1) * x[T-q-1]`` to row ``i``.
* ``B_fix[i, k] = alpha**i * beta_k`` acts on the boundary exogenous values
  ``Z_fix[k] = z[k, T-q-1]``.
* ``B_opt`` column ``j*K + k`` (time-major, variable-minor: time
  ``T-q+j``, variable ``k``) has entries ``alpha**(i-j-1) * beta_k`` for
  rows ``i > j`` and zeros above, so an intervention can only influence
  strictly later predictions.
* ``intercepts[i] = c * (1 + alpha + ... + alpha**i)`` accumulates the
  fitted intercept through the recursion; it is folded into the residual.

For higher lag orders the same field names hold impulse-response blocks
computed by running the recursion on unit inputs (``A`` becomes
``(q+1, m)`` acting on the ``m`` boundary target values, ``B_fix`` becomes
``(q+1, K*n)``); the defining property in either case is that the matrix
product reproduces the recursive rollout exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ce import CEProblem
from .errors import (
    DomainError,
    NumericError,
    SingularSystemError,
    UnsupportedConfigurationError,
)
from .models import ForecastModel


@dataclass(frozen=True)
class LinearSystem:
    """Affine window map plus the data vectors the closed form needs."""

    A: np.ndarray
    x: np.ndarray
    B_fix: np.ndarray
    Z_fix: np.ndarray
    B_opt: np.ndarray
    Z_opt: np.ndarray
    W: np.ndarray
    x_bar: np.ndarray
    intercepts: np.ndarray
    q: int
    n_exog: int
    m: int
    n: int

    def residual(self) -> np.ndarray:
        """Target minus everything the intervention cannot change."""
        return self.x_bar - self.A @ self.x - self.B_fix @ self.Z_fix - self.intercepts

    def predictions(self, z_opt: np.ndarray) -> np.ndarray:
        """Window rollout implied by an intervention vector."""
        return (
            self.A @ self.x
            + self.B_fix @ self.Z_fix
            + self.B_opt @ np.asarray(z_opt, dtype=np.float64)
            + self.intercepts
        )

    def objective(self, z_opt: np.ndarray, penalty: float) -> float:
        r = self.x_bar - self.predictions(z_opt)
        fit = float(r @ self.W @ r)
        d = np.asarray(z_opt) - self.Z_opt
        return fit + penalty * float(d @ d)

    def grid_from_vec(self, vec: np.ndarray) -> np.ndarray:
        """Reshape a time-major intervention vector to the (K, q) grid."""
        return np.asarray(vec, dtype=np.float64).reshape(self.q, self.n_exog).T

    def vec_from_grid(self, grid: np.ndarray) -> np.ndarray:
        return np.asarray(grid, dtype=np.float64).T.reshape(-1)


def _model_coefficients(model: ForecastModel):
    x_coef = model.params["coef"][: model.m]
    z_coef = model.params["coef"][model.m :].reshape(model.n_exog, model.n)
    return x_coef, z_coef, float(model.params["intercept"])


def _linear_window_roll(
    x_coef: np.ndarray,
    z_coef: np.ndarray,
    intercept: float,
    x_boundary: np.ndarray,
    z_boundary: np.ndarray,
    z_window: np.ndarray,
    q: int,
) -> np.ndarray:
    """Run the linear recursion over the window; boundary vectors newest-first."""
    m = len(x_coef)
    K, n = z_coef.shape
    xhat = np.empty(q + 1)
    for i in range(q + 1):
        acc = intercept
        for j in range(1, m + 1):
            past = xhat[i - j] if i - j >= 0 else x_boundary[j - i - 1]
            acc += x_coef[j - 1] * past
        for k in range(K):
            for j in range(1, n + 1):
                past = z_window[k, i - j] if i - j >= 0 else z_boundary[k, j - i - 1]
                acc += z_coef[k, j - 1] * past
        xhat[i] = acc
    return xhat


def build_matrices(model: ForecastModel, problem: CEProblem) -> LinearSystem:
    """Materialize the affine window map for a linear model.

    Requires an ``arx`` model, an all-true mask, the weighted-squared
    distance and unit cell costs; anything else has no closed form here.
    """
    if model.kind != "arx":
        raise UnsupportedConfigurationError(
            f"closed form requires a linear 'arx' model, got '{model.kind}'"
        )
    if not problem.mask.all():
        raise UnsupportedConfigurationError(
            "closed form covers the unrestricted problem (all-true mask) only"
        )
    if problem.distance != "weighted-squared":
        raise UnsupportedConfigurationError(
            "closed form requires the weighted-squared distance"
        )
    if not np.all(problem.cell_costs == 1.0):
        raise UnsupportedConfigurationError("closed form requires unit cell costs")
    if model.n_exog != problem.series.n_exog:
        raise UnsupportedConfigurationError("model/problem exogenous count mismatch")

    q = problem.q
    K = model.n_exog
    lo = problem.window_start
    s = problem.series
    x_coef, z_coef, c = _model_coefficients(model)

    Z_opt = s.z[:, lo : lo + q].T.reshape(-1)
    W = np.diag(problem.weights)
    x_bar = problem.target.copy()

    if model.m == 1 and model.n == 1:
        alpha = float(x_coef[0])
        betas = z_coef[:, 0]
        rows = np.arange(q + 1)
        A = np.zeros((q + 1, q + 1))
        for i in range(q + 1):
            for j in range(i + 1):
                A[i, j] = alpha ** (i - j + 1)
        x = np.zeros(q + 1)
        x[0] = s.x[lo - 1]
        B_fix = (alpha ** rows)[:, None] * betas[None, :]
        Z_fix = s.z[:, lo - 1].copy()
        B_opt = np.zeros((q + 1, K * q))
        for j in range(q):
            for k in range(K):
                for i in range(j + 1, q + 1):
                    B_opt[i, j * K + k] = alpha ** (i - j - 1) * betas[k]
        intercepts = c * np.cumsum(alpha ** rows)
        return LinearSystem(
            A=A, x=x, B_fix=B_fix, Z_fix=Z_fix, B_opt=B_opt, Z_opt=Z_opt,
            W=W, x_bar=x_bar, intercepts=intercepts,
            q=q, n_exog=K, m=1, n=1,
        )

    # Higher lag orders: columns are impulse responses of the recursion.
    m, n = model.m, model.n
    xb = s.x[lo - m : lo][::-1].copy()          # newest first
    zb = np.stack([s.z[k, lo - n : lo][::-1] for k in range(K)])

    def roll(x_boundary, z_boundary, z_window, intercept):
        return _linear_window_roll(
            x_coef, z_coef, intercept, x_boundary, z_boundary, z_window, q
        )

    zeros_zb = np.zeros((K, n))
    zeros_zw = np.zeros((K, q))
    A = np.zeros((q + 1, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        A[:, j] = roll(e, zeros_zb, zeros_zw, 0.0)
    # Boundary exogenous entries: oldest time first, variable-minor, matching
    # the single-lag layout when n == 1.
    B_fix = np.zeros((q + 1, K * n))
    Z_fix = np.zeros(K * n)
    col = 0
    for tau in range(n, 0, -1):
        for k in range(K):
            e = np.zeros((K, n))
            e[k, tau - 1] = 1.0
            B_fix[:, col] = roll(np.zeros(m), e, zeros_zw, 0.0)
            Z_fix[col] = s.z[k, lo - tau]
            col += 1
    B_opt = np.zeros((q + 1, K * q))
    for j in range(q):
        for k in range(K):
            e = np.zeros((K, q))
            e[k, j] = 1.0
            B_opt[:, j * K + k] = roll(np.zeros(m), zeros_zb, e, 0.0)
    intercepts = roll(np.zeros(m), zeros_zb, zeros_zw, c)
    return LinearSystem(
        A=A, x=xb, B_fix=B_fix, Z_fix=Z_fix, B_opt=B_opt, Z_opt=Z_opt,
        W=W, x_bar=x_bar, intercepts=intercepts,
        q=q, n_exog=K, m=m, n=n,
    )


def solve_closed_form(system: LinearSystem, penalty: float) -> np.ndarray:
    """Ridge minimizer of the window objective, as a time-major vector.

    Solves ``(B'WB + penalty*I) zeta = B'W r + penalty * Z_opt`` through a
    factorization (never an explicit inverse) and verifies the stationarity
    residual.  ``penalty = 0`` is allowed only when ``B'WB`` is nonsingular.
    """
    if penalty < 0:
        raise DomainError(f"penalty must be >= 0, got {penalty}")
    B, W = system.B_opt, system.W
    G = B.T @ W @ B + penalty * np.eye(B.shape[1])
    if penalty == 0.0 and (not np.isfinite(np.linalg.cond(G)) or np.linalg.cond(G) > 1e12):
        raise SingularSystemError(
            "B'WB is singular at penalty 0; use a positive penalty"
        )
    rhs = B.T @ W @ system.residual() + penalty * system.Z_opt
    zeta = np.linalg.solve(G, rhs)
    gap = np.max(np.abs(G @ zeta - rhs))
    scale = max(1.0, np.max(np.abs(rhs)))
    if gap > 1e-10 * scale:
        raise NumericError(
            f"stationarity residual {gap:.3g} exceeds tolerance; system ill-conditioned"
        )
    return zeta


def regularization_path(
    system: LinearSystem, penalties
) -> list[dict[str, float]]:
    """Closed-form tracking/proximity losses along a penalty grid."""
    out = []
    for lam in penalties:
        zeta = solve_closed_form(system, float(lam))
        r = system.x_bar - system.predictions(zeta)
        fit = float(r @ system.W @ r)
        d = zeta - system.Z_opt
        out.append(
            {
                "penalty": float(lam),
                "x_loss": fit,
                "z_loss": float(d @ d),
                "total": fit + float(lam) * float(d @ d),
            }
        )
    return out
