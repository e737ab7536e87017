"""L1-penalized least squares by cyclic coordinate descent.

Solves   min_beta  (1/2n) ||y - X beta||_2^2 + lambda ||beta||_1

starting from beta = 0, sweeping coordinates 0..p-1 cyclically with an
incrementally maintained residual, until the largest absolute coefficient
change in a sweep falls below tol.  No intercept and no standardization by
default: the intended design matrices have mean-zero, unit-variance columns
already.  Optimality of a fit is certified a posteriori by the KKT residual.

Penalty choices:
    lambda_experiment(p, n) = sqrt(log(p) / n)
    lambda_theory(C, M, p, n) = 2 C M sqrt(3 log(p) / n)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class LassoConfig:
    lam: float
    max_iters: int = 10_000
    tol: float = 1e-7
    standardize: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class LassoFit:
    """Solver output.  objective is (1/2n)||y - X beta_hat||^2 + lam ||beta_hat||_1
    recomputed from scratch at beta_hat; objective_path holds the per-sweep
    values from the maintained residual (for monotonicity diagnostics)."""

    beta_hat: np.ndarray
    iterations: int
    converged: bool
    objective: float
    objective_path: np.ndarray


def soft_threshold(z: float, t: float):
    """sign(z) * max(|z| - t, 0); vectorized over z."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@njit(cache=True)
def _cd_kernel(X, y, lam, max_iters, tol):  # pragma: no cover - exercised via lasso_fit
    n, p = X.shape
    beta = np.zeros(p)
    r = y.copy()
    col_ms = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        col_ms[j] = s / n
    obj_path = np.empty(max_iters)
    sweeps = 0
    converged = False
    for sweep in range(max_iters):
        max_delta = 0.0
        for j in range(p):
            if col_ms[j] == 0.0:
                continue
            bj = beta[j]
            if bj != 0.0:
                for i in range(n):
                    r[i] += X[i, j] * bj
            rho = 0.0
            for i in range(n):
                rho += X[i, j] * r[i]
            rho /= n
            bnew = 0.0
            mag = abs(rho) - lam
            if mag > 0.0:
                bnew = math.copysign(mag, rho) / col_ms[j]
            if bnew != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * bnew
            beta[j] = bnew
            delta = abs(bnew - bj)
            if delta > max_delta:
                max_delta = delta
        ss = 0.0
        for i in range(n):
            ss += r[i] * r[i]
        l1 = 0.0
        for j in range(p):
            l1 += abs(beta[j])
        obj_path[sweep] = 0.5 * ss / n + lam * l1
        sweeps = sweep + 1
        if max_delta < tol:
            converged = True
            break
    return beta, sweeps, converged, obj_path[:sweeps].copy()


def objective_value(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    n = X.shape[0]
    resid = y - X @ beta
    return float(0.5 * resid @ resid / n + lam * np.sum(np.abs(beta)))


def lasso_fit(X: np.ndarray, y: np.ndarray, cfg: LassoConfig) -> LassoFit:
    """Cyclic coordinate descent from beta = 0; deterministic given inputs.

    Non-convergence within max_iters is reported via converged=False, not an
    exception; the caller decides.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    scale = None
    X_fit = np.asfortranarray(X)
    if cfg.standardize:
        scale = np.sqrt(np.mean(X * X, axis=0))
        scale[scale == 0.0] = 1.0
        X_fit = np.asfortranarray(X / scale)
    beta, sweeps, converged, obj_path = _cd_kernel(
        X_fit, y, float(cfg.lam), int(cfg.max_iters), float(cfg.tol)
    )
    if scale is not None:
        beta = beta / scale
    return LassoFit(
        beta_hat=beta,
        iterations=int(sweeps),
        converged=bool(converged),
        objective=objective_value(X, y, beta, cfg.lam),
        objective_path=obj_path,
    )


def kkt_residual(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Max KKT violation of the L1 problem at beta.

    Active coordinates must satisfy (1/n)<x_j, y - X beta> = lam * sign(beta_j);
    inactive ones |(1/n)<x_j, y - X beta>| <= lam.  Zero iff beta is optimal.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n, p = X.shape
    if y.shape != (n,) or beta.shape != (p,):
        raise ValueError("dimension mismatch")
    grad = X.T @ (y - X @ beta) / n
    active = beta != 0.0
    viol = np.maximum(np.abs(grad) - lam, 0.0)
    viol[active] = np.abs(grad[active] - lam * np.sign(beta[active]))
    return float(viol.max(initial=0.0))


def lambda_experiment(p: int, n: int) -> float:
    """sqrt(log(p) / n)."""
    if p < 2 or n < 1:
        raise ValueError("need p >= 2 and n >= 1")
    return math.sqrt(math.log(p) / n)


def lambda_theory(C: float, M: float, p: int, n: int) -> float:
    """2 C M sqrt(3 log(p) / n), for noise bound C and parameter bound M."""
    if C <= 0 or M <= 0:
        raise ValueError("need C > 0 and M > 0")
    if p < 2 or n < 1:
        raise ValueError("need p >= 2 and n >= 1")
    return 2.0 * C * M * math.sqrt(3.0 * math.log(p) / n)
