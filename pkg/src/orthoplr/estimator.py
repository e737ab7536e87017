"""Two-stage estimation of the treatment effect.

Every implemented moment is linear in theta, so the empirical moment equation
has the closed-form root

    theta_hat = sum_t (Y_t - <X_t, q_hat>) w_t / sum_t e_t w_t,

with e_t = T_t - <X_t, gamma_hat> and weight w_t = e_t (first order) or
w_t = e_t^r - mu_r_hat - r e_t mu_prev_hat (second order).

Protocols:

* sample_split_estimate: Lasso nuisance fits on one half of the data; the
  other half is the second stage.  In estimated second-order mode the second
  half is split again: one quarter estimates the residual moments from
  residuals formed with gamma_hat, the remaining quarter solves for theta.
* cross_fit_estimate: K folds; for each fold the nuisance is fit on the
  complement and moment contributions accumulate on the fold; theta solves
  the pooled equation.  In estimated second-order mode each complement is
  split so the residual-moment sample is independent of the gamma_hat used
  to form the residuals (nested split, fraction configurable).

The plug-in sandwich variance uses J_hat = mean of the analytic
theta-derivative and V_hat = sample variance of the moment values at
theta_hat; se = sqrt(V_hat / J_hat^2 / n2) with n2 the number of second-stage
moment evaluations (all points for cross-fitting).

A DegenerateJacobianError signals an empirical Jacobian denominator that is
either numerically zero or statistically indistinguishable from zero, the
operational symptom of a Gaussian-like treatment residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .dgp import Dataset, PLRInstance, exact_noise_moments
from .lasso import LassoConfig, lambda_experiment, lambda_theory, lasso_fit
from .moments import (
    MODE_ESTIMATED,
    MODE_KNOWN,
    MomentSpec,
    NuisanceEstimate,
    estimate_residual_moments,
)
from .rng import make_rng

FIRST_ORDER_METHOD = "dml_first_order"
SECOND_ORDER_METHOD = "second_order"

#: |den| below this multiple of the fold size is treated as an exact zero.
HARD_DEGENERACY_TOL = 1e-10
#: Raise when the empirical Jacobian is within this many standard errors of
#: zero: the closed-form root exists but cannot be certified nonzero.  At 2.0
#: a Gaussian treatment residual triggers with ~95% probability at large n
#: while the valid (non-Gaussian, dense-nuisance) configurations sit at z >= 4.
DEGENERACY_Z = 2.0
#: folds smaller than this skip the statistical test (too noisy to call).
DEGENERACY_MIN_N = 16


class DegenerateJacobianError(RuntimeError):
    """Empirical moment Jacobian is (statistically) zero; estimate invalid."""


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = SECOND_ORDER_METHOD
    r: int = 3
    K: int = 2
    lambda_rule: str = "experiment"
    lambda_C: float = 1.0
    lambda_M: float = 1.0
    moment_mode: str = MODE_ESTIMATED
    nested_lasso_fraction: float = 0.5
    lasso_max_iters: int = 10_000
    lasso_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.method not in (FIRST_ORDER_METHOD, SECOND_ORDER_METHOD):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == SECOND_ORDER_METHOD and self.r not in (2, 3):
            raise ValueError("r must be 2 or 3")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.lambda_rule not in ("experiment", "theory"):
            raise ValueError("lambda_rule must be 'experiment' or 'theory'")
        if self.moment_mode not in (MODE_KNOWN, MODE_ESTIMATED):
            raise ValueError("moment_mode must be 'known' or 'estimated'")
        if not 0.0 < self.nested_lasso_fraction < 1.0:
            raise ValueError("nested_lasso_fraction must be in (0, 1)")

    @property
    def moment_spec(self) -> MomentSpec:
        if self.method == FIRST_ORDER_METHOD:
            return MomentSpec.first_order()
        return MomentSpec.second_order(self.r, self.moment_mode)

    @property
    def label(self) -> str:
        if self.method == FIRST_ORDER_METHOD:
            return FIRST_ORDER_METHOD
        suffix = "" if self.moment_mode == MODE_ESTIMATED else "_known"
        return f"second_order_r{self.r}{suffix}"


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with sandwich standard error and fit diagnostics.

    Invariants: se_hat = sqrt(V_hat / J_hat^2 / n2) and
    ci_95 = theta_hat +/- 1.96 * se_hat, with n2 = sum(n_used['second_stage']).
    """

    method: str
    theta_hat: float
    se_hat: float
    ci_95: tuple[float, float]
    J_hat: float
    V_hat: float
    nuisance_diag: dict
    n_used: dict
    n_total: int
    moment_sum_residual: float

    def __post_init__(self):
        n2 = sum(self.n_used["second_stage"])
        se = math.sqrt(self.V_hat / self.J_hat**2 / n2)
        if not math.isclose(self.se_hat, se, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("se_hat inconsistent with sqrt(V/J^2/n2)")
        lo = self.theta_hat - 1.96 * self.se_hat
        hi = self.theta_hat + 1.96 * self.se_hat
        if not (
            math.isclose(self.ci_95[0], lo, rel_tol=1e-9, abs_tol=1e-12)
            and math.isclose(self.ci_95[1], hi, rel_tol=1e-9, abs_tol=1e-12)
        ):
            raise ValueError("ci_95 inconsistent with theta_hat +/- 1.96 se_hat")


def gaussian_lp_error_norm(l2_error: float, k: int) -> float:
    """L^k prediction-error norm of <X, v> for standard normal X.

    For ||v||_2 = l2_error:  E[|<X, v>|^k]^(1/k) = l2_error * E[|Z|^k]^(1/k),
    Z standard normal, E|Z|^k = 2^(k/2) Gamma((k+1)/2) / sqrt(pi).
    """
    abs_mom = 2.0 ** (k / 2.0) * math.gamma((k + 1) / 2.0) / math.sqrt(math.pi)
    return float(l2_error) * abs_mom ** (1.0 / k)


def _resolve_lambda(cfg: EstimatorConfig, p: int, n_total: int) -> float:
    # The penalty is indexed by the total sample size handed to the
    # estimation call, matching the experiment convention lambda_n.
    if cfg.lambda_rule == "experiment":
        return lambda_experiment(p, n_total)
    return lambda_theory(cfg.lambda_C, cfg.lambda_M, p, n_total)


def _fit_nuisance(
    dataset: Dataset,
    fit_idx: np.ndarray,
    mom_idx: "np.ndarray | None",
    truth: "PLRInstance | None",
    cfg: EstimatorConfig,
    lam: float,
) -> NuisanceEstimate:
    spec = cfg.moment_spec
    lcfg = LassoConfig(lam=lam, max_iters=cfg.lasso_max_iters, tol=cfg.lasso_tol)
    Xf = dataset.X[fit_idx]
    q_fit = lasso_fit(Xf, dataset.Y[fit_idx], lcfg)
    g_fit = lasso_fit(Xf, dataset.T[fit_idx], lcfg)

    mu2 = mu3 = 0.0
    mode = MODE_ESTIMATED
    if spec.kind != "first_order":
        if cfg.moment_mode == MODE_KNOWN:
            if truth is None:
                raise ValueError("moment_mode='known' requires the instance ground truth")
            mom = exact_noise_moments(truth.eta_dist, 3)
            mu2, mu3 = float(mom[1]), float(mom[2])
            mode = MODE_KNOWN
        else:
            mu2, mu3 = estimate_residual_moments(
                dataset.T[mom_idx], dataset.X[mom_idx], g_fit.beta_hat
            )

    diag = {
        "lasso_converged_q": q_fit.converged,
        "lasso_converged_gamma": g_fit.converged,
    }
    if truth is not None:
        l2_q = float(np.linalg.norm(q_fit.beta_hat - truth.q0))
        l2_g = float(np.linalg.norm(g_fit.beta_hat - truth.gamma0))
        diag.update(
            l2_q=l2_q,
            l2_gamma=l2_g,
            l4_pred_q=gaussian_lp_error_norm(l2_q, 4),
            l6_pred_gamma=gaussian_lp_error_norm(l2_g, 6),
        )
        if spec.kind != "first_order":
            mom = exact_noise_moments(truth.eta_dist, 3)
            diag.update(
                mu2_err=abs(mu2 - float(mom[1])), mu3_err=abs(mu3 - float(mom[2]))
            )
    return NuisanceEstimate(
        q_hat=q_fit.beta_hat,
        gamma_hat=g_fit.beta_hat,
        mu2_hat=mu2,
        mu3_hat=mu3,
        mode=mode,
        diagnostics=diag,
    )


def _moment_pieces(T, Y, X, nuisance: NuisanceEstimate, spec: MomentSpec):
    """(resid_y, e, w) arrays for the closed-form solve and variance."""
    e = T - X @ nuisance.gamma_hat
    resid_y = Y - X @ nuisance.q_hat
    if spec.kind == "first_order":
        w = e
    else:
        mu_prev, mu_r = nuisance.point_values(spec)
        w = e**spec.r - mu_r - spec.r * e * mu_prev
    return resid_y, e, w


def _check_degenerate(den: float, ew: np.ndarray) -> None:
    n = ew.shape[0]
    if abs(den) < HARD_DEGENERACY_TOL * n:
        raise DegenerateJacobianError(
            f"moment Jacobian denominator {den:.3e} is numerically zero for n={n}"
        )
    if n >= DEGENERACY_MIN_N:
        sd = float(np.std(ew))
        if sd > 0.0 and abs(den / n) < DEGENERACY_Z * sd / math.sqrt(n):
            raise DegenerateJacobianError(
                f"moment Jacobian {den / n:.3e} within {DEGENERACY_Z} standard errors of zero"
            )


def solve_theta(T, Y, X, nuisance: NuisanceEstimate, spec: MomentSpec) -> float:
    """Exact root of the empirical moment equation on one fold."""
    resid_y, e, w = _moment_pieces(
        np.asarray(T, dtype=float), np.asarray(Y, dtype=float), np.asarray(X, dtype=float),
        nuisance, spec,
    )
    ew = e * w
    den = float(np.sum(ew))
    _check_degenerate(den, ew)
    return float(resid_y @ w / den)


def estimate_variance(T, Y, X, theta_hat: float, nuisance: NuisanceEstimate, spec: MomentSpec):
    """(J_hat, V_hat, se_hat) on a second-stage fold of size n2.

    J_hat is the sample mean of the analytic theta-derivative, V_hat the
    sample variance of moment values at theta_hat, se = sqrt(V/J^2/n2).
    """
    resid_y, e, w = _moment_pieces(
        np.asarray(T, dtype=float), np.asarray(Y, dtype=float), np.asarray(X, dtype=float),
        nuisance, spec,
    )
    if e.shape[0] == 0:
        raise ValueError("second-stage fold is empty")
    return _variance_from_pieces(resid_y, e, w, theta_hat)


def _variance_from_pieces(resid_y, e, w, theta_hat):
    ew = e * w
    n2 = ew.shape[0]
    J = -float(np.mean(ew))
    _check_degenerate(-J * n2, ew)
    m = (resid_y - theta_hat * e) * w
    V = float(np.var(m, ddof=1)) if n2 > 1 else 0.0
    se = math.sqrt(V / (J * J) / n2)
    return J, V, se


def confidence_interval(report: EstimateReport, level: float) -> tuple[float, float]:
    """theta_hat +/- z_{(1+level)/2} * se_hat with exact normal quantiles."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    z = NormalDist().inv_cdf((1.0 + level) / 2.0)
    return (report.theta_hat - z * report.se_hat, report.theta_hat + z * report.se_hat)


# --- fold plans -------------------------------------------------------------


def _split_plan(N: int, rng, split=None):
    if split is not None:
        A, B = (np.asarray(ix, dtype=np.intp) for ix in split)
    else:
        perm = rng.permutation(N)
        A, B = perm[: N // 2], perm[N // 2 :]
    if len(A) == 0 or len(B) == 0:
        raise ValueError("both halves must be nonempty")
    if np.intersect1d(A, B).size:
        raise ValueError("halves must be disjoint")
    return A, B


def _crossfit_folds(N: int, K: int, rng, folds=None):
    """Round-robin fold assignment over a seeded shuffle; remainder spread."""
    if folds is not None:
        out = [np.asarray(ix, dtype=np.intp) for ix in folds]
    else:
        perm = rng.permutation(N)
        out = [perm[k::K] for k in range(K)]
    total = np.concatenate(out)
    if len(np.unique(total)) != len(total):
        raise ValueError("folds must be disjoint")
    if any(len(ix) == 0 for ix in out):
        raise ValueError("every fold must be nonempty")
    return out


def _report_from_pools(method, pools, diag, n_used, n_total) -> EstimateReport:
    resid_y = np.concatenate([p[0] for p in pools])
    e = np.concatenate([p[1] for p in pools])
    w = np.concatenate([p[2] for p in pools])
    ew = e * w
    den = float(np.sum(ew))
    _check_degenerate(den, ew)
    theta = float(resid_y @ w / den)
    J, V, se = _variance_from_pieces(resid_y, e, w, theta)
    m_sum = float(np.sum((resid_y - theta * e) * w))
    return EstimateReport(
        method=method,
        theta_hat=theta,
        se_hat=se,
        ci_95=(theta - 1.96 * se, theta + 1.96 * se),
        J_hat=J,
        V_hat=V,
        nuisance_diag=diag,
        n_used=n_used,
        n_total=n_total,
        moment_sum_residual=m_sum,
    )


def sample_split_estimate(
    dataset: Dataset,
    truth: "PLRInstance | None",
    cfg: EstimatorConfig,
    rng=None,
    split=None,
    nuisance_override: "NuisanceEstimate | None" = None,
) -> EstimateReport:
    """Single-split protocol: nuisance on half A, theta on (part of) half B.

    nuisance_override bypasses the first stage entirely (diagnostic use,
    e.g. plugging in the exact nuisance).
    """
    N = dataset.n
    if N < 4:
        raise ValueError("need at least 4 observations")
    rng = make_rng(cfg.seed) if rng is None else rng
    A, B = _split_plan(N, rng, split)
    lam = _resolve_lambda(cfg, dataset.p, N)
    spec = cfg.moment_spec

    estimated_mode = (
        spec.kind != "first_order"
        and cfg.moment_mode == MODE_ESTIMATED
        and nuisance_override is None
    )
    if estimated_mode:
        mom_idx, fold2 = B[: len(B) // 2], B[len(B) // 2 :]
        if len(mom_idx) == 0 or len(fold2) == 0:
            raise ValueError("half B too small to split for moment estimation")
    else:
        mom_idx, fold2 = None, B

    if nuisance_override is not None:
        nuisance = nuisance_override
    else:
        nuisance = _fit_nuisance(dataset, A, mom_idx, truth, cfg, lam)
    pieces = _moment_pieces(
        dataset.T[fold2], dataset.Y[fold2], dataset.X[fold2], nuisance, spec
    )
    n_used = {
        "first_stage": [int(len(A))],
        "moment_stage": [int(len(mom_idx))] if mom_idx is not None else [0],
        "second_stage": [int(len(fold2))],
    }
    diag = {"lambda": lam, "folds": [nuisance.diagnostics or {}]}
    return _report_from_pools(cfg.label, [pieces], diag, n_used, N)


def cross_fit_estimate(
    dataset: Dataset,
    truth: "PLRInstance | None",
    cfg: EstimatorConfig,
    rng=None,
    folds=None,
    nuisance_override: "NuisanceEstimate | None" = None,
) -> EstimateReport:
    """K-fold cross-fitting; theta solves the pooled moment equation."""
    N = dataset.n
    if N < 2 * cfg.K:
        raise ValueError(f"need at least {2 * cfg.K} observations for K={cfg.K}")
    rng = make_rng(cfg.seed) if rng is None else rng
    fold_list = _crossfit_folds(N, cfg.K, rng, folds)
    lam = _resolve_lambda(cfg, dataset.p, N)
    spec = cfg.moment_spec
    estimated_mode = (
        spec.kind != "first_order"
        and cfg.moment_mode == MODE_ESTIMATED
        and nuisance_override is None
    )

    pools = []
    fold_diags = []
    n_used = {"first_stage": [], "moment_stage": [], "second_stage": []}
    for k, eval_idx in enumerate(fold_list):
        comp = np.concatenate([fold_list[j] for j in range(cfg.K) if j != k])
        if estimated_mode:
            n_fit = int(round(len(comp) * cfg.nested_lasso_fraction))
            fit_idx, mom_idx = comp[:n_fit], comp[n_fit:]
            if len(fit_idx) == 0 or len(mom_idx) == 0:
                raise ValueError("complement too small for the nested moment split")
        else:
            fit_idx, mom_idx = comp, None
        # independence audit: moment sample disjoint from both the Lasso
        # sample and the evaluation fold
        if mom_idx is not None:
            assert not np.intersect1d(mom_idx, fit_idx).size
            assert not np.intersect1d(mom_idx, eval_idx).size
        assert not np.intersect1d(fit_idx, eval_idx).size

        if nuisance_override is not None:
            nuisance = nuisance_override
        else:
            nuisance = _fit_nuisance(dataset, fit_idx, mom_idx, truth, cfg, lam)
        pools.append(
            _moment_pieces(
                dataset.T[eval_idx], dataset.Y[eval_idx], dataset.X[eval_idx],
                nuisance, spec,
            )
        )
        fold_diags.append(nuisance.diagnostics or {})
        n_used["first_stage"].append(int(len(fit_idx)))
        n_used["moment_stage"].append(int(len(mom_idx)) if mom_idx is not None else 0)
        n_used["second_stage"].append(int(len(eval_idx)))

    diag = {"lambda": lam, "folds": fold_diags}
    return _report_from_pools(cfg.label, pools, diag, n_used, N)


# --- JSON persistence -------------------------------------------------------


def estimator_config_to_json(cfg: EstimatorConfig) -> dict:
    return {
        "method": cfg.method,
        "r": cfg.r,
        "K": cfg.K,
        "lambda_rule": cfg.lambda_rule,
        "lambda_C": cfg.lambda_C,
        "lambda_M": cfg.lambda_M,
        "moment_mode": cfg.moment_mode,
        "nested_lasso_fraction": cfg.nested_lasso_fraction,
        "lasso_max_iters": cfg.lasso_max_iters,
        "lasso_tol": cfg.lasso_tol,
        "seed": cfg.seed,
    }


def estimator_config_from_json(obj: dict) -> EstimatorConfig:
    return EstimatorConfig(**obj)


def report_to_json(report: EstimateReport) -> dict:
    return {
        "method": report.method,
        "theta_hat": report.theta_hat,
        "se_hat": report.se_hat,
        "ci_95": list(report.ci_95),
        "J_hat": report.J_hat,
        "V_hat": report.V_hat,
        "nuisance_diag": report.nuisance_diag,
        "n_used": report.n_used,
        "n_total": report.n_total,
        "moment_sum_residual": report.moment_sum_residual,
    }


def report_from_json(obj: dict) -> EstimateReport:
    obj = dict(obj)
    obj["ci_95"] = tuple(obj["ci_95"])
    return EstimateReport(**obj)
