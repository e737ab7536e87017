"""Moment functions for PLR treatment-effect estimation and their derivatives.

Writing e = t - g for the treatment residual, the implemented moments are

    first order:    m = (y - q - theta * e) * e
    second order:   m = (y - q - theta * e) * (e^r - mu_r - r * e * mu_prev)

with r in {2, 3} and nuisance coordinates ordered (q, g, mu_prev, mu_r),
where mu_prev and mu_r stand for the conditional moments E[eta^(r-1) | X] and
E[eta^r | X].  In 'known' mode mu_r is a known constant rather than a
nuisance coordinate, leaving three nuisance coordinates (q, g, mu_prev).

Both moments are low-degree polynomials in all arguments, so every mixed
nuisance derivative has a closed form; dalpha_moment evaluates them exactly
via the product rule (the first factor is linear in (q, g), the second factor
does not depend on q).  Finite differences are kept only as a cross-check.

All evaluation functions broadcast over numpy arrays in t, y and the nuisance
values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dgp import NoiseDistribution, exact_noise_moments

Alpha = tuple[int, int, int, int]

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"
MODE_KNOWN = "known"
MODE_ESTIMATED = "estimated"

#: Mixed (q, mu_r) and (g, mu_r) derivatives are deterministically nonzero
#: (identically 1 and -theta) and are excluded from the estimated-mode
#: orthogonality set.
EXCLUDED_ALPHAS: tuple[Alpha, Alpha] = ((1, 0, 0, 1), (0, 1, 0, 1))


@dataclass(frozen=True)
class MomentSpec:
    """Which moment function to use, and whether mu_r is known or estimated."""

    kind: str
    r: Optional[int] = None
    moment_mode: Optional[str] = None

    def __post_init__(self):
        if self.kind == FIRST_ORDER:
            if self.r is not None or self.moment_mode is not None:
                raise ValueError("first-order moment takes no r or moment_mode")
        elif self.kind == SECOND_ORDER:
            if self.r not in (2, 3):
                raise ValueError(f"r must be 2 or 3, got {self.r}")
            if self.moment_mode not in (MODE_KNOWN, MODE_ESTIMATED):
                raise ValueError(f"moment_mode must be known or estimated, got {self.moment_mode}")
        else:
            raise ValueError(f"unknown moment kind {self.kind!r}")

    @classmethod
    def first_order(cls) -> "MomentSpec":
        return cls(kind=FIRST_ORDER)

    @classmethod
    def second_order(cls, r: int, moment_mode: str = MODE_ESTIMATED) -> "MomentSpec":
        return cls(kind=SECOND_ORDER, r=r, moment_mode=moment_mode)

    @property
    def n_nuisance(self) -> int:
        if self.kind == FIRST_ORDER:
            return 2
        return 3 if self.moment_mode == MODE_KNOWN else 4


@dataclass(frozen=True)
class NuisancePoint:
    """Free evaluation point for the nuisance coordinates (q, g, mu_prev, mu_r).

    For the first-order moment only (q, g) matter; in known mode mu_r carries
    the known constant E[eta^r].
    """

    q: "float | np.ndarray"
    g: "float | np.ndarray"
    mu_prev: "float | np.ndarray" = 0.0
    mu_r: "float | np.ndarray" = 0.0


@dataclass
class NuisanceEstimate:
    """First-stage output: coefficient vectors plus residual-moment values.

    mode records whether mu2/mu3 came from estimation or from exact knowledge
    of the noise law; diagnostics holds L2 coefficient errors and moment
    errors when the ground truth was available.
    """

    q_hat: np.ndarray
    gamma_hat: np.ndarray
    mu2_hat: float
    mu3_hat: float
    mode: str
    diagnostics: Optional[dict] = None

    def __post_init__(self):
        self.q_hat = np.asarray(self.q_hat, dtype=float)
        self.gamma_hat = np.asarray(self.gamma_hat, dtype=float)
        if not (np.all(np.isfinite(self.q_hat)) and np.all(np.isfinite(self.gamma_hat))):
            raise ValueError("nuisance coefficient vectors must be finite")
        if not (np.isfinite(self.mu2_hat) and np.isfinite(self.mu3_hat)):
            raise ValueError("residual moments must be finite")

    def point_values(self, spec: MomentSpec) -> tuple[float, float]:
        """(mu_prev, mu_r) to plug into the moment of the given spec.

        For r=2 the previous moment is E[eta | X] = 0 exactly by the model,
        so it is hard-wired rather than estimated.
        """
        if spec.kind == FIRST_ORDER:
            return 0.0, 0.0
        if spec.r == 2:
            return 0.0, self.mu2_hat
        return self.mu2_hat, self.mu3_hat


def moment_first_order(t, y, theta, q, g):
    """(y - q - theta*(t - g)) * (t - g)."""
    e = t - g
    return (y - q - theta * e) * e


def moment_second_order(t, y, theta, point: NuisancePoint, r: int):
    """(y - q - theta*e) * (e^r - mu_r - r*e*mu_prev) with e = t - g."""
    if r not in (2, 3):
        raise ValueError("r must be 2 or 3")
    e = t - point.g
    weight = e**r - point.mu_r - r * e * point.mu_prev
    return (y - point.q - theta * e) * weight


def moment_weight(spec: MomentSpec, t, point: NuisancePoint):
    """The second factor of the moment: e (first order) or the r-th order weight."""
    e = t - point.g
    if spec.kind == FIRST_ORDER:
        return e
    return e**spec.r - point.mu_r - spec.r * e * point.mu_prev


def moment_value(spec: MomentSpec, t, y, theta, point: NuisancePoint):
    if spec.kind == FIRST_ORDER:
        return moment_first_order(t, y, theta, point.q, point.g)
    return moment_second_order(t, y, theta, point, spec.r)


def dtheta_moment(spec: MomentSpec, t, y, theta, point: NuisancePoint):
    """d/dtheta of the moment: -(t - g) * weight.  Constant in theta."""
    return -(t - point.g) * moment_weight(spec, t, point)


def _falling(r: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= r - i
    return out


def _weight_deriv(spec: MomentSpec, bg: int, bp: int, br: int, e, mu_prev, mu_r):
    """Mixed partial of the weight factor w.r.t. (g, mu_prev, mu_r) orders."""
    if spec.kind == FIRST_ORDER:
        # weight = e; mu coordinates are not arguments of this moment
        if bp or br:
            raise ValueError("first-order moment has only (q, g) nuisance coordinates")
        if bg == 0:
            return e
        return -1.0 if bg == 1 else 0.0
    r = spec.r
    if br > 0:
        return -1.0 if (br == 1 and bg == 0 and bp == 0) else 0.0
    if bp > 1:
        return 0.0
    if bp == 1:
        if bg == 0:
            return -r * e
        return float(r) if bg == 1 else 0.0
    if bg == 0:
        return e**r - mu_r - r * e * mu_prev
    out = (-1.0) ** bg * _falling(r, bg) * e ** (r - bg) if bg <= r else 0.0
    if bg == 1:
        out = out + r * mu_prev
    return out


def dalpha_moment(spec: MomentSpec, alpha, t, y, theta, point: NuisancePoint):
    """Exact mixed partial of the moment w.r.t. (q, g, mu_prev, mu_r).

    alpha is a 4-multi-index with total order at most 3.  Coordinates the
    given moment does not have (mu's for first order, mu_r in known mode)
    must carry zero order.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != 4 or any(a < 0 for a in alpha):
        raise ValueError("alpha must be a 4-multi-index of nonnegative integers")
    if sum(alpha) > 3:
        raise ValueError("only total derivative order <= 3 is implemented")
    aq, ag, ap, ar = alpha
    if spec.kind == FIRST_ORDER and (ap or ar):
        raise ValueError("first-order moment has only (q, g) nuisance coordinates")
    if spec.kind == SECOND_ORDER and spec.moment_mode == MODE_KNOWN and ar:
        raise ValueError("known-moment mode treats mu_r as a constant, not a nuisance")
    e = t - point.g
    # Product rule for m = A * W with A = y - q - theta*e linear in (q, g)
    # and W free of q:  D^a m = A D^a W - aq D^(a-e_q) W + theta ag D^(a-e_g) W,
    # where terms with any remaining q-order vanish.
    if aq >= 2:
        result = 0.0
    elif aq == 1:
        result = -_weight_deriv(spec, ag, ap, ar, e, point.mu_prev, point.mu_r)
    else:
        A = y - point.q - theta * e
        result = A * _weight_deriv(spec, ag, ap, ar, e, point.mu_prev, point.mu_r)
        if ag >= 1:
            result = result + theta * ag * _weight_deriv(
                spec, ag - 1, ap, ar, e, point.mu_prev, point.mu_r
            )
    # Broadcast constants to the data shape so downstream statistics are uniform.
    return result + 0.0 * (np.asarray(t) + np.asarray(y))


def estimate_residual_moments(T_prime: np.ndarray, X_prime: np.ndarray, gamma_hat: np.ndarray):
    """Plug-in second and third residual moments from an independent sample.

    With residuals eta_hat = T' - X' gamma_hat:
        mu2_hat = mean(eta_hat^2)
        mu3_hat = mean(eta_hat^3 - 3 * mu2_hat * eta_hat)
    The caller must supply (T', X') independent of gamma_hat.
    """
    T_prime = np.asarray(T_prime, dtype=float)
    X_prime = np.asarray(X_prime, dtype=float)
    if T_prime.shape[0] == 0:
        raise ValueError("need at least one observation to estimate residual moments")
    eta_hat = T_prime - X_prime @ np.asarray(gamma_hat, dtype=float)
    mu2 = float(np.mean(eta_hat**2))
    mu3 = float(np.mean(eta_hat**3 - 3.0 * mu2 * eta_hat))
    return mu2, mu3


def true_nuisance_point(instance, x: np.ndarray, spec: MomentSpec) -> NuisancePoint:
    """Exact nuisance values of a DGP instance at a covariate point x."""
    x = np.asarray(x, dtype=float)
    q0x = float(x @ instance.q0)
    g0x = float(x @ instance.gamma0)
    if spec.kind == FIRST_ORDER:
        return NuisancePoint(q=q0x, g=g0x)
    mom = exact_noise_moments(instance.eta_dist, spec.r)
    return NuisancePoint(
        q=q0x, g=g0x, mu_prev=float(mom[spec.r - 2]), mu_r=float(mom[spec.r - 1])
    )


def nongaussian_gap(eta_dist: NoiseDistribution, r: int):
    """E[eta^(r+1)] - r E[eta^2] E[eta^(r-1)], exact.

    Nonzero iff the r-th order moment identifies theta: it is both the
    identifiability slope and minus the population theta-Jacobian.  For
    mean-zero laws it reduces to skewness (r=2) or excess kurtosis (r=3);
    it vanishes for every r when eta is Gaussian.
    """
    mom = exact_noise_moments(eta_dist, r + 1)
    prev = mom[r - 2] if r >= 2 else 1  # E[eta^0] = 1 guard, r >= 2 in practice
    return mom[r] - r * mom[1] * prev


def population_jacobian(spec: MomentSpec, eta_dist: NoiseDistribution):
    """Exact E[d/dtheta m] at the truth: -E[eta^2] (first order) or -gap."""
    if spec.kind == FIRST_ORDER:
        return -exact_noise_moments(eta_dist, 2)[1]
    return -nongaussian_gap(eta_dist, spec.r)


def require_nongaussian(spec: MomentSpec, eta_dist: NoiseDistribution) -> None:
    """Raise if the noise law degenerates the requested second-order moment."""
    if spec.kind == FIRST_ORDER:
        return
    if nongaussian_gap(eta_dist, spec.r) == 0:
        raise ValueError(
            f"noise law has E[eta^{spec.r + 1}] = {spec.r} E[eta^2] E[eta^{spec.r - 1}]; "
            f"the r={spec.r} moment cannot identify theta"
        )
