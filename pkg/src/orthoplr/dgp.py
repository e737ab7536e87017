"""Synthetic partially linear regression (PLR) problems.

The generating model is

    T = <X, gamma0> + eta        E[eta | X] = 0
    Y = theta0 * T + <X, beta0> + eps        E[eps | X, T] = 0

with X an n x p matrix of i.i.d. standard normal covariates, and eta, eps
i.i.d. noise independent of X.  beta0 and gamma0 are s-sparse with a shared
support; the reduced-form outcome coefficient vector is q0 = theta0*gamma0 + beta0,
so that E[Y | X] = <X, q0>.

The default treatment noise is a four-point discrete law (random discounts
over a baseline price) with values {0.5, 0, -1.5, -3.5} and probabilities
(.65, .2, .1, .05); its moments are available exactly through
:func:`exact_noise_moments`, which enumerates discrete laws in rational
arithmetic and therefore serves as the oracle for every moment-based test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

Number = "int | float | Fraction"

_KINDS = ("discrete", "uniform", "gaussian")


def _double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


@dataclass(frozen=True)
class NoiseDistribution:
    """A mean-structure-free scalar noise law with exactly computable moments.

    kind='discrete' uses `support`/`probs` (kept as exact rationals when given
    as int/Fraction so the moment oracle stays exact); kind='uniform' is
    Uniform(-half_width, half_width); kind='gaussian' is N(0, std_dev^2).
    """

    kind: str
    support: tuple = ()
    probs: tuple = ()
    half_width: "Number | None" = None
    std_dev: "Number | None" = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "discrete":
            if len(self.support) == 0 or len(self.support) != len(self.probs):
                raise ValueError("discrete law needs support and probs of equal, nonzero length")
            probs = [Fraction(p) for p in self.probs]
            if any(p < 0 for p in probs):
                raise ValueError("probabilities must be nonnegative")
            if abs(sum(probs) - 1) > Fraction(1, 10**12):
                raise ValueError(f"probabilities sum to {float(sum(probs))}, not 1 within 1e-12")
        elif self.kind == "uniform":
            if self.half_width is None or self.half_width <= 0:
                raise ValueError("uniform law needs half_width > 0")
        else:
            if self.std_dev is None or self.std_dev <= 0:
                raise ValueError("gaussian law needs std_dev > 0")

    @classmethod
    def discrete(cls, support: Sequence, probs: Sequence) -> "NoiseDistribution":
        return cls(kind="discrete", support=tuple(support), probs=tuple(probs))

    @classmethod
    def uniform(cls, half_width) -> "NoiseDistribution":
        return cls(kind="uniform", half_width=half_width)

    @classmethod
    def gaussian(cls, std_dev) -> "NoiseDistribution":
        return cls(kind="gaussian", std_dev=std_dev)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "discrete":
            vals = np.array([float(v) for v in self.support])
            p = np.array([float(q) for q in self.probs])
            p = p / p.sum()
            return rng.choice(vals, size=n, p=p)
        if self.kind == "uniform":
            h = float(self.half_width)
            return rng.uniform(-h, h, size=n)
        return rng.normal(0.0, float(self.std_dev), size=n)


def default_discrete_eta() -> NoiseDistribution:
    """The four-point discrete treatment-noise law used throughout.

    Values {0.5, 0, -1.5, -3.5} with probabilities (.65, .2, .1, .05), stored
    as exact rationals so that enumeration gives moments (0, 1, -12/5, 161/20)
    exactly.
    """
    return NoiseDistribution.discrete(
        support=(Fraction(1, 2), Fraction(0), Fraction(-3, 2), Fraction(-7, 2)),
        probs=(Fraction(13, 20), Fraction(1, 5), Fraction(1, 10), Fraction(1, 20)),
    )


def exact_noise_moments(dist: NoiseDistribution, r_max: int) -> list:
    """Moments E[eta^1], ..., E[eta^r_max], computed in closed form.

    Discrete laws are enumerated in exact rational arithmetic (Fractions in,
    Fractions out).  Uniform and Gaussian laws use the standard closed forms
    h^r/(r+1) and sigma^r (r-1)!! for even r, zero for odd r.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    if dist.kind == "discrete":
        vals = [Fraction(v) for v in dist.support]
        probs = [Fraction(p) for p in dist.probs]
        return [sum(p * v**r for v, p in zip(vals, probs)) for r in range(1, r_max + 1)]
    if dist.kind == "uniform":
        h = dist.half_width
        return [h**r / (r + 1) if r % 2 == 0 else 0 * h for r in range(1, r_max + 1)]
    sd = dist.std_dev
    return [
        sd**r * _double_factorial(r - 1) if r % 2 == 0 else 0 * sd
        for r in range(1, r_max + 1)
    ]


@dataclass(frozen=True)
class PLRInstance:
    """Ground truth for one PLR problem: coefficients, support, noise laws."""

    theta0: float
    beta0: np.ndarray
    gamma0: np.ndarray
    q0: np.ndarray
    support: np.ndarray
    eta_dist: NoiseDistribution
    eps_dist: NoiseDistribution
    p: int
    s: int

    def __post_init__(self):
        for name in ("beta0", "gamma0", "q0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.intp))
        if not (0 <= self.s <= self.p):
            raise ValueError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")
        for name in ("beta0", "gamma0", "q0"):
            if getattr(self, name).shape != (self.p,):
                raise ValueError(f"{name} must have shape ({self.p},)")
        sup = self.support
        if sup.shape != (self.s,) or len(np.unique(sup)) != self.s:
            raise ValueError("support must hold s distinct indices")
        if self.s and (sup.min() < 0 or sup.max() >= self.p):
            raise ValueError("support indices out of range")
        mask = np.zeros(self.p, dtype=bool)
        mask[sup] = True
        for name in ("beta0", "gamma0"):
            arr = getattr(self, name)
            if np.any(arr[~mask] != 0.0):
                raise ValueError(f"{name} must vanish off the shared support")
            if np.any(arr[mask] == 0.0):
                raise ValueError(f"{name} must be nonzero on the shared support")
        if not np.array_equal(self.q0, self.theta0 * self.gamma0 + self.beta0):
            raise ValueError("q0 must equal theta0*gamma0 + beta0")
        for name in ("beta0", "gamma0", "q0", "support"):
            getattr(self, name).flags.writeable = False


def make_instance(
    theta0: float,
    beta0: np.ndarray,
    gamma0: np.ndarray,
    eta_dist: NoiseDistribution,
    eps_dist: NoiseDistribution,
) -> PLRInstance:
    """Assemble an instance from coefficient vectors, deriving support and q0."""
    beta0 = np.asarray(beta0, dtype=float)
    gamma0 = np.asarray(gamma0, dtype=float)
    support = np.flatnonzero(beta0 != 0.0)
    return PLRInstance(
        theta0=float(theta0),
        beta0=beta0,
        gamma0=gamma0,
        q0=theta0 * gamma0 + beta0,
        support=support,
        eta_dist=eta_dist,
        eps_dist=eps_dist,
        p=beta0.shape[0],
        s=support.shape[0],
    )


@dataclass(frozen=True)
class Dataset:
    """Observed data: covariates X (n x p), treatment T, outcome Y.

    eta/eps hold the realized noise draws when the dataset came from
    :func:`generate_dataset`; they are diagnostics, not observables.
    """

    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    n: int
    eta: "np.ndarray | None" = None
    eps: "np.ndarray | None" = None

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "T", np.asarray(self.T, dtype=float))
        object.__setattr__(self, "Y", np.asarray(self.Y, dtype=float))
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.X.ndim != 2 or self.X.shape[0] != self.n:
            raise ValueError("X must be an n x p matrix")
        if self.T.shape != (self.n,) or self.Y.shape != (self.n,):
            raise ValueError("T and Y must be length-n vectors")
        for name in ("X", "T", "Y"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf entries")
            arr.flags.writeable = False

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _default_coeff_law(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(0.0, 5.0, size=size)


def generate_instance(
    p: int,
    s: int,
    theta0: float = 3.0,
    coeff_law: "Callable[[np.random.Generator, int], np.ndarray] | None" = None,
    eta_dist: "NoiseDistribution | None" = None,
    eps_dist: "NoiseDistribution | None" = None,
    rng: "np.random.Generator | None" = None,
) -> PLRInstance:
    """Draw a problem instance: shared support uniform at random, nonzero
    coefficients i.i.d. from coeff_law (default Uniform(0, 5)).

    Draw order (fixed for reproducibility): support, then beta0 values, then
    gamma0 values.
    """
    if not (0 <= s <= p) or p < 1:
        raise ValueError(f"need p >= 1 and 0 <= s <= p, got p={p}, s={s}")
    if rng is None:
        raise ValueError("an explicit rng is required")
    coeff_law = coeff_law or _default_coeff_law
    eta_dist = eta_dist or default_discrete_eta()
    eps_dist = eps_dist or NoiseDistribution.uniform(1.0)
    support = np.sort(rng.choice(p, size=s, replace=False))
    beta0 = np.zeros(p)
    gamma0 = np.zeros(p)
    beta0[support] = coeff_law(rng, s)
    gamma0[support] = coeff_law(rng, s)
    return PLRInstance(
        theta0=float(theta0),
        beta0=beta0,
        gamma0=gamma0,
        q0=theta0 * gamma0 + beta0,
        support=support,
        eta_dist=eta_dist,
        eps_dist=eps_dist,
        p=p,
        s=s,
    )


def generate_dataset(instance: PLRInstance, n: int, rng: np.random.Generator) -> Dataset:
    """Sample n observations from the instance.

    Draw order: X entries, then eta, then eps.  T and Y are evaluated as
    T = X@gamma0 + eta and Y = theta0*T + X@beta0 + eps, so re-evaluating
    those expressions in that association order reproduces T and Y bitwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    X = rng.standard_normal((n, instance.p))
    eta = instance.eta_dist.sample(n, rng)
    eps = instance.eps_dist.sample(n, rng)
    T = X @ instance.gamma0 + eta
    Y = instance.theta0 * T + X @ instance.beta0 + eps
    eta = eta.copy()
    eps = eps.copy()
    eta.flags.writeable = False
    eps.flags.writeable = False
    return Dataset(X=X, T=T, Y=Y, n=n, eta=eta, eps=eps)


# --- JSON persistence -------------------------------------------------------
#
# Documented schemas (all numbers are JSON numbers except exact rationals,
# which are strings "num/den" so discrete laws round-trip exactly):
#
# NoiseDistribution: {"kind", "support": [...], "probs": [...],
#                     "half_width", "std_dev"}  (unused fields null/absent)
# PLRInstance: {"theta0", "beta0": [...], "gamma0": [...], "q0": [...],
#               "support": [...], "eta_dist": {...}, "eps_dist": {...},
#               "p", "s"}
# Dataset: {"n", "X": [[...], ...], "T": [...], "Y": [...],
#           "eta": [...] | null, "eps": [...] | null}


def _num_to_json(v):
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return v


def _num_from_json(v):
    if isinstance(v, str):
        return Fraction(v)
    return v


def noise_to_json(dist: NoiseDistribution) -> dict:
    return {
        "kind": dist.kind,
        "support": [_num_to_json(v) for v in dist.support],
        "probs": [_num_to_json(v) for v in dist.probs],
        "half_width": _num_to_json(dist.half_width),
        "std_dev": _num_to_json(dist.std_dev),
    }


def noise_from_json(obj: dict) -> NoiseDistribution:
    return NoiseDistribution(
        kind=obj["kind"],
        support=tuple(_num_from_json(v) for v in obj.get("support", ())),
        probs=tuple(_num_from_json(v) for v in obj.get("probs", ())),
        half_width=_num_from_json(obj.get("half_width")),
        std_dev=_num_from_json(obj.get("std_dev")),
    )


def instance_to_json(instance: PLRInstance) -> dict:
    return {
        "theta0": instance.theta0,
        "beta0": instance.beta0.tolist(),
        "gamma0": instance.gamma0.tolist(),
        "q0": instance.q0.tolist(),
        "support": instance.support.tolist(),
        "eta_dist": noise_to_json(instance.eta_dist),
        "eps_dist": noise_to_json(instance.eps_dist),
        "p": instance.p,
        "s": instance.s,
    }


def instance_from_json(obj: dict) -> PLRInstance:
    return PLRInstance(
        theta0=obj["theta0"],
        beta0=np.array(obj["beta0"], dtype=float),
        gamma0=np.array(obj["gamma0"], dtype=float),
        q0=np.array(obj["q0"], dtype=float),
        support=np.array(obj["support"], dtype=np.intp),
        eta_dist=noise_from_json(obj["eta_dist"]),
        eps_dist=noise_from_json(obj["eps_dist"]),
        p=obj["p"],
        s=obj["s"],
    )


def dataset_to_json(dataset: Dataset) -> dict:
    return {
        "n": dataset.n,
        "X": dataset.X.tolist(),
        "T": dataset.T.tolist(),
        "Y": dataset.Y.tolist(),
        "eta": None if dataset.eta is None else dataset.eta.tolist(),
        "eps": None if dataset.eps is None else dataset.eps.tolist(),
    }


def dataset_from_json(obj: dict) -> Dataset:
    return Dataset(
        X=np.array(obj["X"], dtype=float),
        T=np.array(obj["T"], dtype=float),
        Y=np.array(obj["Y"], dtype=float),
        n=obj["n"],
        eta=None if obj.get("eta") is None else np.array(obj["eta"], dtype=float),
        eps=None if obj.get("eps") is None else np.array(obj["eps"], dtype=float),
    )


def save_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)
