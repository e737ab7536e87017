"""Monte Carlo experiment runner.

A run draws problem instances (coefficient redraws), then for each instance
generates independent datasets and estimates the treatment effect with every
configured method via cross-fitting, recording bias / sd / MSE / CI coverage
per (method, sparsity, instance) cell.

Reproducibility: every random stream is derived from the experiment seed and
integer keys via rng.derive_rng; datasets are shared across methods within a
rep (paired comparisons), while fold shuffles get method-specific streams.
Results are therefore identical regardless of the number of worker processes.

Stream keys: (seed, 1, s, instance) -> instance coefficients,
(seed, 2, s, instance, rep) -> dataset, (seed, 3, s, instance, rep, method)
-> fold shuffle.

Failed reps (degenerate Jacobian, Lasso non-convergence) are excluded and
counted; a cell whose exclusion rate reaches 1% is flagged and logged.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .dgp import NoiseDistribution, default_discrete_eta, generate_dataset, generate_instance
from .estimator import (
    FIRST_ORDER_METHOD,
    SECOND_ORDER_METHOD,
    DegenerateJacobianError,
    EstimatorConfig,
    cross_fit_estimate,
    estimator_config_from_json,
    estimator_config_to_json,
)
from .rng import derive_rng

logger = logging.getLogger(__name__)

STREAM_INSTANCE = 1
STREAM_DATASET = 2
STREAM_FOLDS = 3

#: a cell whose excluded-rep fraction reaches this is flagged
EXCLUSION_FLAG_RATE = 0.01

CELL_COLUMNS = [
    "method", "n", "p", "s", "sigma_eps", "instance_id",
    "bias", "sd", "mse", "coverage_95", "mean_theta", "j_hat",
    "nuisance_l2_q", "nuisance_l2_gamma", "mu2_err", "mu3_err",
    "theta0", "n_reps_used", "n_excluded", "flagged",
]

SAMPLE_COLUMNS = [
    "method", "n", "p", "s", "sigma_eps", "instance_id", "rep",
    "theta_hat", "se_hat", "covered_95", "theta0", "moment_resid",
]


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 2000
    p: int = 200
    sparsity_grid: tuple = (0, 20, 40, 80)
    sigma_eps: float = 1.0
    theta0: float = 3.0
    n_instances: int = 10
    n_reps: int = 100
    methods: tuple = (
        EstimatorConfig(method=FIRST_ORDER_METHOD),
        EstimatorConfig(method=SECOND_ORDER_METHOD, r=3),
    )
    seed: int = 0
    output_path: Optional[str] = None
    scale_preset: str = "desk"
    store_samples: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.n < 4 or self.p < 1:
            raise ValueError("need n >= 4 and p >= 1")
        if len(self.sparsity_grid) == 0:
            raise ValueError("sparsity grid must be nonempty")
        if any(not 0 <= s <= self.p for s in self.sparsity_grid):
            raise ValueError("every sparsity must satisfy 0 <= s <= p")
        if self.sigma_eps <= 0:
            raise ValueError("sigma_eps must be positive")
        if self.n_instances < 1 or self.n_reps < 1:
            raise ValueError("n_instances and n_reps must be positive")
        if len(self.methods) == 0:
            raise ValueError("at least one method is required")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def desk_preset(seed: int = 0) -> ExperimentConfig:
    """Laptop-scale defaults preserving the dense-nuisance regime."""
    return ExperimentConfig(seed=seed)


def paper_preset(seed: int = 0) -> ExperimentConfig:
    """Full-scale defaults: n=5000, p=1000, s=100, 100 instances x 2000 reps."""
    return ExperimentConfig(
        n=5000,
        p=1000,
        sparsity_grid=(100,),
        n_instances=100,
        n_reps=2000,
        seed=seed,
        scale_preset="paper",
    )


PRESETS = {"desk": desk_preset, "paper": paper_preset}


@dataclass(frozen=True)
class CellResult:
    method: str
    n: int
    p: int
    s: int
    sigma_eps: float
    instance_id: int
    bias: float
    sd: float
    mse: float
    coverage_95: float
    mean_theta: float
    j_hat: float
    nuisance_l2_q: float
    nuisance_l2_gamma: float
    mu2_err: float
    mu3_err: float
    theta0: float
    n_reps_used: int
    n_excluded: int
    flagged: bool


@dataclass(frozen=True)
class RepRecord:
    method: str
    n: int
    p: int
    s: int
    sigma_eps: float
    instance_id: int
    rep: int
    theta_hat: float
    se_hat: float
    covered_95: bool
    theta0: float
    moment_resid: float


@dataclass
class MCResults:
    config: ExperimentConfig
    cells: list = field(default_factory=list)
    samples: Optional[list] = None


def _diag_mean(reports, key: str) -> float:
    vals = []
    for rep in reports:
        fold_vals = [d[key] for d in rep.nuisance_diag["folds"] if key in d]
        if fold_vals:
            vals.append(float(np.mean(fold_vals)))
    return float(np.mean(vals)) if vals else math.nan


def _aggregate_cell(cfg, s, instance_id, method_label, reports, covered, n_excluded):
    theta0 = cfg.theta0
    thetas = np.array([r.theta_hat for r in reports])
    used = len(thetas)
    mean_theta = float(thetas.mean())
    bias = mean_theta - theta0
    sd = float(thetas.std(ddof=0))
    mse = float(np.mean((thetas - theta0) ** 2))
    if abs(mse - (bias * bias + sd * sd)) > 1e-9 * max(1.0, mse):
        raise AssertionError("mse != bias^2 + sd^2 beyond accumulation tolerance")
    flagged = n_excluded >= EXCLUSION_FLAG_RATE * cfg.n_reps
    if flagged:
        logger.warning(
            "cell (%s, s=%d, instance=%d): %d of %d reps excluded",
            method_label, s, instance_id, n_excluded, cfg.n_reps,
        )
    return CellResult(
        method=method_label,
        n=cfg.n,
        p=cfg.p,
        s=s,
        sigma_eps=cfg.sigma_eps,
        instance_id=instance_id,
        bias=bias,
        sd=sd,
        mse=mse,
        coverage_95=float(np.mean(covered)),
        mean_theta=mean_theta,
        j_hat=float(np.mean([r.J_hat for r in reports])),
        nuisance_l2_q=_diag_mean(reports, "l2_q"),
        nuisance_l2_gamma=_diag_mean(reports, "l2_gamma"),
        mu2_err=_diag_mean(reports, "mu2_err"),
        mu3_err=_diag_mean(reports, "mu3_err"),
        theta0=theta0,
        n_reps_used=used,
        n_excluded=n_excluded,
        flagged=flagged,
    )


def _lasso_converged(report) -> bool:
    return all(
        d.get("lasso_converged_q", True) and d.get("lasso_converged_gamma", True)
        for d in report.nuisance_diag["folds"]
    )


def _run_cell(cfg: ExperimentConfig, s: int, instance_id: int):
    """All reps for one (sparsity, instance) cell, every method on shared data."""
    instance = generate_instance(
        p=cfg.p,
        s=s,
        theta0=cfg.theta0,
        eta_dist=default_discrete_eta(),
        eps_dist=NoiseDistribution.uniform(cfg.sigma_eps),
        rng=derive_rng(cfg.seed, STREAM_INSTANCE, s, instance_id),
    )
    per_method = {m: {"reports": [], "covered": [], "excluded": 0} for m in range(len(cfg.methods))}
    samples = []
    for rep in range(cfg.n_reps):
        dataset = generate_dataset(
            instance, cfg.n, derive_rng(cfg.seed, STREAM_DATASET, s, instance_id, rep)
        )
        for m_idx, mcfg in enumerate(cfg.methods):
            fold_rng = derive_rng(cfg.seed, STREAM_FOLDS, s, instance_id, rep, m_idx)
            slot = per_method[m_idx]
            try:
                report = cross_fit_estimate(dataset, instance, mcfg, rng=fold_rng)
            except DegenerateJacobianError:
                slot["excluded"] += 1
                continue
            if not _lasso_converged(report):
                slot["excluded"] += 1
                continue
            covered = report.ci_95[0] <= cfg.theta0 <= report.ci_95[1]
            slot["reports"].append(report)
            slot["covered"].append(covered)
            if cfg.store_samples:
                samples.append(
                    RepRecord(
                        method=mcfg.label,
                        n=cfg.n,
                        p=cfg.p,
                        s=s,
                        sigma_eps=cfg.sigma_eps,
                        instance_id=instance_id,
                        rep=rep,
                        theta_hat=report.theta_hat,
                        se_hat=report.se_hat,
                        covered_95=covered,
                        theta0=cfg.theta0,
                        moment_resid=report.moment_sum_residual,
                    )
                )
    cells = []
    for m_idx, mcfg in enumerate(cfg.methods):
        slot = per_method[m_idx]
        if not slot["reports"]:
            logger.warning(
                "cell (%s, s=%d, instance=%d): every rep excluded", mcfg.label, s, instance_id
            )
            continue
        cells.append(
            _aggregate_cell(
                cfg, s, instance_id, mcfg.label, slot["reports"], slot["covered"], slot["excluded"]
            )
        )
    return cells, samples


def run_monte_carlo(cfg: ExperimentConfig) -> MCResults:
    """Execute the full (sparsity x instance) grid; reproducible from seed."""
    tasks = [(s, inst) for s in cfg.sparsity_grid for inst in range(cfg.n_instances)]
    outcomes = []
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(_run_cell_star, [(cfg, s, i) for s, i in tasks]))
    else:
        outcomes = [_run_cell(cfg, s, i) for s, i in tasks]
    results = MCResults(config=cfg, cells=[], samples=[] if cfg.store_samples else None)
    for cells, samples in outcomes:
        results.cells.extend(cells)
        if cfg.store_samples:
            results.samples.extend(samples)
    return results


def _run_cell_star(args):
    return _run_cell(*args)


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence) -> list:
    """One run_monte_carlo per grid point, same seed (paired instance draws).

    axis: 'sparsity' (values are s), 'sigma_eps' (values are noise widths) or
    'n_p_pairs' (values are (n, p) tuples).
    """
    if len(values) == 0:
        raise ValueError("sweep grid must be nonempty")
    out = []
    for v in values:
        if axis == "sparsity":
            sub = replace(cfg, sparsity_grid=(int(v),))
        elif axis == "sigma_eps":
            sub = replace(cfg, sigma_eps=float(v))
        elif axis == "n_p_pairs":
            n, p = v
            sub = replace(cfg, n=int(n), p=int(p))
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        out.append(run_monte_carlo(sub))
    return out


def concat_results(results: Sequence[MCResults]) -> MCResults:
    """Pool the cells (and samples) of several runs under the first config."""
    merged = MCResults(config=results[0].config, cells=[], samples=None)
    if any(r.samples is not None for r in results):
        merged.samples = []
    for r in results:
        merged.cells.extend(r.cells)
        if merged.samples is not None and r.samples is not None:
            merged.samples.extend(r.samples)
    return merged


# --- persistence -------------------------------------------------------------


def config_to_json(cfg: ExperimentConfig) -> dict:
    obj = {
        "n": cfg.n,
        "p": cfg.p,
        "sparsity_grid": list(cfg.sparsity_grid),
        "sigma_eps": cfg.sigma_eps,
        "theta0": cfg.theta0,
        "n_instances": cfg.n_instances,
        "n_reps": cfg.n_reps,
        "methods": [estimator_config_to_json(m) for m in cfg.methods],
        "seed": cfg.seed,
        "output_path": cfg.output_path,
        "scale_preset": cfg.scale_preset,
        "store_samples": cfg.store_samples,
        "threads": cfg.threads,
    }
    return obj


def config_from_json(obj: dict) -> ExperimentConfig:
    obj = dict(obj)
    obj["sparsity_grid"] = tuple(obj.get("sparsity_grid", ()))
    obj["methods"] = tuple(estimator_config_from_json(m) for m in obj.get("methods", ()))
    return ExperimentConfig(**obj)


def _cell_row(cell: CellResult) -> dict:
    return {c: getattr(cell, c) for c in CELL_COLUMNS}


def _sample_row(rec: RepRecord) -> dict:
    return {c: getattr(rec, c) for c in SAMPLE_COLUMNS}


def _fmt(value):
    if isinstance(value, float) and math.isnan(value):
        return ""
    if isinstance(value, bool):
        return str(int(value))
    return repr(value) if isinstance(value, float) else value


def _write_csv(path: str, columns: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def samples_path_for(path: str) -> str:
    stem, dot, ext = path.rpartition(".")
    return f"{stem}_samples.{ext}" if dot else f"{path}_samples"


def _json_safe(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def results_to_json(results: MCResults) -> dict:
    # threads and output_path steer execution, not the experiment identity;
    # dropping them keeps results byte-identical across worker counts
    config = config_to_json(results.config)
    config.pop("threads", None)
    config.pop("output_path", None)
    return {
        "schema_version": 1,
        "config": config,
        "cells": [
            {k: _json_safe(v) for k, v in _cell_row(c).items()} for c in results.cells
        ],
        "samples": None
        if results.samples is None
        else [_sample_row(r) for r in results.samples],
    }


def write_results(results: MCResults, path: str, format: str = "csv") -> None:
    """Persist results.  CSV writes the cell table (plus a *_samples.csv
    sidecar when per-rep samples were stored); JSON writes one document
    validating against the shipped schema (see results_schema())."""
    try:
        if format == "csv":
            _write_csv(path, CELL_COLUMNS, [_cell_row(c) for c in results.cells])
            if results.samples is not None:
                _write_csv(
                    samples_path_for(path),
                    SAMPLE_COLUMNS,
                    [_sample_row(r) for r in results.samples],
                )
        elif format == "json":
            with open(path, "w") as fh:
                json.dump(results_to_json(results), fh, indent=1, allow_nan=False)
        else:
            raise ValueError(f"unknown format {format!r}")
    except OSError as exc:
        raise OSError(f"failed to write results to {path!r}: {exc}") from exc


_NUMERIC_CELL_FIELDS = {
    "n": int, "p": int, "s": int, "instance_id": int,
    "n_reps_used": int, "n_excluded": int, "flagged": lambda v: bool(int(v)),
    "sigma_eps": float, "bias": float, "sd": float, "mse": float,
    "coverage_95": float, "mean_theta": float, "j_hat": float,
    "nuisance_l2_q": float, "nuisance_l2_gamma": float,
    "mu2_err": float, "mu3_err": float, "theta0": float,
}


def read_cells_csv(path: str) -> list:
    """Parse a cell CSV back into dicts, '' -> NaN for numeric fields."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for key, value in row.items():
                conv = _NUMERIC_CELL_FIELDS.get(key)
                if conv is None:
                    parsed[key] = value
                elif value == "":
                    parsed[key] = math.nan
                else:
                    parsed[key] = conv(value)
            out.append(parsed)
    return out


def results_schema() -> dict:
    """The shipped JSON schema for write_results(..., format='json')."""
    with resources.files("orthoplr").joinpath("schemas/mc_results.schema.json").open() as fh:
        return json.load(fh)
