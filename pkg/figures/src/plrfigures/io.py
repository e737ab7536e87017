"""Schema-checked loading of the experiment CSV tables.

Two inputs exist: the cell table (one row per method x sparsity x instance,
columns bias/sd/mse/coverage/...) and the per-rep samples sidecar
(one row per estimate, column theta_hat).  Loading validates the columns a
figure needs and raises SchemaError naming whatever is missing.
"""

from __future__ import annotations

import pandas as pd

CELL_REQUIRED = [
    "method", "n", "p", "s", "sigma_eps", "instance_id",
    "bias", "sd", "mse", "coverage_95", "mean_theta",
    "nuisance_l2_q", "nuisance_l2_gamma", "theta0",
]

SAMPLE_REQUIRED = ["method", "s", "instance_id", "rep", "theta_hat", "theta0"]


class SchemaError(ValueError):
    """Input file does not match the experiment output schema."""


def _check_columns(df: pd.DataFrame, required: list, path: str) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")


def load_cells(path: str) -> pd.DataFrame:
    df = pd.read_csv(path)
    _check_columns(df, CELL_REQUIRED, path)
    return df


def load_samples(path: str) -> pd.DataFrame:
    df = pd.read_csv(path)
    _check_columns(df, SAMPLE_REQUIRED, path)
    return df
