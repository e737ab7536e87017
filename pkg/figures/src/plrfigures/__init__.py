"""Figure generation for orthoplr Monte Carlo experiment output."""

from .io import SchemaError, load_cells, load_samples
from .plots import (
    FIGURE_KINDS,
    plot_histogram,
    plot_mse_grid,
    plot_nuisance_error,
    plot_sparsity_panels,
)

__version__ = "0.1.0"
