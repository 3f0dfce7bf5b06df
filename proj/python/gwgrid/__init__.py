"""Grids of correlated generalized least-squares fits.

A thin wrapper over the native core: deterministic synthetic datasets, the
eigendecomposition-based solver and its out-of-core streaming grid engine,
the independent Cholesky verification oracle, and the tile-parameter tuner.

The heavy lifting happens in the compiled extension; every function accepts
and returns numpy arrays.  `solve_grid` stages operands through the same
binary stream files and schedulers the command-line tool uses, so its output
is byte-identical to a CLI run on the same data.
"""

from gwgrid._impl import (
    check_nb_overlap,
    eigendecompose,
    generate,
    min_tb,
    preloop_ratio,
    recommend,
    solve_cell,
    solve_cell_oracle,
    solve_grid,
    tile_ratio,
    verify_grid,
)

__all__ = [
    "check_nb_overlap",
    "eigendecompose",
    "generate",
    "min_tb",
    "preloop_ratio",
    "recommend",
    "solve_cell",
    "solve_cell_oracle",
    "solve_grid",
    "tile_ratio",
    "verify_grid",
]

__version__ = "0.1.0"
