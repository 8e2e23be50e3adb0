"""Rainfall-driven debris-flow hazard probability on raster grids.

The pipeline runs soil water index, source probability, source sampling,
debris-flow simulation, calibration and Monte Carlo aggregation.
"""

__version__ = "0.1.0"

from .errors import DomainError, NumericalBlowUpError, RankError, RasterFormatError, SeparationError  # noqa: E402
from .raster import Raster, read_ascii_grid, render_image, resample_nearest, write_ascii_grid  # noqa: E402

__all__ = [
    "DomainError",
    "NumericalBlowUpError",
    "RankError",
    "RasterFormatError",
    "SeparationError",
    "Raster",
    "read_ascii_grid",
    "render_image",
    "resample_nearest",
    "write_ascii_grid",
    "__version__",
]
