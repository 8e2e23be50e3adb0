"""Shared fixtures: small rasters and a reduced synthetic bundle for end-to-end tests."""

import numpy as np
import pytest

from dfhazard.raster import Raster
from dfhazard.synthetic import write_bundle

# A 128x128 bundle needs a stronger storm than the shipped 512x512 one to
# yield a useful number of sources on its 13x13 coarse grid.
SMALL_BUNDLE_PEAK = 100.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def plane(nrows, ncols, dzdx=0.0, dzdy=0.0, cellsize=1.0, z0=100.0):
    """Raster of z = z0 + dzdx * x + dzdy * y sampled at cell centres (y grows northward)."""
    x = (np.arange(ncols) + 0.5) * cellsize
    y = (nrows - np.arange(nrows) - 0.5) * cellsize
    return Raster(z0 + dzdx * x[None, :] + dzdy * y[:, None], cellsize)


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    """128x128 bundle with an observed reference run of 30 s and two ensemble cases."""
    d = tmp_path_factory.mktemp("bundle")
    return write_bundle(d, n=128, peak=SMALL_BUNDLE_PEAK, duration=30.0, n_cases=2, observed_seed=1)
