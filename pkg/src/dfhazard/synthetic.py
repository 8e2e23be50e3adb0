"""Procedural test catchment: a concave V-shaped valley draining south onto a fan.

Everything here is deterministic so the bundled data can be regenerated
bit-for-bit with :func:`write_bundle`.
"""

from __future__ import annotations

import os

import numpy as np

from .material import MaterialParams
from .raster import Raster, resample_nearest, write_ascii_grid
from .solver import SourceForcing, run
from .source_model import predict_probability, sample_sources, write_realization
from .swi import max_swi_raster
from .terrain import terrain_derivatives

FINE_SIZE = 512
COARSE_CELL = 10.0
RADAR_CELL = 250.0


def valley_dem(n: int = FINE_SIZE, cellsize: float = 1.0, seed: int = 7, roughness: float = 0.05) -> Raster:
    """Fine-resolution DEM (north row first) of a valley opening onto a fan.

    The channel profile is concave (about 37 deg at the head, 3 deg at the
    outlet). Side slopes are about 27 deg upstream and give way to a gently
    convex fan over the last fifth of the domain.
    """
    L = n * cellsize
    s = (np.arange(n) + 0.5) * cellsize              # distance downstream of the north edge
    x = (np.arange(n) + 0.5) * cellsize - L / 2       # lateral offset from the axis
    S, X = np.meshgrid(s, x, indexing="ij")
    scale = L / 512.0
    channel = 20.0 * scale + 150.0 * scale * np.exp(-S / (200.0 * scale))
    fan_start, fan_end = 0.68 * L, 0.82 * L
    w = np.clip((S - fan_start) / (fan_end - fan_start), 0.0, 1.0)
    w = w * w * (3 - 2 * w)
    lateral = (1 - w) * 0.5 - w * 0.02
    z = channel + lateral * np.abs(X)
    if roughness > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        noise = rng.standard_normal((n, n))
        k = np.ones(5) / 5.0
        for axis in (0, 1):
            noise = np.apply_along_axis(lambda v: np.convolve(v, k, mode="same"), axis, noise)
        z = z + roughness * noise
    return Raster(np.round(z, 4), cellsize, 0.0, 0.0)


def coarsen(dem: Raster, factor: int) -> Raster:
    """Block-mean aggregation anchored at the north-west corner; ragged edges are dropped."""
    nr, nc = dem.nrows // factor, dem.ncols // factor
    blocks = dem.values[: nr * factor, : nc * factor].reshape(nr, factor, nc, factor)
    vals = blocks.mean(axis=(1, 3))
    top = dem.yll + dem.nrows * dem.cellsize
    cs = dem.cellsize * factor
    return Raster(vals, cs, dem.xll, top - nr * cs, dem.nodata)


def storm_stack(coarse: Raster, hours: int = 24, peak: float = 75.0, seed: int = 11):
    """Hourly rain-intensity rasters (mm/h) on a radar grid covering ``coarse``.

    A single-peaked storm centred at hour 16 whose intensity grows toward
    the north-east.
    """
    x0, y0, x1, y1 = coarse.extent
    ncols = int(np.ceil((x1 - x0) / RADAR_CELL)) + 1
    nrows = int(np.ceil((y1 - y0) / RADAR_CELL)) + 1
    xll = x0 - (ncols * RADAR_CELL - (x1 - x0)) / 2
    yll = y0 - (nrows * RADAR_CELL - (y1 - y0)) / 2
    jj, ii = np.meshgrid(np.arange(ncols), np.arange(nrows))
    spatial = 0.85 + 0.15 * (jj / max(ncols - 1, 1)) + 0.1 * (1 - ii / max(nrows - 1, 1))
    rng = np.random.Generator(np.random.Philox(seed))
    frames = []
    for hr in range(hours):
        base = peak * np.exp(-0.5 * ((hr - 16) / 3.0) ** 2) + 4.0
        jitter = 1.0 + 0.1 * rng.standard_normal((nrows, ncols))
        frames.append(Raster(np.round(np.maximum(base * spatial * jitter, 0.0), 2), RADAR_CELL, xll, yll))
    return frames


CONFIG_TEMPLATE = """\
# Bundled synthetic catchment. Paths are relative to this file.
[paths]
dem_fine = dem_fine.asc
dem_coarse = dem_coarse.asc
rain_stack = rain/rain_*.asc
rain_interval_min = 60
rain_csv = rain_series.csv
{extra_paths}
[model]
source = reference

[material]
d_m = 0.02
D_e = 1
phi = 25
r_c = 0.1
Q_add = 0.1
T_add = 100

[simulation]
duration = {duration!r}

[ensemble]
n_cases = {n_cases}
base_seed = 1000
epsilon = 0.05

[sweep]
grid = table3

[output]
directory = out
"""


def write_bundle(directory, n: int = FINE_SIZE, peak: float = 75.0, duration: float = 3600.0,
                 n_cases: int = 10, observed_seed: int | None = None) -> dict:
    """Write the fine DEM, its 10-m coarsening, the rain stack, a rain CSV and ``config.ini``.

    With ``observed_seed`` the bundle also gets a source realization drawn
    with that seed and the bed change it produces at the default material
    set, stored as ``realization.csv`` and ``observed_dz.asc`` so that the
    calibrate and evaluate commands have a reference to score against.
    """
    os.makedirs(directory, exist_ok=True)
    rain_dir = os.path.join(directory, "rain")
    os.makedirs(rain_dir, exist_ok=True)
    fine = valley_dem(n)
    coarse = coarsen(fine, int(COARSE_CELL / fine.cellsize))
    paths = {"dem_fine": os.path.join(directory, "dem_fine.asc"),
             "dem_coarse": os.path.join(directory, "dem_coarse.asc")}
    write_ascii_grid(fine, paths["dem_fine"])
    write_ascii_grid(coarse, paths["dem_coarse"])
    frames = storm_stack(coarse, peak=peak)
    stack = []
    for k, fr in enumerate(frames):
        p = os.path.join(rain_dir, f"rain_{k:02d}.asc")
        write_ascii_grid(fr, p)
        stack.append(os.path.relpath(p, directory))
    csv_path = os.path.join(directory, "rain_series.csv")
    with open(csv_path, "w") as fh:
        fh.write("duration_h,intensity_mm_per_h\n")
        for fr in frames:
            fh.write(f"1,{float(np.mean(fr.values))!r}\n")
    paths["rain_csv"] = csv_path
    paths["rain_stack"] = stack

    extra = ""
    if observed_seed is not None:
        swi = resample_nearest(max_swi_raster(frames, 1.0), coarse.cellsize, coarse.extent)
        prob = predict_probability(swi, terrain_derivatives(coarse))
        real = sample_sources(prob, observed_seed)
        paths["realization"] = os.path.join(directory, "realization.csv")
        write_realization(real, coarse, paths["realization"])
        res = run(fine, SourceForcing.from_realization(real, coarse, fine), MaterialParams(), duration)
        paths["observed_dz"] = os.path.join(directory, "observed_dz.asc")
        write_ascii_grid(res.delta_z, paths["observed_dz"])
        extra = "realization = realization.csv\nobserved_dz = observed_dz.asc\n"
    paths["config"] = os.path.join(directory, "config.ini")
    with open(paths["config"], "w") as fh:
        fh.write(CONFIG_TEMPLATE.format(extra_paths=extra, duration=float(duration), n_cases=int(n_cases)))
    return paths
