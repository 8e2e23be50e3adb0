"""Terrain derivatives used as susceptibility covariates.

Slope uses Horn's weighted 3x3 differences; curvatures come from the
Zevenbergen-Thorne quadratic fitted to the same window. Sign convention:
negative curvature is convex (divergent), positive is concave.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .raster import Raster

# D8 neighbour scan order E, SE, S, SW, W, NW, N, NE as (drow, dcol); row grows southward.
D8_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))


@dataclass(frozen=True)
class TerrainDerivatives:
    slope: Raster
    catchment_area: Raster
    curvature_plan: Raster
    curvature_tangential: Raster


def _windows(dem: Raster):
    """The nine shifted interior views z1..z9 (z1 = NW, z5 = centre, z9 = SE) and the interior validity mask."""
    if dem.nrows < 3 or dem.ncols < 3:
        raise DomainError(f"terrain derivatives need at least a 3x3 raster, got {dem.shape}")
    z = dem.values
    m = dem.nodata_mask
    win = []
    bad = np.zeros((dem.nrows - 2, dem.ncols - 2), dtype=bool)
    for dr in range(3):
        for dc in range(3):
            win.append(z[dr : dr + dem.nrows - 2, dc : dc + dem.ncols - 2])
            bad |= m[dr : dr + dem.nrows - 2, dc : dc + dem.ncols - 2]
    return win, bad


def _embed(dem: Raster, interior: np.ndarray, bad: np.ndarray) -> Raster:
    out = np.full(dem.shape, np.nan)
    inner = interior.copy()
    inner[bad] = np.nan
    out[1:-1, 1:-1] = inner
    return dem.with_values(out)


def slope_from_dem(dem: Raster) -> Raster:
    """Slope in degrees from Horn's 3x3 weighted differences. Border cells are nodata."""
    (a, b, c, d, _, f, g, h, i), bad = _windows(dem)
    L = dem.cellsize
    dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8 * L)
    dzdy = ((a + 2 * b + c) - (g + 2 * h + i)) / (8 * L)
    slope = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    return _embed(dem, slope, bad)


def _zt_coefficients(dem: Raster):
    (z1, z2, z3, z4, z5, z6, z7, z8, z9), bad = _windows(dem)
    L = dem.cellsize
    zxx = (z4 + z6 - 2 * z5) / L**2
    zyy = (z2 + z8 - 2 * z5) / L**2
    zxy = (z3 - z1 + z7 - z9) / (4 * L**2)
    zx = (z6 - z4) / (2 * L)
    zy = (z2 - z8) / (2 * L)
    return zx, zy, zxx, zyy, zxy, bad


def curvatures_from_dem(dem: Raster, profile: bool = False):
    """Plan and tangential curvature (1/m) from the Zevenbergen-Thorne fit.

    Returns ``(plan, tangential)``, or ``(plan, tangential, profile)`` when
    ``profile`` is true. Cells with zero gradient get zero curvature.
    """
    zx, zy, zxx, zyy, zxy, bad = _zt_coefficients(dem)
    p = zx**2 + zy**2
    flat = p == 0.0
    ps = np.where(flat, 1.0, p)
    contour = zxx * zy**2 - 2 * zxy * zx * zy + zyy * zx**2
    plan = np.where(flat, 0.0, contour / ps**1.5)
    tang = np.where(flat, 0.0, contour / (ps * np.sqrt(1 + ps)))
    out = (_embed(dem, plan, bad), _embed(dem, tang, bad))
    if profile:
        along = zxx * zx**2 + 2 * zxy * zx * zy + zyy * zy**2
        prof = np.where(flat, 0.0, along / (ps * (1 + ps) ** 1.5))
        out = out + (_embed(dem, prof, bad),)
    return out


def fill_depressions(dem: Raster) -> np.ndarray:
    """Priority-flood pit filling with epsilon increments on flats.

    Edge cells and cells next to nodata are the outlets. Returns the filled
    elevations as an array (nodata cells keep NaN).
    """
    z = dem.masked()
    nr, nc = z.shape
    filled = z.copy()
    seen = np.isnan(z)
    heap = []
    order = 0
    for r in range(nr):
        for c in range(nc):
            if seen[r, c]:
                continue
            outlet = r in (0, nr - 1) or c in (0, nc - 1)
            if not outlet:
                outlet = bool(np.isnan(z[r - 1 : r + 2, c - 1 : c + 2]).any())
            if outlet:
                heapq.heappush(heap, (filled[r, c], order, r, c))
                order += 1
                seen[r, c] = True
    while heap:
        elev, _, r, c = heapq.heappop(heap)
        for dr, dc in D8_OFFSETS:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < nr and 0 <= cc < nc) or seen[rr, cc]:
                continue
            seen[rr, cc] = True
            if filled[rr, cc] <= elev:
                filled[rr, cc] = np.nextafter(elev, np.inf)
            heapq.heappush(heap, (filled[rr, cc], order, rr, cc))
            order += 1
    return filled


def d8_receivers(filled: np.ndarray, cellsize: float) -> np.ndarray:
    """Flat index of each cell's steepest-descent receiver, or -1 for outlets and nodata."""
    nr, nc = filled.shape
    best = np.zeros(filled.shape)
    recv = np.full(filled.shape, -1, dtype=np.int64)
    rows, cols = np.indices(filled.shape)
    pad = np.pad(filled, 1, constant_values=np.nan)
    for dr, dc in D8_OFFSETS:
        nb = pad[1 + dr : 1 + dr + nr, 1 + dc : 1 + dc + nc]
        dist = cellsize * (np.sqrt(2.0) if dr and dc else 1.0)
        drop = (filled - nb) / dist
        # strict '>' keeps the first neighbour in scan order on ties
        take = np.nan_to_num(drop, nan=0.0) > best
        best = np.where(take, drop, best)
        recv = np.where(take, (rows + dr) * nc + (cols + dc), recv)
    recv[np.isnan(filled)] = -1
    return recv


def flow_accumulation(dem: Raster) -> Raster:
    """Contributing area (m^2) under D8 routing on the pit-filled DEM.

    Every valid cell counts itself, so the minimum is ``cellsize**2``.
    """
    filled = fill_depressions(dem)
    recv = d8_receivers(filled, dem.cellsize).ravel()
    flat = filled.ravel()
    valid = ~np.isnan(flat)
    count = valid.astype(np.float64)
    idx = np.flatnonzero(valid)
    # receivers are strictly lower, so descending elevation is a topological order
    for k in idx[np.argsort(-flat[idx], kind="stable")]:
        r = recv[k]
        if r >= 0:
            count[r] += count[k]
    area = count.reshape(dem.shape) * dem.cellsize**2
    return dem.with_values(np.where(valid.reshape(dem.shape), area, np.nan))


def outlet_mask(dem: Raster) -> np.ndarray:
    """True at valid cells whose flow leaves the grid (no receiver)."""
    recv = d8_receivers(fill_depressions(dem), dem.cellsize)
    return (recv < 0) & ~dem.nodata_mask


def terrain_derivatives(dem: Raster) -> TerrainDerivatives:
    plan, tang = curvatures_from_dem(dem)
    return TerrainDerivatives(
        slope=slope_from_dem(dem),
        catchment_area=flow_accumulation(dem),
        curvature_plan=plan,
        curvature_tangential=tang,
    )
