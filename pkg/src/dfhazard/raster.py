"""Georeferenced raster container, ESRI ASCII grid I/O, resampling and PPM rendering.

Rasters are stored row-major with the north row first, matching the body
order of an ESRI ASCII grid file.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RasterFormatError

DEFAULT_NODATA = -9999.0

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable 2-D grid of float64 scalars.

    Parameters
    ----------
    values : array_like, shape (nrows, ncols)
        Cell values, north row first. Cells equal to ``nodata`` are missing.
    cellsize : float
        Square cell edge length in metres.
    xll, yll : float
        Lower-left corner of the grid.
    nodata : float
        Sentinel marking missing cells.
    """

    values: np.ndarray
    cellsize: float = 1.0
    xll: float = 0.0
    yll: float = 0.0
    nodata: float = DEFAULT_NODATA
    _mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2:
            raise DomainError(f"raster values must be 2-D, got shape {vals.shape}")
        if not (self.cellsize > 0 and math.isfinite(self.cellsize)):
            raise DomainError(f"cellsize must be positive, got {self.cellsize}")
        if not math.isfinite(self.nodata):
            raise DomainError("nodata sentinel must be finite")
        mask = vals == self.nodata
        if not np.all(np.isfinite(vals[~mask])):
            raise DomainError("non-nodata raster values must be finite")
        vals.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "cellsize", float(self.cellsize))
        object.__setattr__(self, "xll", float(self.xll))
        object.__setattr__(self, "yll", float(self.yll))
        object.__setattr__(self, "nodata", float(self.nodata))
        object.__setattr__(self, "_mask", mask)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def nodata_mask(self) -> np.ndarray:
        """Boolean array, True where the cell is nodata."""
        return self._mask

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        return (
            self.xll,
            self.yll,
            self.xll + self.ncols * self.cellsize,
            self.yll + self.nrows * self.cellsize,
        )

    def masked(self) -> np.ndarray:
        """Copy of the values with nodata replaced by NaN."""
        out = self.values.copy()
        out[self._mask] = np.nan
        return out

    def with_values(self, values, nodata_mask=None) -> "Raster":
        """New raster on the same grid. NaN (and ``nodata_mask``) cells become nodata."""
        vals = np.array(values, dtype=np.float64, copy=True)
        if vals.shape != self.shape:
            raise DomainError(f"shape {vals.shape} does not match grid {self.shape}")
        bad = ~np.isfinite(vals)
        if nodata_mask is not None:
            bad |= nodata_mask
        vals[bad] = self.nodata
        return Raster(vals, self.cellsize, self.xll, self.yll, self.nodata)

    def same_grid(self, other: "Raster") -> bool:
        return (
            self.shape == other.shape
            and self.cellsize == other.cellsize
            and self.xll == other.xll
            and self.yll == other.yll
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        x = self.xll + (col + 0.5) * self.cellsize
        y = self.yll + (self.nrows - row - 0.5) * self.cellsize
        return x, y

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.same_grid(other)
            and self.nodata == other.nodata
            and np.array_equal(self._mask, other._mask)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def require_same_grid(*rasters: Raster) -> None:
    first = rasters[0]
    for r in rasters[1:]:
        if not first.same_grid(r):
            raise DomainError(
                f"raster geometry mismatch: {first.shape}@{first.cellsize} "
                f"({first.xll}, {first.yll}) vs {r.shape}@{r.cellsize} ({r.xll}, {r.yll})"
            )


def _parse_number(token, lineno):
    try:
        return float(token)
    except ValueError:
        raise RasterFormatError(f"non-numeric token {token!r}", lineno) from None


def _is_number(token) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_ascii_grid(path) -> Raster:
    """Read an ESRI ASCII grid (.asc) file.

    The six header keys are matched case-insensitively; ``xllcenter`` /
    ``yllcenter`` are accepted and converted to corner coordinates.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    header = {}
    lineno = 0
    while lineno < len(lines) and len(header) < 6:
        text = lines[lineno].strip()
        lineno += 1
        if not text:
            continue
        parts = text.split()
        key = parts[0].lower()
        if key not in header and _is_number(parts[0]):
            lineno -= 1  # body reached before the header was complete
            break
        if key in ("xllcenter", "yllcenter", *_HEADER_KEYS):
            if len(parts) != 2:
                raise RasterFormatError(f"header entry {parts[0]!r} must have one value", lineno)
            if key in header:
                raise RasterFormatError(f"duplicate header key {parts[0]!r}", lineno)
            header[key] = _parse_number(parts[1], lineno)
        else:
            raise RasterFormatError(f"unexpected header key {parts[0]!r}", lineno)

    centered = "xllcenter" in header or "yllcenter" in header
    needed = set(_HEADER_KEYS)
    if centered:
        needed -= {"xllcorner", "yllcorner"}
        needed |= {"xllcenter", "yllcenter"}
    missing = needed - header.keys()
    if missing:
        raise RasterFormatError(f"missing header keys: {', '.join(sorted(missing))}", lineno)

    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise RasterFormatError("ncols and nrows must be positive integers", lineno)
    ncols, nrows = int(ncols), int(nrows)
    cellsize = header["cellsize"]
    if cellsize <= 0:
        raise RasterFormatError("cellsize must be positive", lineno)
    if centered:
        xll = header["xllcenter"] - cellsize / 2
        yll = header["yllcenter"] - cellsize / 2
    else:
        xll, yll = header["xllcorner"], header["yllcorner"]
    nodata = header["nodata_value"]

    values = np.empty(nrows * ncols, dtype=np.float64)
    n = 0
    expected = nrows * ncols
    for idx in range(lineno, len(lines)):
        tokens = lines[idx].split()
        if not tokens:
            continue
        if n + len(tokens) > expected:
            raise RasterFormatError(
                f"too many values: expected {expected} for a {nrows}x{ncols} grid", idx + 1
            )
        for tok in tokens:
            v = _parse_number(tok, idx + 1)
            if not math.isfinite(v):
                raise RasterFormatError(f"non-finite value {tok!r}", idx + 1)
            values[n] = v
            n += 1
    if n != expected:
        raise RasterFormatError(
            f"found {n} values, expected {expected} for a {nrows}x{ncols} grid", len(lines)
        )
    return Raster(values.reshape(nrows, ncols), cellsize, xll, yll, nodata)


def _fmt(v: float) -> str:
    # repr is the shortest string that round-trips exactly
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_ascii_grid(raster: Raster, path) -> None:
    """Write ``raster`` as an ESRI ASCII grid with exact round-trip formatting."""
    head = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {_fmt(raster.xll)}",
        f"yllcorner {_fmt(raster.yll)}",
        f"cellsize {_fmt(raster.cellsize)}",
        f"NODATA_value {_fmt(raster.nodata)}",
    ]
    body = [" ".join(_fmt(v) for v in row.tolist()) for row in raster.values]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(head + body))
        fh.write("\n")
    os.replace(tmp, path)


def resample_nearest(src: Raster, target_cellsize: float, target_extent) -> Raster:
    """Nearest-neighbour resample onto a new grid.

    Each output cell takes the value of the source cell containing its centre.

    Parameters
    ----------
    target_extent : tuple
        (xmin, ymin, xmax, ymax) of the output grid; must lie inside ``src``.
    """
    if not target_cellsize > 0:
        raise DomainError("target_cellsize must be positive")
    xmin, ymin, xmax, ymax = map(float, target_extent)
    sx0, sy0, sx1, sy1 = src.extent
    tol = 1e-9 * max(src.cellsize, target_cellsize)
    if xmin < sx0 - tol or ymin < sy0 - tol or xmax > sx1 + tol or ymax > sy1 + tol:
        raise DomainError(f"target extent {target_extent} not within source extent {src.extent}")
    if xmax <= xmin or ymax <= ymin:
        raise DomainError("target extent is empty")

    ncols = int(round((xmax - xmin) / target_cellsize))
    nrows = int(round((ymax - ymin) / target_cellsize))
    if ncols < 1 or nrows < 1:
        raise DomainError("target extent smaller than one target cell")

    xc = xmin + (np.arange(ncols) + 0.5) * target_cellsize
    yc = ymax - (np.arange(nrows) + 0.5) * target_cellsize
    cols = np.floor((xc - sx0) / src.cellsize).astype(np.int64)
    rows = np.floor((sy1 - yc) / src.cellsize).astype(np.int64)
    np.clip(cols, 0, src.ncols - 1, out=cols)
    np.clip(rows, 0, src.nrows - 1, out=rows)
    out = src.values[np.ix_(rows, cols)]
    return Raster(out, target_cellsize, xmin, ymax - nrows * target_cellsize, src.nodata)


# Colour ramps as (position, (r, g, b)) stops on [0, 1].
RAMPS = {
    "gray": [(0.0, (0, 0, 0)), (1.0, (255, 255, 255))],
    "diverging": [(0.0, (33, 102, 172)), (0.5, (255, 255, 255)), (1.0, (178, 24, 43))],
    "heat": [(0.0, (255, 255, 204)), (0.5, (253, 141, 60)), (1.0, (128, 0, 38))],
    "terrain": [
        (0.0, (26, 150, 65)),
        (0.35, (166, 217, 106)),
        (0.65, (253, 174, 97)),
        (1.0, (120, 80, 40)),
    ],
}
NODATA_COLOR = (255, 0, 255)


def apply_ramp(values: np.ndarray, ramp: str, lo: float, hi: float) -> np.ndarray:
    """Map ``values`` (NaN = nodata) to an (..., 3) uint8 RGB array."""
    if ramp not in RAMPS:
        raise DomainError(f"unknown colour ramp {ramp!r}; choose from {', '.join(sorted(RAMPS))}")
    if not lo < hi:
        raise DomainError(f"render range requires lo < hi, got ({lo}, {hi})")
    stops = RAMPS[ramp]
    pos = np.array([s[0] for s in stops])
    cols = np.array([s[1] for s in stops], dtype=np.float64)
    nan = np.isnan(values)
    t = (np.clip(np.where(nan, lo, values), lo, hi) - lo) / (hi - lo)
    rgb = np.stack([np.interp(t, pos, cols[:, k]) for k in range(3)], axis=-1)
    rgb = np.rint(rgb).astype(np.uint8)
    rgb[nan] = NODATA_COLOR
    return rgb


def render_image(raster: Raster, ramp: str, value_range, path) -> None:
    """Write a binary PPM (P6) with one pixel per cell."""
    lo, hi = value_range
    rgb = apply_ramp(raster.masked(), ramp, float(lo), float(hi))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{raster.ncols} {raster.nrows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM written by :func:`render_image` into an (nrows, ncols, 3) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise RasterFormatError("not a binary PPM", 1)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
