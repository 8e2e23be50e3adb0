"""Monte Carlo over source realizations and per-cell summary statistics."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .material import MaterialParams
from .raster import Raster, require_same_grid
from .solver import CaseResult, Ledger, SourceForcing, run
from .source_model import sample_sources

STD_FLOOR = 1e-12
ROW_BLOCK = 64


def _case(args):
    k, seed, dem, prob, mat, duration, runner = args
    t0 = time.perf_counter()
    real = sample_sources(prob, seed)
    try:
        forcing = SourceForcing.from_realization(real, prob, dem)
        res = runner(dem, forcing, mat, duration)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return CaseResult(None, Ledger(), time.perf_counter() - t0, 0,
                          status=f"failed: {type(exc).__name__}: {exc}", seed=seed)
    res.seed = seed
    return res


def run_ensemble(dem: Raster, prob: Raster, n_cases: int, base_seed: int,
                 mat: MaterialParams = MaterialParams(), duration: float = 3600.0,
                 workers: int = 1, runner=run) -> list:
    """Simulate ``n_cases`` source realizations; case k draws with seed ``base_seed + k``.

    ``prob`` is the source-probability raster whose cells define the source
    footprints on ``dem``. Failed cases come back with ``delta_z = None`` and
    a status starting with ``"failed"``. ``runner`` must accept
    ``(dem, forcing, mat, duration)`` and return a :class:`CaseResult`;
    it has to be picklable when ``workers > 1``.
    """
    if n_cases < 1:
        raise DomainError(f"n_cases must be at least 1, got {n_cases}")
    jobs = [(k, base_seed + k, dem, prob, mat, duration, runner) for k in range(n_cases)]
    if workers > 1 and n_cases > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_case, jobs))
    return [_case(j) for j in jobs]


@dataclass(frozen=True)
class EnsembleStats:
    mean_dz: Raster
    rel_std_log10: Raster
    hit_frequency: Raster
    n_cases: int
    n_failed: int = 0


def ensemble_stats(cases, epsilon: float = 0.05) -> EnsembleStats:
    """Mean change, log10 relative standard deviation and hit frequency per cell.

    The relative standard deviation is the sample standard deviation over
    |mean|, with the standard deviation floored at 1e-12 before the
    logarithm; it is nodata wherever |mean| <= epsilon. A single case has no
    spread and is given a standard deviation of zero. Failed cases are
    excluded and counted.
    """
    if not epsilon >= 0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    ok = [c for c in cases if c.delta_z is not None and c.status == "ok"]
    n_failed = len(cases) - len(ok)
    if not ok:
        raise DomainError("no successful cases to summarise")
    grids = [c.delta_z for c in ok]
    require_same_grid(*grids)
    ref = grids[0]
    nodata = np.zeros(ref.shape, dtype=bool)
    for g in grids:
        nodata |= g.nodata_mask
    n = len(ok)
    mean = np.zeros(ref.shape)
    std = np.zeros(ref.shape)
    hits = np.zeros(ref.shape, dtype=np.int64)
    # per-cell values are sorted across cases so every reduction is independent
    # of case order, and deviations are taken from the smallest value so that
    # identical cases reproduce their common value exactly
    for r0 in range(0, ref.nrows, ROW_BLOCK):
        r1 = min(r0 + ROW_BLOCK, ref.nrows)
        stack = np.sort(np.stack([np.where(nodata[r0:r1], 0.0, g.values[r0:r1]) for g in grids]), axis=0)
        lo = stack[0]
        m = lo + np.sum(stack - lo, axis=0) / n
        mean[r0:r1] = m
        hits[r0:r1] = np.sum(np.abs(stack) > epsilon, axis=0)
        if n > 1:
            std[r0:r1] = np.sqrt(np.sum((stack - m) ** 2, axis=0) / (n - 1))
    am = np.abs(mean)
    material = am > epsilon
    rel = np.full(ref.shape, np.nan)
    rel[material] = np.log10(np.maximum(std[material], STD_FLOOR) / am[material])
    return EnsembleStats(
        mean_dz=ref.with_values(mean, nodata_mask=nodata),
        rel_std_log10=ref.with_values(rel, nodata_mask=nodata | ~material),
        hit_frequency=ref.with_values(hits / n, nodata_mask=nodata),
        n_cases=n,
        n_failed=n_failed,
    )
