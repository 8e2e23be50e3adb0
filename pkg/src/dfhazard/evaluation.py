"""Three-class comparison of simulated and observed bed change, and the parameter sweep."""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .errors import DomainError
from .material import MaterialParams
from .raster import Raster, require_same_grid
from .solver import SourceForcing, run

SWEEP_KEYS = ("d_m", "D_e", "phi", "r_c", "Q_add", "T_add")

# candidate values per swept parameter, as tabulated
TABLE3_VALUES = {
    "d_m": (0.02, 0.05, 0.1),
    "D_e": (1.0, 2.0),
    "phi": (35.0, 25.0),
    "r_c": (0.0, 0.1, 0.2),
    "Q_add": (0.1, 0.2, 1.0, 10.0),
    "T_add": (1.0, 10.0, 100.0, 500.0, 1000.0),
}
SELECTED_SET = {"d_m": 0.02, "D_e": 1.0, "phi": 25.0, "r_c": 0.1, "Q_add": 0.1, "T_add": 100.0}


class ChangeClass(IntEnum):
    EROSION = -1
    NOT_AFFECTED = 0
    DEPOSITION = 1
    NODATA = 2


CLASSES = (ChangeClass.EROSION, ChangeClass.NOT_AFFECTED, ChangeClass.DEPOSITION)


@dataclass(frozen=True, eq=False)
class ChangeClassRaster:
    """Per-cell change class on the grid of ``template``."""

    labels: np.ndarray
    template: Raster

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int8)
        if lab.shape != self.template.shape:
            raise DomainError(f"label shape {lab.shape} does not match grid {self.template.shape}")
        if not np.isin(lab, [int(c) for c in ChangeClass]).all():
            raise DomainError("labels must come from the change-class enumeration")
        lab = lab.copy()
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def valid(self) -> np.ndarray:
        return self.labels != ChangeClass.NODATA

    def to_raster(self) -> Raster:
        return self.template.with_values(self.labels.astype(np.float64), nodata_mask=~self.valid)


def classify_change(delta_z: Raster, epsilon: float = 0.05) -> ChangeClassRaster:
    """Erosion below -epsilon, deposition above +epsilon, not affected in between."""
    if not epsilon >= 0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    dz = delta_z.values
    lab = np.full(dz.shape, ChangeClass.NOT_AFFECTED, dtype=np.int8)
    lab[dz < -epsilon] = ChangeClass.EROSION
    lab[dz > epsilon] = ChangeClass.DEPOSITION
    lab[delta_z.nodata_mask] = ChangeClass.NODATA
    return ChangeClassRaster(lab, delta_z)


class Counts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_counts(pred: ChangeClassRaster, obs: ChangeClassRaster, target: ChangeClass) -> Counts:
    """One-vs-rest confusion counts over cells valid in both rasters."""
    require_same_grid(pred.template, obs.template)
    if ChangeClass(target) == ChangeClass.NODATA:
        raise DomainError("nodata is not a scoring class")
    ok = pred.valid & obs.valid
    p = pred.labels[ok] == target
    o = obs.labels[ok] == target
    return Counts(int(np.sum(p & o)), int(np.sum(p & ~o)), int(np.sum(~p & o)), int(np.sum(~p & ~o)))


def _ratio(num, den):
    return num / den if den > 0 else 0.0


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class Scores:
    """Per-class scores in the order erosion, not affected, deposition."""

    per_class: tuple
    f1_ave: float


def f1_metrics(counts) -> Scores:
    """Precision, recall and F1 per class; empty ratios count as 0.

    ``counts`` maps each of the three classes to its :class:`Counts`, or is a
    sequence in class order.
    """
    if isinstance(counts, dict):
        counts = [counts[c] for c in CLASSES]
    if len(counts) != 3:
        raise DomainError("f1_metrics needs counts for exactly three classes")
    scores = []
    for c in counts:
        if min(c.tp, c.fp, c.fn) < 0:
            raise DomainError("confusion counts must be nonnegative")
        scores.append(ClassScore(_ratio(c.tp, c.tp + c.fp), _ratio(c.tp, c.tp + c.fn),
                                 _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)))
    return Scores(tuple(scores), sum(s.f1 for s in scores) / 3.0)


def score_change(sim_dz: Raster, obs_dz: Raster, epsilon: float = 0.05) -> Scores:
    pred, obs = classify_change(sim_dz, epsilon), classify_change(obs_dz, epsilon)
    return f1_metrics([confusion_counts(pred, obs, c) for c in CLASSES])


def table3_candidates() -> list:
    """Every combination of the candidate lists, as override dicts in lexicographic index order."""
    return [dict(zip(SWEEP_KEYS, combo)) for combo in itertools.product(*(TABLE3_VALUES[k] for k in SWEEP_KEYS))]


@dataclass(frozen=True)
class SweepRow:
    index: int
    params: dict
    scores: Scores | None
    f1_ave: float
    rank: int = 0
    status: str = "ok"
    runtime: float = 0.0


@dataclass(frozen=True)
class SweepReport:
    rows: tuple                   # ranked best first

    @property
    def best(self) -> SweepRow:
        return self.rows[0]

    def by_index(self):
        return sorted(self.rows, key=lambda r: r.index)


def _param_key(params: dict):
    return tuple(params.get(k, math.inf) for k in SWEEP_KEYS) + tuple(
        sorted((k, v) for k, v in params.items() if k not in SWEEP_KEYS))


def _sweep_case(args):
    index, dem, forcing, base, overrides, observed, epsilon, duration = args
    try:
        mat = base.updated(**overrides)
        res = run(dem, forcing, mat, duration)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return index, None, f"failed: {type(exc).__name__}: {exc}", 0.0
    return index, score_change(res.delta_z, observed, epsilon), "ok", res.runtime


def rank_rows(rows) -> SweepReport:
    """Order by F1_ave descending with ties broken by the parameter values."""
    ordered = sorted(rows, key=lambda r: (-r.f1_ave, _param_key(r.params), r.index))
    ranked = tuple(SweepRow(r.index, r.params, r.scores, r.f1_ave, k + 1, r.status, r.runtime)
                   for k, r in enumerate(ordered))
    return SweepReport(ranked)


def parameter_sweep(dem: Raster, forcing: SourceForcing, candidates, observed_dz: Raster,
                    epsilon: float = 0.05, base: MaterialParams = MaterialParams(),
                    duration: float = 3600.0, workers: int = 1) -> SweepReport:
    """Simulate every candidate with fixed sources and rank them by F1_ave.

    A candidate whose simulation fails scores -1 instead of stopping the sweep.
    Results are assembled by candidate index, so the report does not depend on
    ``workers``.
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("candidate list is empty")
    require_same_grid(dem, observed_dz)
    jobs = [(k, dem, forcing, base, dict(c), observed_dz, epsilon, duration) for k, c in enumerate(candidates)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_case, jobs))
    else:
        results = [_sweep_case(j) for j in jobs]
    rows = []
    for (k, scores, status, runtime), c in zip(sorted(results, key=lambda r: r[0]), candidates):
        f1 = scores.f1_ave if scores is not None else -1.0
        rows.append(SweepRow(k, dict(c), scores, f1, 0, status, runtime))
    return rank_rows(rows)


def write_sweep_csv(report: SweepReport, path) -> None:
    """One row per candidate, best first."""
    keys = list(SWEEP_KEYS)
    extra = sorted({k for r in report.rows for k in r.params} - set(keys))
    header = ["rank", "index"] + keys + extra
    for name in ("erosion", "not_affected", "deposition"):
        header += [f"{name}_precision", f"{name}_recall", f"{name}_f1"]
    header += ["f1_ave", "status", "runtime_s"]
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in report.rows:
            row = [r.rank, r.index] + [repr(float(r.params[k])) if k in r.params else "" for k in keys + extra]
            if r.scores is None:
                row += [""] * 9
            else:
                for s in r.scores.per_class:
                    row += [repr(s.precision), repr(s.recall), repr(s.f1)]
            row += [repr(r.f1_ave), r.status, repr(r.runtime)]
            w.writerow(row)
    os.replace(tmp, path)


def scatter_data(report: SweepReport) -> dict:
    """Per swept parameter, the (value, F1_ave) pairs of every successful candidate."""
    out = {}
    for k in SWEEP_KEYS:
        pts = [(float(r.params[k]), r.f1_ave) for r in report.by_index() if k in r.params and r.scores is not None]
        if pts:
            out[k] = pts
    return out
