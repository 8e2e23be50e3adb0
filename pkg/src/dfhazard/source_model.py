"""Cell-by-cell logistic source probability, its fit, and Bernoulli source sampling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RankError, SeparationError
from .raster import Raster, require_same_grid
from .terrain import TerrainDerivatives

COEFFICIENT_NAMES = ("intercept", "swi_max", "log10_catchment_area", "slope_deg", "curvature_plan",
                     "curvature_tangential")


@dataclass(frozen=True)
class LogisticModel:
    gamma: tuple
    std_err: tuple = (math.nan,) * 6
    z_value: tuple = (math.nan,) * 6
    p_value: tuple = (math.nan,) * 6
    n_iter: int = 0

    def __post_init__(self):
        if len(self.gamma) != 6:
            raise DomainError(f"logistic model needs 6 coefficients, got {len(self.gamma)}")
        if not all(math.isfinite(g) for g in self.gamma):
            raise DomainError("logistic coefficients must be finite")


# Reference coefficients and diagnostics for the source-probability regression.
REFERENCE_MODEL = LogisticModel(
    gamma=(-18.5350, 0.0417, -0.7764, 0.0467, 10.2806, -37.8506),
    std_err=(0.3805, 0.0017, 0.0604, 0.0020, 1.9080, 1.5203),
    z_value=(-48.7111, 25.1712, -12.8494, 23.2909, 5.3882, -24.8971),
    p_value=(0.0, 0.0, 0.0, 0.0, 7.1169e-08, 0.0),
)


def sigmoid(eta):
    """Logistic function without overflow for large |eta|."""
    eta = np.asarray(eta, dtype=np.float64)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def feature_stack(swi_max: Raster, terrain: TerrainDerivatives, mask: Raster | None = None):
    """Stack covariates into an (nrows, ncols, 5) array plus a validity mask.

    Column order: SWI_max, log10 catchment area, slope (deg), plan and
    tangential curvature. Cells nodata in any input, or zero/nodata in the
    optional geology ``mask``, are invalid.
    """
    layers = [swi_max, terrain.catchment_area, terrain.slope, terrain.curvature_plan,
              terrain.curvature_tangential]
    if mask is not None:
        layers.append(mask)
    require_same_grid(*layers)
    valid = np.ones(swi_max.shape, dtype=bool)
    for r in layers:
        valid &= ~r.nodata_mask
    if mask is not None:
        valid &= mask.values != 0
    area = terrain.catchment_area.values
    if np.any(area[valid] <= 0):
        raise DomainError("catchment area must be positive where the model is evaluated")
    logA = np.log10(np.where(valid, area, 1.0))
    X = np.stack([swi_max.values, logA, terrain.slope.values, terrain.curvature_plan.values,
                  terrain.curvature_tangential.values], axis=-1)
    X[~valid] = 0.0
    return X, valid


def linear_predictor(X: np.ndarray, model: LogisticModel) -> np.ndarray:
    g = np.asarray(model.gamma)
    return g[0] + X @ g[1:]


def predict_probability(swi_max: Raster, terrain: TerrainDerivatives, model: LogisticModel = REFERENCE_MODEL,
                        mask: Raster | None = None) -> Raster:
    """Source probability per cell; nodata wherever any covariate is nodata."""
    X, valid = feature_stack(swi_max, terrain, mask)
    p = sigmoid(linear_predictor(X, model))
    return swi_max.with_values(p, nodata_mask=~valid)


def _normal_two_sided(z):
    return math.erfc(abs(z) / math.sqrt(2.0))


def fit_logistic(X, y, tol: float = 1e-8, max_iter: int = 100, separation_norm: float = 1e3) -> LogisticModel:
    """Maximum-likelihood logistic regression by Newton-Raphson (IRLS).

    Parameters
    ----------
    X : array_like, shape (n, 5)
        Covariates without the intercept column.
    y : array_like, shape (n,)
        Binary labels.

    Raises
    ------
    SeparationError
        Labels are all one class, or the coefficient norm diverges.
    RankError
        The information matrix is singular.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise DomainError("features and labels differ in length")
    if not np.all(np.isfinite(X)):
        raise DomainError("features contain non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    npos = y.sum()
    if npos == 0 or npos == y.size:
        raise SeparationError("labels need at least one positive and one negative case")

    A = np.column_stack([np.ones(y.size), X])
    beta = np.zeros(A.shape[1])
    beta[0] = math.log(npos / (y.size - npos))
    info = None
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(A @ beta)
        w = p * (1 - p)
        info = A.T @ (A * w[:, None])
        score = A.T @ (y - p)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise RankError("information matrix is singular") from None
        if np.linalg.cond(info) > 1e14:
            raise RankError("information matrix is numerically singular")
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > separation_norm:
            raise SeparationError("coefficients diverge; the labels are (quasi-)separable")
        if np.max(np.abs(step)) < tol:
            break

    p = sigmoid(A @ beta)
    info = A.T @ (A * (p * (1 - p))[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise RankError("information matrix is singular") from None
    se = np.sqrt(np.diag(cov))
    z = beta / se
    pv = [_normal_two_sided(v) for v in z]
    full = np.zeros(6)
    full[: beta.size] = beta
    pad = 6 - beta.size
    nanpad = (math.nan,) * pad
    return LogisticModel(
        gamma=tuple(float(v) for v in full),
        std_err=tuple(float(v) for v in se) + nanpad,
        z_value=tuple(float(v) for v in z) + nanpad,
        p_value=tuple(float(v) for v in pv) + nanpad,
        n_iter=it,
    )


def fit_from_rasters(swi_max: Raster, terrain: TerrainDerivatives, labels: Raster,
                     mask: Raster | None = None, **options) -> LogisticModel:
    """Fit on every valid cell; ``labels`` is 1 at inventory source cells, 0 elsewhere."""
    X, valid = feature_stack(swi_max, terrain, mask)
    require_same_grid(swi_max, labels)
    valid &= ~labels.nodata_mask
    return fit_logistic(X[valid], (labels.values[valid] != 0).astype(float), **options)


def write_model(model: LogisticModel, path) -> None:
    """Six lines ``gamma<k>=value std_err=.. z_value=.. p_value=..``."""
    with open(path, "w") as fh:
        for k in range(6):
            fh.write(
                f"gamma{k}={model.gamma[k]!r} std_err={model.std_err[k]!r} "
                f"z_value={model.z_value[k]!r} p_value={model.p_value[k]!r}\n"
            )


def read_model(path) -> LogisticModel:
    cols = {"gamma": [None] * 6, "std_err": [math.nan] * 6, "z_value": [math.nan] * 6, "p_value": [math.nan] * 6}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k = None
            for item in line.split():
                key, sep, val = item.partition("=")
                if not sep:
                    raise DomainError(f"{path}: line {lineno}: expected key=value, got {item!r}")
                try:
                    num = float(val)
                except ValueError:
                    raise DomainError(f"{path}: line {lineno}: non-numeric value {val!r}") from None
                if key.startswith("gamma") and key[5:].isdigit() and int(key[5:]) < 6:
                    k = int(key[5:])
                    cols["gamma"][k] = num
                elif key in cols and k is not None:
                    cols[key][k] = num
                else:
                    raise DomainError(f"{path}: line {lineno}: unknown key {key!r}")
    if any(g is None for g in cols["gamma"]):
        raise DomainError(f"{path}: model file must define gamma0..gamma5")
    return LogisticModel(*(tuple(cols[c]) for c in ("gamma", "std_err", "z_value", "p_value")))


@dataclass(frozen=True)
class SourceRealization:
    """Source cells (row, col) on the probability grid and the seed that drew them."""

    cells: tuple
    seed: int

    def __post_init__(self):
        if len(set(self.cells)) != len(self.cells):
            raise DomainError("source realization contains duplicate cells")


def generator(seed: int) -> np.random.Generator:
    """Philox-4x32 counter-based generator; the seed is the Philox key."""
    return np.random.Generator(np.random.Philox(seed))


def sample_sources(prob: Raster, seed: int) -> SourceRealization:
    """Independent Bernoulli draw per cell.

    One uniform is drawn per grid cell in row-major order (nodata cells
    consume a draw but are never selected), and a cell is a source when its
    uniform is below its probability.
    """
    vals = prob.values
    valid = ~prob.nodata_mask
    pv = vals[valid]
    if np.any((pv < 0) | (pv > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    u = generator(seed).random(prob.nrows * prob.ncols).reshape(prob.shape)
    hit = valid & (u < vals)
    rows, cols = np.nonzero(hit)
    return SourceRealization(tuple(zip(rows.tolist(), cols.tolist())), int(seed))


def write_realization(real: SourceRealization, grid: Raster, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "x_center", "y_center"])
        for r, c in real.cells:
            x, y = grid.cell_center(r, c)
            w.writerow([r, c, repr(x), repr(y)])


def read_realization(path, seed: int = -1) -> SourceRealization:
    cells = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                cells.append((int(row["row"]), int(row["col"])))
            except (KeyError, TypeError, ValueError):
                raise DomainError(f"{path}: line {lineno}: expected integer row,col") from None
    return SourceRealization(tuple(cells), seed)
