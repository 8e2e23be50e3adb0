"""Material parameters and closure laws of the three-phase debris-flow model.

Regimes follow the sediment concentration C: stony debris flow for
C >= 0.4 C*, hyper-concentrated flow for 0.01 <= C < 0.4 C*, and water flow
below 0.01. The jumps between regimes are smoothed by linear blending in
narrow bands; :func:`blend_weight` is the single place that defines them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import DomainError

WATER_LIMIT = 0.01          # C below which the flow is treated as water
STONY_FRACTION = 0.4        # C >= STONY_FRACTION * C* is stony debris flow
BAND_HALF_WIDTH = 0.1       # blend half-width as a fraction of each threshold
STONY_CAP = 0.95            # stony friction evaluated at most at C = STONY_CAP * C*
CINF_CAP = 0.9              # C_inf never exceeds CINF_CAP * C*
TAN_IMMATURE = 0.138        # lower bound of the fully developed debris-flow range
TAN_BEDLOAD = 0.03          # upper bound of the bed-load range


@dataclass(frozen=True)
class MaterialParams:
    """Physical and numerical parameters of one simulation.

    Defaults are the selected calibration set (d_m = 0.02 m, D_e = 1 m,
    phi = 25 deg, r_c = 0.1, Q_add = 0.1 m/s, T_add = 100 s) plus standard
    values for constants the calibration never varied.
    """

    d_m: float = 0.02
    D_e: float = 1.0
    phi: float = 25.0
    r_c: float = 0.1
    Q_add: float = 0.1
    T_add: float = 100.0
    n_m: float = 0.03
    sigma: float = 2.65
    C_star0: float = 0.65
    delta_e: float = 0.0007
    delta_d: float = 0.05
    g: float = 9.81
    h_min: float = 1e-4
    courant: float = 0.4
    dt_max: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise DomainError(f"material parameter {f.name} must be a finite number, got {v!r}")
        for name in ("d_m", "D_e", "n_m", "g", "h_min", "dt_max"):
            if not getattr(self, name) > 0:
                raise DomainError(f"material parameter {name} must be positive")
        for name in ("Q_add", "T_add", "delta_e", "delta_d"):
            if getattr(self, name) < 0:
                raise DomainError(f"material parameter {name} must be nonnegative")
        if not 0 <= self.r_c < 1:
            raise DomainError("transition rate r_c must lie in [0, 1)")
        if not 0 < self.C_star0 < 1:
            raise DomainError("C_star0 must lie in (0, 1)")
        if not 0 < self.courant <= 1:
            raise DomainError("courant number must lie in (0, 1]")
        if not self.sigma > 1:
            raise DomainError("sediment specific weight sigma must exceed 1")
        if not 0 < self.phi < 90:
            raise DomainError("internal friction angle must lie in (0, 90) degrees")
        if not self.rho < self.sigma:
            raise DomainError(f"fluid specific weight {self.rho} must stay below sigma = {self.sigma}")

    @property
    def rho(self) -> float:
        return 1.0 + self.r_c * self.sigma

    @property
    def C_star(self) -> float:
        return self.C_star0 * (1.0 - self.r_c)

    @property
    def tan_phi(self) -> float:
        return math.tan(math.radians(self.phi))

    def updated(self, **overrides) -> "MaterialParams":
        return replace(self, **overrides)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DerivedMaterial:
    rho: float
    C_star: float


def derive_material(params: MaterialParams) -> DerivedMaterial:
    """Fluid specific weight and bed concentration after the phase shift."""
    return DerivedMaterial(rho=params.rho, C_star=params.C_star)


def blend_weight(x, threshold):
    """0 below the band around ``threshold``, 1 above it, linear inside."""
    hw = BAND_HALF_WIDTH * threshold
    return np.clip((x - (threshold - hw)) / (2 * hw), 0.0, 1.0)


def friction_coefficient(h, C, mat: MaterialParams):
    """K such that the friction slope is (K u |V|, K v |V|).

    ``h`` must be positive; callers mask dry cells.
    """
    h = np.asarray(h, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    cs = mat.C_star
    k_water = mat.n_m**2 / h ** (4.0 / 3.0)
    k_hyper = mat.d_m**2 / (0.49 * mat.g * h**3)
    cc = np.clip(C, 1e-12, STONY_CAP * cs)
    mix = cc + (1.0 - cc) * mat.rho / mat.sigma
    k_stony = mat.d_m**2 / (8.0 * mat.g * h**3 * mix * ((cs / cc) ** (1.0 / 3.0) - 1.0) ** 2)
    w_low = blend_weight(C, WATER_LIMIT)
    w_high = blend_weight(C, STONY_FRACTION * cs)
    upper = (1.0 - w_high) * k_hyper + w_high * k_stony
    return (1.0 - w_low) * k_water + w_low * upper


def friction_slope(u, v, h, C, mat: MaterialParams):
    """Friction slopes (S_fx, S_fy); zero on cells shallower than ``h_min``."""
    u, v, h, C = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (u, v, h, C)))
    wet = h >= mat.h_min
    k = np.zeros_like(h)
    k[wet] = friction_coefficient(h[wet], C[wet], mat)
    speed = np.hypot(u, v)
    return k * u * speed, k * v * speed


def _stony_cinf(t, mat):
    return mat.rho * t / ((mat.sigma - mat.rho) * (mat.tan_phi - t))


def _bedload_cinf(t, h, mat):
    rho, sigma = mat.rho, mat.sigma
    tau_c = 0.04 * 10.0 ** (1.72 * t)
    tau = rho / (sigma - rho) * h * t / mat.d_m
    s = sigma * t / (sigma - rho)
    alpha2 = np.clip(2.0 * (0.425 - s) / (1.0 - s), 0.0, None)
    # cells with tau <= tau_c are zeroed below; a ratio of 1 keeps them finite meanwhile
    ratio = np.divide(tau_c, tau, out=np.ones_like(tau), where=tau > tau_c)
    c = (rho * (1.0 + 5.0 * t) * t / (sigma - rho)
         * (1.0 - alpha2 * ratio) * (1.0 - np.sqrt(alpha2) * np.sqrt(ratio)))
    return np.where(tau > tau_c, c, 0.0)


def equilibrium_concentration(tan_theta_w, h, mat: MaterialParams):
    """Equilibrium sediment concentration for a water-surface gradient.

    Branches by ``tan_theta_w``: 0.9 C* at or above tan(phi); the stony
    debris-flow law down to 0.138; its immature form 6.7 x^2 down to 0.03;
    bed load below. Each lower branch hands over to the one above linearly
    over the 10 % band just below its threshold, so the branch value
    holds exactly at and above every threshold. Result is clamped to
    [0, 0.9 C*].
    """
    t = np.abs(np.asarray(tan_theta_w, dtype=np.float64))
    h = np.asarray(h, dtype=np.float64)
    t, h = np.broadcast_arrays(t, h)
    cap = CINF_CAP * mat.C_star
    tp = mat.tan_phi
    below_phi = t < tp
    ts = np.where(below_phi, t, 0.0)
    stony = np.where(below_phi, _stony_cinf(ts, mat), np.inf)
    immature = 6.7 * _stony_cinf(ts, mat) ** 2
    bedload = _bedload_cinf(t, h, mat)

    w_hi = np.clip((t - (1 - BAND_HALF_WIDTH) * TAN_IMMATURE) / (BAND_HALF_WIDTH * TAN_IMMATURE), 0.0, 1.0)
    w_lo = np.clip((t - (1 - BAND_HALF_WIDTH) * TAN_BEDLOAD) / (BAND_HALF_WIDTH * TAN_BEDLOAD), 0.0, 1.0)
    upper = np.where(t >= TAN_IMMATURE, stony, (1 - w_hi) * immature + w_hi * np.minimum(stony, cap))
    lower = (1 - w_lo) * bedload + w_lo * immature
    c = np.where(t >= TAN_BEDLOAD, upper, lower)
    c = np.where(below_phi, c, cap)
    return np.clip(c, 0.0, cap)


def erosion_deposition_rate(C, C_inf, h, speed, mat: MaterialParams):
    """Bed exchange velocity i (m/s); positive is erosion, negative deposition."""
    C, C_inf, h, speed = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (C, C_inf, h, speed))
    )
    cs = mat.C_star
    erode = C_inf >= C
    denom = np.where(erode, cs - C_inf, 1.0)
    e = mat.delta_e * (C_inf - C) / denom * h * speed / mat.d_m
    d = mat.delta_d * (C_inf - C) / cs * speed
    return np.where(erode, e, d)
