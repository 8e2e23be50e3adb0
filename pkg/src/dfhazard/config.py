"""Run configuration: a flat-sectioned INI file.

Relative paths resolve against the directory holding the config file.
Example::

    [paths]
    dem_fine = dem_fine.asc
    dem_coarse = dem_coarse.asc
    rain_stack = rain/rain_00.asc rain/rain_01.asc
    rain_interval_min = 60

    [material]
    d_m = 0.02

    [ensemble]
    n_cases = 10
    base_seed = 1000
"""

from __future__ import annotations

import configparser
import glob
import hashlib
import os
from dataclasses import dataclass, field, fields

from .errors import DomainError
from .evaluation import SWEEP_KEYS, TABLE3_VALUES, table3_candidates
from .material import MaterialParams

PATH_KEYS = ("dem_fine", "dem_coarse", "geology_mask", "rain_csv", "observed_dz", "model_file", "labels",
             "realization", "simulated_dz")
REQUIRED_PATHS = ("dem_fine", "dem_coarse")


class ConfigError(DomainError):
    """Invalid configuration; ``key`` names the offending ``[section] key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    source: str
    digest: str
    base_dir: str
    paths: dict = field(default_factory=dict)
    rain_stack: list = field(default_factory=list)
    rain_interval_min: float = 60.0
    model_source: str = "reference"
    material: MaterialParams = field(default_factory=MaterialParams)
    material_overrides: dict = field(default_factory=dict)
    duration: float = 3600.0
    snapshot_interval: float = 0.0
    n_cases: int = 10
    base_seed: int = 0
    epsilon: float = 0.05
    sweep_candidates: list = field(default_factory=list)
    output_dir: str = "out"

    def path(self, key: str, required: bool = True):
        p = self.paths.get(key)
        if p is None and required:
            raise ConfigError(f"[paths] {key}", "required for this command but not set")
        return p


def _float(cp, section, key, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}", f"expected a number, got {raw!r}") from None


def _int(cp, section, key, default):
    v = _float(cp, section, key, default)
    if v != int(v):
        raise ConfigError(f"[{section}] {key}", f"expected an integer, got {v!r}")
    return int(v)


def _split(raw: str):
    return [t for t in raw.replace(",", " ").split() if t]


def _resolve(base, p):
    return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))


def load_config(path) -> RunConfig:
    """Parse and validate a config file; every referenced input must exist."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (d_m vs D_e)
    try:
        cp.read_string(raw.decode("utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError("--config", f"malformed config file: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    cfg = RunConfig(source=os.path.abspath(path), digest=hashlib.sha256(raw).hexdigest(), base_dir=base)

    known = {"paths", "model", "material", "simulation", "ensemble", "sweep", "output"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"[{sec}]", f"unknown section; expected one of {sorted(known)}")

    if cp.has_section("paths"):
        for key, val in cp.items("paths"):
            if key == "rain_stack":
                continue
            if key == "rain_interval_min":
                continue
            if key not in PATH_KEYS:
                raise ConfigError(f"[paths] {key}", "unknown key")
            if val.strip():
                cfg.paths[key] = _resolve(base, val.strip())
        if cp.has_option("paths", "rain_stack"):
            stack = []
            for tok in _split(cp.get("paths", "rain_stack")):
                full = _resolve(base, tok)
                hits = sorted(glob.glob(full)) if any(ch in tok for ch in "*?[") else [full]
                if not hits:
                    raise ConfigError("[paths] rain_stack", f"pattern {tok!r} matches no file")
                stack.extend(hits)
            cfg.rain_stack = stack
        cfg.rain_interval_min = _float(cp, "paths", "rain_interval_min", 60.0)
        if not cfg.rain_interval_min > 0:
            raise ConfigError("[paths] rain_interval_min", "must be positive")
    for key in REQUIRED_PATHS:
        if key not in cfg.paths:
            raise ConfigError(f"[paths] {key}", "missing")
    for key, p in cfg.paths.items():
        if key in ("simulated_dz", "realization") and not os.path.exists(p):
            continue  # may be produced by an earlier command
        if not os.path.isfile(p):
            raise ConfigError(f"[paths] {key}", f"file not found: {p}")
    for p in cfg.rain_stack:
        if not os.path.isfile(p):
            raise ConfigError("[paths] rain_stack", f"file not found: {p}")

    if cp.has_option("model", "source"):
        src = cp.get("model", "source").strip()
        if src not in ("reference", "file", "fit"):
            raise ConfigError("[model] source", f"expected reference, file or fit, got {src!r}")
        cfg.model_source = src
    if cfg.model_source == "file" and "model_file" not in cfg.paths:
        raise ConfigError("[paths] model_file", "required when [model] source = file")
    if cfg.model_source == "fit" and "labels" not in cfg.paths:
        raise ConfigError("[paths] labels", "required when [model] source = fit")

    names = {f.name for f in fields(MaterialParams)}
    if cp.has_section("material"):
        for key, _ in cp.items("material"):
            if key not in names:
                raise ConfigError(f"[material] {key}", "unknown material parameter")
            cfg.material_overrides[key] = _float(cp, "material", key, None)
    try:
        cfg.material = MaterialParams().updated(**cfg.material_overrides)
    except DomainError as exc:
        bad = next((k for k in cfg.material_overrides if k in str(exc)), None)
        raise ConfigError(f"[material] {bad}" if bad else "[material]", str(exc)) from None

    cfg.duration = _float(cp, "simulation", "duration", 3600.0)
    if not cfg.duration > 0:
        raise ConfigError("[simulation] duration", "must be positive")
    cfg.snapshot_interval = _float(cp, "simulation", "snapshot_interval", 0.0)
    if cfg.snapshot_interval < 0:
        raise ConfigError("[simulation] snapshot_interval", "must be nonnegative")

    cfg.n_cases = _int(cp, "ensemble", "n_cases", 10)
    if cfg.n_cases < 1:
        raise ConfigError("[ensemble] n_cases", "must be at least 1")
    cfg.base_seed = _int(cp, "ensemble", "base_seed", 0)
    if cfg.base_seed < 0:
        raise ConfigError("[ensemble] base_seed", "must be nonnegative")
    cfg.epsilon = _float(cp, "ensemble", "epsilon", 0.05)
    if cfg.epsilon < 0:
        raise ConfigError("[ensemble] epsilon", "must be nonnegative")

    cfg.sweep_candidates = _sweep(cp)
    if cp.has_option("output", "directory"):
        cfg.output_dir = _resolve(base, cp.get("output", "directory").strip())
    else:
        cfg.output_dir = _resolve(base, "out")
    return cfg


def _sweep(cp):
    """Candidates from ``[sweep]``: ``grid = table3`` or one value list per swept parameter."""
    if not cp.has_section("sweep"):
        return table3_candidates()
    items = dict(cp.items("sweep"))
    grid = items.pop("grid", "").strip()
    if grid and grid != "table3":
        raise ConfigError("[sweep] grid", f"only 'table3' is recognised, got {grid!r}")
    lists = {}
    for key, raw in items.items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"[sweep] {key}", f"not a swept parameter; expected one of {list(SWEEP_KEYS)}")
        try:
            vals = [float(t) for t in _split(raw)]
        except ValueError:
            raise ConfigError(f"[sweep] {key}", f"expected a list of numbers, got {raw!r}") from None
        if not vals:
            raise ConfigError(f"[sweep] {key}", "empty candidate list")
        lists[key] = vals
    if grid == "table3" or not lists:
        base = {k: list(v) for k, v in TABLE3_VALUES.items()}
        base.update(lists)
        lists = base
    keys = [k for k in SWEEP_KEYS if k in lists]
    combos = [[]]
    for k in keys:
        combos = [c + [v] for c in combos for v in lists[k]]
    cands = [dict(zip(keys, c)) for c in combos]
    for c in cands:
        try:
            MaterialParams().updated(**c)
        except DomainError as exc:
            raise ConfigError("[sweep]", f"candidate {c} is invalid: {exc}") from None
    return cands
