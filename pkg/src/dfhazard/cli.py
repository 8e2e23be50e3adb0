"""Command-line front end: ``dfhazard <command> --config run.ini``.

Exit status is 0 on success, 1 on a domain or validation error and 2 on a
usage error. Every invocation that gets past argument parsing writes
``manifest.json`` into the output directory, including failed ones.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .ensemble import ensemble_stats, run_ensemble
from .errors import DomainError, NumericalBlowUpError
from .evaluation import (CLASSES, classify_change, confusion_counts, f1_metrics, parameter_sweep, scatter_data,
                         write_sweep_csv)
from .plotting import raster_figure, swi_series_figure, sweep_figure
from .raster import Raster, read_ascii_grid, render_image, require_same_grid, resample_nearest, write_ascii_grid
from .solver import SourceForcing, run
from .source_model import (REFERENCE_MODEL, fit_from_rasters, predict_probability, read_model, read_realization,
                           sample_sources, write_model, write_realization)
from .swi import TankParams, max_swi_raster, read_rain_csv, swi_series
from .terrain import terrain_derivatives

COMMANDS = ("swi", "susceptibility", "sample", "simulate", "calibrate", "ensemble", "evaluate", "render")


class Manifest:
    def __init__(self, command, argv):
        self.data = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "status": "running",
            "stages": [],
            "seeds": {},
            "outputs": [],
        }
        self.t0 = time.perf_counter()

    @contextmanager
    def stage(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.data["stages"].append({"name": name, "wall_time_s": time.perf_counter() - t})

    def output(self, path):
        self.data["outputs"].append(os.path.basename(path))

    def write(self, out_dir):
        self.data["total_wall_time_s"] = time.perf_counter() - self.t0
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "manifest.json")
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def _range(values, symmetric=False):
    v = values[np.isfinite(values)]
    if v.size == 0:
        return (0.0, 1.0)
    if symmetric:
        m = float(np.max(np.abs(v)))
        m = m if m > 0 else 1.0
        return (-m, m)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        hi = lo + 1.0
    return (lo, hi)


def _save(raster: Raster, out, name, man: Manifest, ramp="heat", value_range=None, title="", label="",
          symmetric=False):
    """Write ``name``.asc, a PPM rendering and a PNG figure."""
    base = os.path.join(out, name)
    write_ascii_grid(raster, base + ".asc")
    vr = value_range or _range(raster.masked(), symmetric)
    render_image(raster, ramp, vr, base + ".ppm")
    raster_figure(raster, base + ".png", title or name, ramp, vr, label)
    for ext in (".asc", ".ppm", ".png"):
        man.output(base + ext)


# ---------------------------------------------------------------------------
# pipeline stages


def stage_swi(cfg: RunConfig, coarse: Raster, out, man: Manifest, write=True) -> Raster:
    """Maximum SWI on the coarse grid, from the rain stack or, failing that, the scalar CSV."""
    params = TankParams()
    if cfg.rain_stack:
        stack = [read_ascii_grid(p) for p in cfg.rain_stack]
        swi = max_swi_raster(stack, cfg.rain_interval_min / 60.0, params)
        on_grid = resample_nearest(swi, coarse.cellsize, coarse.extent)
    elif "rain_csv" in cfg.paths:
        series = read_rain_csv(cfg.paths["rain_csv"])
        bounds, smax = swi_series(series, params)
        on_grid = coarse.with_values(np.full(coarse.shape, smax), nodata_mask=coarse.nodata_mask)
        if write:
            path = os.path.join(out, "swi_series.csv")
            t = 0.0
            times = []
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time_h", "swi_mm"])
                for (dur, _), s in zip(series, bounds):
                    t += dur
                    times.append(t)
                    w.writerow([repr(t), repr(s)])
            man.output(path)
            swi_series_figure(times, bounds, os.path.join(out, "swi_series.png"))
            man.output(os.path.join(out, "swi_series.png"))
    else:
        raise ConfigError("[paths] rain_stack", "either rain_stack or rain_csv is required")
    if write:
        _save(on_grid, out, "swi_max", man, "heat", label="SWI (mm)")
    return on_grid


def stage_susceptibility(cfg: RunConfig, out, man: Manifest, write=True) -> Raster:
    coarse = read_ascii_grid(cfg.paths["dem_coarse"])
    with man.stage("swi"):
        swi = stage_swi(cfg, coarse, out, man, write)
    with man.stage("terrain"):
        terr = terrain_derivatives(coarse)
    mask = read_ascii_grid(cfg.paths["geology_mask"]) if "geology_mask" in cfg.paths else None
    with man.stage("model"):
        if cfg.model_source == "file":
            model = read_model(cfg.paths["model_file"])
        elif cfg.model_source == "fit":
            labels = read_ascii_grid(cfg.paths["labels"])
            model = fit_from_rasters(swi, terr, labels, mask)
        else:
            model = REFERENCE_MODEL
    man.data["model"] = {"source": cfg.model_source, "gamma": list(model.gamma)}
    with man.stage("probability"):
        prob = predict_probability(swi, terr, model, mask)
    if write:
        write_model(model, os.path.join(out, "model.txt"))
        man.output("model.txt")
        _save(terr.slope, out, "slope", man, "gray", label="deg")
        _save(terr.catchment_area, out, "catchment_area", man, "gray", label="m2")
        _save(terr.curvature_plan, out, "curvature_plan", man, "diverging", symmetric=True)
        _save(terr.curvature_tangential, out, "curvature_tangential", man, "diverging", symmetric=True)
        _save(prob, out, "probability", man, "heat", label="source probability")
        man.data["expected_sources"] = float(np.nansum(prob.masked()))
    return prob


def _seed(args, cfg):
    return cfg.base_seed if args.seed is None else args.seed


def stage_sources(cfg: RunConfig, args, out, man: Manifest, prefer_file=True):
    """Source realization: the configured CSV if it exists, otherwise a fresh draw."""
    coarse = read_ascii_grid(cfg.paths["dem_coarse"])
    path = cfg.paths.get("realization")
    if prefer_file and path and os.path.isfile(path) and args.seed is None:
        real = read_realization(path)
        man.data["seeds"]["realization"] = f"file:{os.path.basename(path)}"
        return real, coarse
    prob = stage_susceptibility(cfg, out, man, write=False)
    seed = _seed(args, cfg)
    with man.stage("sample"):
        real = sample_sources(prob, seed)
    man.data["seeds"]["sample"] = seed
    return real, prob


def _ledger_text(ledger) -> str:
    return "".join(f"{k}={v!r}\n" for k, v in ledger.as_dict().items())


# ---------------------------------------------------------------------------
# commands


def cmd_swi(cfg, args, out, man):
    coarse = read_ascii_grid(cfg.paths["dem_coarse"])
    with man.stage("swi"):
        stage_swi(cfg, coarse, out, man)


def cmd_susceptibility(cfg, args, out, man):
    stage_susceptibility(cfg, out, man)


def cmd_sample(cfg, args, out, man):
    prob = stage_susceptibility(cfg, out, man, write=False)
    seed = _seed(args, cfg)
    with man.stage("sample"):
        real = sample_sources(prob, seed)
    man.data["seeds"]["sample"] = seed
    man.data["n_sources"] = len(real.cells)
    path = os.path.join(out, "realization.csv")
    write_realization(real, prob, path)
    man.output(path)


def _snapshot_callback(cfg, out, man):
    if not cfg.snapshot_interval > 0:
        return None
    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    nxt = [cfg.snapshot_interval]
    dem_holder = {}

    def cb(state, dt):
        if state.t + 1e-9 >= nxt[0]:
            tmpl = dem_holder["dem"]
            path = os.path.join(snap_dir, f"h_{int(round(state.t)):06d}s.asc")
            write_ascii_grid(tmpl.with_values(state.h.copy()), path)
            nxt[0] += cfg.snapshot_interval
    return cb, dem_holder


def cmd_simulate(cfg, args, out, man):
    real, coarse = stage_sources(cfg, args, out, man)
    dem = read_ascii_grid(cfg.paths["dem_fine"])
    forcing = SourceForcing.from_realization(real, coarse, dem)
    man.data["n_sources"] = len(real.cells)
    man.data["material"] = cfg.material.as_dict()
    snap = _snapshot_callback(cfg, out, man)
    cb = None
    if snap is not None:
        cb, holder = snap
        holder["dem"] = dem
    with man.stage("simulate"):
        res = run(dem, forcing, cfg.material, cfg.duration, callback=cb)
    man.data["simulation"] = {"runtime_s": res.runtime, "steps": res.steps, "duration_s": cfg.duration,
                              "max_cfl_ratio": res.max_cfl_ratio}
    write_realization(real, coarse, os.path.join(out, "realization.csv"))
    man.output("realization.csv")
    _save(res.delta_z, out, "dz", man, "diverging", symmetric=True, label="bed change (m)")
    path = os.path.join(out, "ledger.txt")
    with open(path, "w") as fh:
        fh.write(_ledger_text(res.ledger))
    man.output(path)


def cmd_calibrate(cfg, args, out, man):
    observed = read_ascii_grid(cfg.path("observed_dz"))
    real, coarse = stage_sources(cfg, args, out, man)
    dem = read_ascii_grid(cfg.paths["dem_fine"])
    forcing = SourceForcing.from_realization(real, coarse, dem)
    man.data["n_sources"] = len(real.cells)
    man.data["n_candidates"] = len(cfg.sweep_candidates)
    man.data["material_base"] = cfg.material.as_dict()
    with man.stage("sweep"):
        report = parameter_sweep(dem, forcing, cfg.sweep_candidates, observed, cfg.epsilon, cfg.material,
                                 cfg.duration, args.workers)
    path = os.path.join(out, "sweep.csv")
    write_sweep_csv(report, path)
    man.output(path)
    scatter = scatter_data(report)
    spath = os.path.join(out, "sweep_scatter.csv")
    with open(spath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value", "f1_ave"])
        for k, pts in scatter.items():
            for v, f in pts:
                w.writerow([k, repr(v), repr(f)])
    man.output(spath)
    if scatter:
        sweep_figure(scatter, os.path.join(out, "sweep.png"))
        man.output("sweep.png")
    best = report.best
    man.data["best"] = {"index": best.index, "params": best.params, "f1_ave": best.f1_ave}
    man.data["failed_cases"] = sum(1 for r in report.rows if r.status != "ok")


def cmd_ensemble(cfg, args, out, man):
    prob = stage_susceptibility(cfg, out, man, write=False)
    dem = read_ascii_grid(cfg.paths["dem_fine"])
    base = _seed(args, cfg)
    man.data["seeds"]["base_seed"] = base
    man.data["material"] = cfg.material.as_dict()
    with man.stage("ensemble"):
        cases = run_ensemble(dem, prob, cfg.n_cases, base, cfg.material, cfg.duration, args.workers)
    with man.stage("statistics"):
        stats = ensemble_stats(cases, cfg.epsilon)
    path = os.path.join(out, "cases.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "seed", "status", "steps", "runtime_s"])
        for k, c in enumerate(cases):
            w.writerow([k, c.seed, c.status, c.steps, repr(c.runtime)])
    man.output(path)
    man.data["cases"] = [{"seed": c.seed, "status": c.status, "runtime_s": c.runtime} for c in cases]
    man.data["n_failed"] = stats.n_failed
    _save(stats.mean_dz, out, "mean_dz", man, "diverging", symmetric=True, label="mean bed change (m)")
    _save(stats.rel_std_log10, out, "rel_std_log10", man, "heat", label="log10 relative std")
    _save(stats.hit_frequency, out, "hit_frequency", man, "heat", (0.0, 1.0), label="hit frequency")
    if stats.n_failed:
        print(f"warning: {stats.n_failed} of {len(cases)} cases failed and were excluded", file=sys.stderr)


def cmd_evaluate(cfg, args, out, man):
    observed = read_ascii_grid(cfg.path("observed_dz"))
    sim_path = cfg.paths.get("simulated_dz") or os.path.join(out, "dz.asc")
    if not os.path.isfile(sim_path):
        raise ConfigError("[paths] simulated_dz", f"file not found: {sim_path} (run simulate first)")
    simulated = read_ascii_grid(sim_path)
    require_same_grid(simulated, observed)
    pred, obs = classify_change(simulated, cfg.epsilon), classify_change(observed, cfg.epsilon)
    counts = [confusion_counts(pred, obs, c) for c in CLASSES]
    scores = f1_metrics(counts)
    path = os.path.join(out, "evaluation.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])
        for c, k, s in zip(CLASSES, counts, scores.per_class):
            w.writerow([c.name.lower(), k.tp, k.fp, k.fn, k.tn, repr(s.precision), repr(s.recall), repr(s.f1)])
        w.writerow(["f1_ave", "", "", "", "", "", "", repr(scores.f1_ave)])
    man.output(path)
    man.data["f1_ave"] = scores.f1_ave
    _save(pred.to_raster(), out, "classes_simulated", man, "diverging", (-1.0, 1.0))
    _save(obs.to_raster(), out, "classes_observed", man, "diverging", (-1.0, 1.0))


def cmd_render(cfg, args, out, man):
    if args.input:
        targets = [args.input]
    else:
        targets = sorted(os.path.join(out, f) for f in os.listdir(out) if f.endswith(".asc"))
    for path in targets:
        r = read_ascii_grid(path)
        name = os.path.splitext(os.path.basename(path))[0]
        ramp = args.ramp or ("diverging" if "dz" in name or "curvature" in name else "heat")
        vr = tuple(args.range) if args.range else _range(r.masked(), symmetric=ramp == "diverging")
        if not vr[0] < vr[1]:
            raise DomainError(f"--range needs lo < hi, got {vr}")
        base = os.path.join(out, name)
        render_image(r, ramp, vr, base + ".ppm")
        raster_figure(r, base + ".png", name, ramp, vr)
        man.output(base + ".ppm")
        man.output(base + ".png")


HANDLERS = {
    "swi": cmd_swi,
    "susceptibility": cmd_susceptibility,
    "sample": cmd_sample,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (INI)")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker processes for case-level fan-out (default: all cores)")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
    p = argparse.ArgumentParser(prog="dfhazard", description="Rainfall-driven debris-flow hazard probability.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)
    helps = {
        "swi": "maximum soil water index from rainfall",
        "susceptibility": "terrain covariates and source probability",
        "sample": "draw one source realization",
        "simulate": "run one debris-flow simulation",
        "calibrate": "parameter sweep scored against observed change",
        "ensemble": "Monte Carlo over source realizations",
        "evaluate": "compare simulated and observed change",
        "render": "render .asc rasters as PPM and PNG",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "render":
            sp.add_argument("--input", help="single .asc to render (default: every .asc in the output directory)")
            sp.add_argument("--ramp", choices=("gray", "diverging", "heat", "terrain"))
            sp.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    if args.workers < 1:
        parser.print_usage(sys.stderr)
        print("dfhazard: error: --workers must be at least 1", file=sys.stderr)
        return 2
    man = Manifest(args.command, argv)
    man.data["workers"] = args.workers
    out = args.out or "out"
    status = 0
    try:
        cfg = load_config(args.config)
        man.data["config"] = cfg.source
        man.data["config_sha256"] = cfg.digest
        out = args.out or cfg.output_dir
        os.makedirs(out, exist_ok=True)
        man.data["output_dir"] = os.path.abspath(out)
        man.data["seeds"]["base_seed"] = cfg.base_seed
        man.data["parameters"] = cfg.material.as_dict()
        HANDLERS[args.command](cfg, args, out, man)
        man.data["status"] = "ok"
    except (DomainError, NumericalBlowUpError, OSError) as exc:
        status = 1
        man.data["status"] = "error"
        man.data["error"] = f"{type(exc).__name__}: {exc}"
        print(f"dfhazard: error: {exc}", file=sys.stderr)
    finally:
        try:
            man.write(out)
        except OSError as exc:
            print(f"dfhazard: could not write manifest: {exc}", file=sys.stderr)
            status = status or 1
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
