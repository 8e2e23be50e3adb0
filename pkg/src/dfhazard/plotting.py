"""Matplotlib figures written next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .raster import Raster  # noqa: E402

_CMAPS = {"gray": "gray", "diverging": "RdBu_r", "heat": "inferno", "terrain": "terrain"}


def raster_figure(raster: Raster, path, title: str = "", ramp: str = "heat", value_range=None,
                  label: str = "") -> None:
    """Map of ``raster`` in map coordinates with a colour bar; nodata is left blank."""
    data = np.ma.masked_invalid(raster.masked())
    x0, y0, x1, y1 = raster.extent
    fig, ax = plt.subplots(figsize=(6, 5))
    kw = {}
    if value_range is not None:
        kw = {"vmin": value_range[0], "vmax": value_range[1]}
    im = ax.imshow(data, extent=(x0, x1, y0, y1), cmap=_CMAPS.get(ramp, ramp), origin="upper",
                   interpolation="nearest", **kw)
    fig.colorbar(im, ax=ax, label=label)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def sweep_figure(scatter: dict, path) -> None:
    """F1_ave against each swept parameter, one panel per parameter."""
    keys = list(scatter)
    n = max(len(keys), 1)
    ncol = min(n, 3)
    nrow = int(np.ceil(n / ncol))
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3 * nrow), squeeze=False)
    for ax, k in zip(axes.ravel(), keys):
        pts = np.asarray(scatter[k], dtype=float)
        ax.scatter(pts[:, 0], pts[:, 1], s=12)
        vals = np.unique(pts[:, 0])
        if vals.size > 1 and vals.max() / max(vals.min(), 1e-12) > 50:
            ax.set_xscale("log")
        ax.set_xlabel(k)
        ax.set_ylabel("F1_ave")
        ax.set_ylim(-0.05, 1.05)
    for ax in axes.ravel()[len(keys):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def swi_series_figure(times, swi, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(times, swi)
    ax.set_xlabel("time (h)")
    ax.set_ylabel("SWI (mm)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
