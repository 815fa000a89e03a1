"""Render field and recovery CSVs to image files.

Concentration is physically a fraction, so every colour scale is pinned to
[0, 1]: frames from different times, degrees, or meshes stay comparable.
Samples outside that range are clipped for colouring only, with a warning;
the reader's arrays are read-only and are never modified. Duplicate sample
coordinates (cell-boundary traces appear once per adjacent cell) are merged
by averaging before triangulation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.tri import Triangulation

from .readers import FieldSamples, read_field_csv, read_recovery_csv

LEVELS = np.linspace(0.0, 1.0, 21)
CMAP = "viridis"
DPI = 150


@dataclass(frozen=True)
class PlotJob:
    """One rendering task: input CSVs, output image, optional title."""

    inputs: tuple[Path, ...]
    out: Path
    title: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "out", Path(self.out))


def merge_duplicate_points(samples: FieldSamples):
    """Average values sharing exact coordinates; order-independent."""
    pts = np.stack([samples.x, samples.y], axis=1)
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    sums = np.zeros(len(uniq))
    counts = np.zeros(len(uniq))
    np.add.at(sums, inverse, samples.value)
    np.add.at(counts, inverse, 1.0)
    return uniq[:, 0], uniq[:, 1], sums / counts


def clipped_for_colour(values: np.ndarray, source) -> np.ndarray:
    outside = int(((values < 0.0) | (values > 1.0)).sum())
    if outside:
        warnings.warn(
            f"{source}: {outside} of {values.size} samples outside [0, 1] "
            f"(range {values.min():.4g}..{values.max():.4g}); clipped for colouring",
            stacklevel=2,
        )
    return np.clip(values, 0.0, 1.0)


def _single_input(job: PlotJob) -> Path:
    if len(job.inputs) != 1:
        raise ValueError(f"this plot kind takes exactly one input CSV, got {len(job.inputs)}")
    return job.inputs[0]


def render_contour(job: PlotJob) -> Path:
    path = _single_input(job)
    x, y, value = merge_duplicate_points(read_field_csv(path))
    value = clipped_for_colour(value, path)
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    try:
        filled = ax.tricontourf(Triangulation(x, y), value, levels=LEVELS, cmap=CMAP)
        fig.colorbar(filled, ax=ax, label="concentration")
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        if job.title:
            ax.set_title(job.title)
        fig.savefig(job.out, dpi=DPI)
    finally:
        plt.close(fig)
    return job.out


def render_surface(job: PlotJob) -> Path:
    path = _single_input(job)
    x, y, value = merge_duplicate_points(read_field_csv(path))
    value = clipped_for_colour(value, path)
    fig = plt.figure(figsize=(7.0, 5.5))
    try:
        ax = fig.add_subplot(projection="3d")
        surf = ax.plot_trisurf(
            Triangulation(x, y), value, cmap=CMAP, vmin=0.0, vmax=1.0, linewidth=0.1
        )
        ax.set_zlim(0.0, 1.0)
        fig.colorbar(surf, ax=ax, shrink=0.6, label="concentration")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        if job.title:
            ax.set_title(job.title)
        fig.savefig(job.out, dpi=DPI)
    finally:
        plt.close(fig)
    return job.out


def render_recovery_curves(job: PlotJob) -> Path:
    if not job.inputs:
        raise ValueError("recovery plot needs at least one input CSV")
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    try:
        for path in job.inputs:
            t, frac = read_recovery_csv(path)
            ax.plot(t, 100.0 * frac, label=path.stem)
        ax.set_xlabel("time (days)")
        ax.set_ylabel("recovery (% of pore volume)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        if job.title:
            ax.set_title(job.title)
        fig.savefig(job.out, dpi=DPI)
    finally:
        plt.close(fig)
    return job.out


RENDERERS = {
    "contour": render_contour,
    "surface": render_surface,
    "recovery": render_recovery_curves,
}
