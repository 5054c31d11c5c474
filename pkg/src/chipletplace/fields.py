"""Uniform scalar fields over the interposer and field-level metrics.

A FieldGrid is cell-centered: value[iy, ix] sits at ((ix+0.5)*dx, (iy+0.5)*dy)
with row 0 at y-min.  Units are whatever the producer documents (W/m^2 for
power maps, degC for temperature, um for displacement).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DesignInstance, InterposerSpec, PlacementState, rotated_dims


class DegenerateField(ValueError):
    """Statistic undefined for this field (e.g. Pearson of a constant field)."""


@dataclass
class FieldGrid:
    nx: int
    ny: int
    dx: float  # mm
    dy: float
    values: np.ndarray  # shape (ny, nx)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.ny, self.nx):
            raise ValueError(f"values shape {self.values.shape} != (ny={self.ny}, nx={self.nx})")

    @classmethod
    def zeros(cls, interposer: InterposerSpec, resolution: int | None = None) -> "FieldGrid":
        m = resolution or interposer.grid_resolution
        return cls(m, m, interposer.width / m, interposer.height / m, np.zeros((m, m)))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dy
        return xs, ys

    def copy_with(self, values: np.ndarray) -> "FieldGrid":
        return FieldGrid(self.nx, self.ny, self.dx, self.dy, values)


def warpage_metric(field: FieldGrid) -> float:
    """Peak-to-valley deviation of a displacement field; always >= 0."""
    if field.values.size == 0:
        raise ValueError("warpage metric of an empty field")
    return float(field.values.max() - field.values.min())


def detrend_plane(field: FieldGrid) -> FieldGrid:
    """Subtract the least-squares best-fit plane (rigid-motion elimination)."""
    xs, ys = field.cell_centers()
    X, Y = np.meshgrid(xs, ys)
    A = np.stack([np.ones(field.values.size), X.ravel(), Y.ravel()], axis=1)
    coef, *_ = np.linalg.lstsq(A, field.values.ravel(), rcond=None)
    plane = (A @ coef).reshape(field.values.shape)
    return field.copy_with(field.values - plane)


def field_mae(a: FieldGrid, b: FieldGrid) -> float:
    if a.values.shape != b.values.shape:
        raise ValueError("field shapes differ")
    return float(np.mean(np.abs(a.values - b.values)))


def field_pearson(a: FieldGrid, b: FieldGrid) -> float:
    if a.values.shape != b.values.shape:
        raise ValueError("field shapes differ")
    av = a.values.ravel() - a.values.mean()
    bv = b.values.ravel() - b.values.mean()
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise DegenerateField("Pearson correlation of a zero-variance field")
    return float(np.dot(av, bv) / (na * nb))


def rasterize_power(design: DesignInstance, placement: PlacementState,
                    resolution: int | None = None) -> FieldGrid:
    """Areal power density map (W/m^2) with exact coverage fractions.

    Each cell accumulates chiplet power density weighted by the covered cell
    fraction, so the integrated power matches sum(P_i * area_i) exactly up to
    boundary clipping.
    """
    grid = FieldGrid.zeros(design.interposer, resolution)
    thetas = placement.snapped_angles()
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    for i, c in enumerate(design.chiplets):
        w, h = rotated_dims(c, thetas[i])
        x0, x1 = placement.x[i] - w / 2, placement.x[i] + w / 2
        y0, y1 = placement.y[i] - h / 2, placement.y[i] + h / 2
        ix = np.arange(nx)
        iy = np.arange(ny)
        # per-axis overlap of [x0, x1] with each cell, normalized to cell size
        ox = np.clip(np.minimum(x1, (ix + 1) * dx) - np.maximum(x0, ix * dx), 0.0, dx) / dx
        oy = np.clip(np.minimum(y1, (iy + 1) * dy) - np.maximum(y0, iy * dy), 0.0, dy) / dy
        grid.values += c.power_density * np.outer(oy, ox)
    return grid


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def field_to_csv(field: FieldGrid, path) -> None:
    """ny rows x nx columns, row 0 = y-min, full repr precision."""
    with open(path, "w") as fh:
        for row in field.values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def field_from_csv(path) -> FieldGrid:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    values = np.array(rows, dtype=float)
    ny, nx = values.shape
    return FieldGrid(nx, ny, 1.0, 1.0, values)


def field_to_svg(field: FieldGrid, path, title: str = "") -> None:
    """Grayscale heatmap with min/max annotations; deterministic output."""
    vmin = float(field.values.min())
    vmax = float(field.values.max())
    span = vmax - vmin
    cell = 8
    wpx, hpx = field.nx * cell, field.ny * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{wpx}" height="{hpx + 20}" '
        f'viewBox="0 0 {wpx} {hpx + 20}">'
    ]
    for iy in range(field.ny):
        for ix in range(field.nx):
            v = field.values[iy, ix]
            g = 0 if span == 0 else int(round(255 * (v - vmin) / span))
            # row 0 is y-min, drawn at the bottom
            ypix = (field.ny - 1 - iy) * cell
            parts.append(
                f'<rect x="{ix * cell}" y="{ypix}" width="{cell}" height="{cell}" '
                f'fill="rgb({g},{g},{g})"/>'
            )
    label = f"{title} min={vmin:.6g} max={vmax:.6g}".strip()
    parts.append(f'<text x="2" y="{hpx + 14}" font-size="10" fill="black">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
