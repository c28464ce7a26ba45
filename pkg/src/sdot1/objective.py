"""The convex dual objective, its gradient and the transport cost.

For weights w the objective is

    phi(w) = sum_j ( -nu_j w_j - int_{cell_j} (|x - y_j| - w_j) dmu )
           = -cost(w) + sum_j w_j (mu(cell_j) - nu_j)

and its gradient is ``mu(cell_j) - nu_j``.  Both are evaluated on the
subpixel rasterization, where phi is convex and piecewise linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Rasterization, SiteSet, Subpixels, rasterize
from .measures import DensityGrid, DiscreteMeasure


@dataclass
class ObjectiveValue:
    phi: float
    gradient: np.ndarray
    cell_mass: np.ndarray
    cost: float
    raster: Rasterization | None = None


class Objective:
    """phi for a fixed (grid, nu, k); caches the subpixel masses."""

    def __init__(self, grid: DensityGrid, nu: DiscreteMeasure, k: int, warm_start: bool = True):
        self.grid = grid
        self.nu = nu
        self.k = int(k)
        self.warm_start = warm_start
        self.subpixels = Subpixels(grid, self.k)
        self.n_evaluations = 0

    def __call__(self, w) -> ObjectiveValue:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.nu.n,):
            raise ValueError(f"weight vector has shape {w.shape}, expected ({self.nu.n},)")
        self.n_evaluations += 1
        raster = rasterize(self.grid, SiteSet(self.nu.points, w), self.k,
                           warm_start=self.warm_start, subpixels=self.subpixels)
        return from_raster(raster, self.nu, w)


def from_raster(raster: Rasterization, nu: DiscreteMeasure, w) -> ObjectiveValue:
    w = np.asarray(w, dtype=np.float64)
    gradient = raster.cell_mass - nu.masses
    cost = math.fsum(raster.cell_cost)
    phi = math.fsum(w * gradient) - cost
    return ObjectiveValue(phi, gradient, raster.cell_mass, cost, raster)


def evaluate(grid: DensityGrid, nu: DiscreteMeasure, w, k: int) -> ObjectiveValue:
    return Objective(grid, nu, k)(w)


def mistransported_mass(v: ObjectiveValue) -> float:
    """Half the l1 norm of the gradient: mass sent to the wrong site."""
    return 0.5 * math.fsum(np.abs(v.gradient))


def transport_cost(v: ObjectiveValue) -> float:
    """Cost of the current partition; the W1 estimate once w has converged."""
    return v.cost
