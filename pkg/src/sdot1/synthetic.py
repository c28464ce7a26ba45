"""Synthetic test densities: truncated Gaussians, mixtures, uniform squares."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .measures import DensityGrid, DiscreteMeasure, normalize


def _pixel_edges(bounds, nx, ny):
    x0, y0, x1, y1 = bounds
    xe = np.linspace(x0, x1, nx + 1)
    ye = np.linspace(y1, y0, ny + 1)  # top row first
    return xe, ye


def gaussian_grid(mean, variance: float, bounds, nx: int, ny: int | None = None,
                  total_mass: float = 1.0) -> DensityGrid:
    """Isotropic normal N(mean, variance*I) truncated to ``bounds``.

    Pixel values are exact pixel averages of the density (products of
    normal CDF differences), rescaled to ``total_mass``.
    """
    ny = nx if ny is None else ny
    xe, ye = _pixel_edges(bounds, nx, ny)
    sd = np.sqrt(variance)
    px = np.diff(ndtr((xe - mean[0]) / sd))
    py = -np.diff(ndtr((ye - mean[1]) / sd))
    values = np.outer(py, px)
    grid = DensityGrid(*bounds, values / (values.sum() * ((bounds[2] - bounds[0]) / nx) ** 2))
    return normalize(grid, total_mass)


def mixture_grid(means, variances, weights, bounds, nx: int, ny: int | None = None,
                 floor: float = 0.0, total_mass: float = 1.0) -> DensityGrid:
    """Weighted sum of truncated isotropic Gaussians plus a constant floor."""
    ny = nx if ny is None else ny
    values = np.zeros((ny, nx))
    for m, v, wt in zip(means, variances, weights):
        values += wt * gaussian_grid(m, v, bounds, nx, ny).values
    values += floor * values.mean()
    return normalize(DensityGrid(*bounds, values), total_mass)


def random_mixture_grid(seed, bounds, nx: int, ny: int | None = None, components: int = 5,
                        floor: float = 0.05) -> DensityGrid:
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = bounds
    span = min(x1 - x0, y1 - y0)
    means = np.c_[rng.uniform(x0, x1, components), rng.uniform(y0, y1, components)]
    variances = (span * rng.uniform(0.05, 0.25, components)) ** 2
    weights = rng.uniform(0.5, 1.5, components)
    return mixture_grid(means, variances, weights, bounds, nx, ny, floor=floor)


def uniform_grid(bounds, nx: int, ny: int | None = None, total_mass: float = 1.0) -> DensityGrid:
    ny = nx if ny is None else ny
    return normalize(DensityGrid(*bounds, np.ones((ny, nx))), total_mass)


def sample_points(grid: DensityGrid, n: int, seed) -> np.ndarray:
    """Draw ``n`` points from the piecewise-constant density."""
    rng = np.random.default_rng(seed)
    p = grid.pixel_masses.ravel()
    idx = rng.choice(p.size, size=n, p=p / p.sum())
    r, c = np.divmod(idx, grid.nx)
    u = rng.random((n, 2))
    x = grid.x_min + (c + u[:, 0]) * grid.side
    y = grid.y_max - (r + u[:, 1]) * grid.side
    return np.c_[x, y]


def uniform_sample_measure(points) -> DiscreteMeasure:
    """Empirical measure with mass 1/n on each point."""
    points = np.asarray(points, dtype=np.float64)
    return DiscreteMeasure(points, np.full(len(points), 1.0 / len(points)))
