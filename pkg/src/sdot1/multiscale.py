"""Coarse-to-fine solving and quantization by weighted K-means.

The target measure is coarsened repeatedly by weighted Lloyd iterations,
each cluster becoming one atom carrying the summed mass of its members.
The coarsest problem is solved from zero weights; every finer level starts
from the parent cluster's optimal weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import DEFAULT_MAX_K, subpixel_count
from .measures import DensityGrid, DiscreteMeasure, InputError
from .optimizer import SolveReport, SolverConfig, minimize

MAX_LLOYD_ITERATIONS = 100


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _init_plusplus(points, weights, K, rng):
    """Weighted k-means++ seeding: next center drawn with prob ~ mass * D^2."""
    chosen = [int(rng.choice(len(points), p=weights / weights.sum()))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        p = weights * d2
        if p.sum() <= 0:
            rest = np.setdiff1d(np.arange(len(points)), chosen)
            chosen.append(int(rest[0]))
        else:
            chosen.append(int(rng.choice(len(points), p=p / p.sum())))
        d2 = np.minimum(d2, np.sum((points - points[chosen[-1]]) ** 2, axis=1))
    return np.array(chosen)


def _init_by_mass(points, weights, K, rng):
    return rng.choice(len(points), size=K, replace=False, p=weights / weights.sum())


def _centroids(points, weights, labels, K):
    mass = np.bincount(labels, weights=weights, minlength=K)
    cx = np.bincount(labels, weights=weights * points[:, 0], minlength=K)
    cy = np.bincount(labels, weights=weights * points[:, 1], minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        centers = np.c_[cx / mass, cy / mass]
    # singleton clusters keep their point exactly
    counts = np.bincount(labels, minlength=K)
    single = np.flatnonzero(counts == 1)
    if len(single):
        owner = np.empty(K, dtype=np.int64)
        owner[labels] = np.arange(len(labels))
        centers[single] = points[owner[single]]
    return centers, mass, counts


def weighted_kmeans(points, weights, K: int, seed=0, init: str = "plusplus"):
    """Weighted Lloyd iterations; returns (centers, masses, labels).

    Stops when the assignment no longer changes or after 100 iterations.
    An empty cluster is reseeded at the point farthest from its center.
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    rng = _rng(seed)
    start = (_init_plusplus if init == "plusplus" else _init_by_mass)(points, weights, K, rng)
    centers = points[start].copy()
    labels = None
    for _ in range(MAX_LLOYD_ITERATIONS):
        dist, new = cKDTree(centers).query(points)
        new = new.astype(np.int64)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers, mass, counts = _centroids(points, weights, labels, K)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            far = np.argsort(-dist, kind="stable")
            for e, i in zip(empty, far):
                centers[e] = points[i]
    # every cluster nonempty and centers consistent with final labels
    _, labels = cKDTree(centers).query(points)
    labels = labels.astype(np.int64)
    centers, mass, counts = _centroids(points, weights, labels, K)
    while np.any(counts == 0):
        d = np.linalg.norm(points - centers[labels], axis=1)
        movable = np.flatnonzero(counts[labels] > 1)
        i = movable[np.argmax(d[movable])]
        labels[i] = np.flatnonzero(counts == 0)[0]
        centers, mass, counts = _centroids(points, weights, labels, K)
    return centers, mass, labels


def kmeans_cost(points, weights, centers, labels) -> float:
    return float(np.sum(weights * np.sum((points - centers[labels]) ** 2, axis=1)))


def lloyd_coarsen(nu: DiscreteMeasure, K: int, seed=0):
    """Cluster ``nu`` into K atoms; returns (coarse measure, parent_map)."""
    if not 1 <= K <= nu.n:
        raise ValueError(f"K must lie in [1, {nu.n}], got {K}")
    centers, mass, labels = weighted_kmeans(nu.points, nu.masses, K, seed)
    return DiscreteMeasure(centers, mass), labels


@dataclass
class Hierarchy:
    levels: list  # DiscreteMeasure, level 0 = original
    parent_maps: list  # parent_maps[l-1] maps level l-1 points to level l clusters

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def to_dict(self) -> dict:
        return {
            "level_sizes": [lv.n for lv in self.levels],
            "parent_maps": [[int(i) for i in pm] for pm in self.parent_maps],
        }


def build_hierarchy(nu: DiscreteMeasure, ratio: int = 5, min_size: int = 20, seed=0) -> Hierarchy:
    if ratio < 2:
        raise ValueError("coarsening ratio must be >= 2")
    rng = _rng(seed)
    levels, maps = [nu], []
    while levels[-1].n > min_size:
        K = math.ceil(levels[-1].n / ratio)
        coarse, parent = lloyd_coarsen(levels[-1], K, rng)
        levels.append(coarse)
        maps.append(parent)
    return Hierarchy(levels, maps)


def propagate_weights(w_coarse, parent_map) -> np.ndarray:
    w_coarse = np.asarray(w_coarse, dtype=np.float64)
    parent_map = np.asarray(parent_map)
    if parent_map.size and (parent_map.min() < 0 or parent_map.max() >= len(w_coarse)):
        raise ValueError("parent map refers to a missing coarse atom")
    return w_coarse[parent_map]


def solve_multiscale(grid: DensityGrid, nu: DiscreteMeasure, cfg: SolverConfig | None = None,
                     ratio: int = 5, min_size: int = 20, seed=0, max_k: int = DEFAULT_MAX_K,
                     k: int | None = None, callback=None, log_level_w1: bool = False,
                     hierarchy: Hierarchy | None = None) -> SolveReport:
    """Solve coarse-to-fine; returns the finest-level report.

    ``report.levels`` lists per-level statistics, coarsest first, and
    ``report.n_evaluations`` counts objective evaluations over all levels.
    An explicit ``k`` overrides the per-level subpixel factor.
    """
    cfg = cfg or SolverConfig()
    h = hierarchy or build_hierarchy(nu, ratio, min_size, seed)
    w = None
    stats = []
    total_evals = 0
    report = None
    for lvl in range(h.depth, -1, -1):
        measure = h.levels[lvl]
        if w is not None:
            w = propagate_weights(w, h.parent_maps[lvl])
        kk = subpixel_count(measure.n, grid, max_k) if k is None else k
        cb = None if callback is None else (lambda rec, lvl=lvl: callback({"level": lvl, **rec}))
        report = minimize(grid, measure, w, cfg, k=kk, callback=cb)
        total_evals += report.n_evaluations
        w = report.final_w
        entry = {"level": lvl, "n": measure.n, "k": kk, "iterations": report.iterations,
                 "evaluations": report.n_evaluations, "converged": report.converged,
                 "mistransported_mass": report.final_mistransported_mass,
                 "w1": report.w1_cost}
        if log_level_w1 and lvl > 0:
            from .oracle import DiscreteTransportProblem, discrete_w1
            fine = h.levels[lvl - 1]
            entry["w1_to_finer"] = discrete_w1(DiscreteTransportProblem(
                fine.points, fine.masses, measure.points, measure.masses))[0]
        stats.append(entry)
    report.levels = stats
    report.n_evaluations = total_evals
    return report


def quantize(grid: DensityGrid, n: int, seed=0, return_assignment: bool = False):
    """Weighted K-means quantization of a density to ``n`` atoms.

    Pixel centers weighted by pixel mass are clustered; initial centers are
    drawn without replacement with probability proportional to mass.  With
    ``return_assignment`` the pixel -> atom map is returned too (NONE = -1
    for zero-mass pixels).
    """
    masses = grid.pixel_masses
    X, Y = grid.pixel_centers()
    positive = masses.ravel() > 0
    if n < 1:
        raise InputError("n must be >= 1")
    if positive.sum() < n:
        raise InputError(f"only {int(positive.sum())} positive pixels for {n} atoms")
    pts = np.c_[X.ravel()[positive], Y.ravel()[positive]]
    wts = masses.ravel()[positive]
    centers, mass, labels = weighted_kmeans(pts, wts, n, seed, init="mass")
    # total mass preserved exactly up to summation order
    nu = DiscreteMeasure(centers, mass)
    if not return_assignment:
        return nu
    assign = np.full(grid.values.size, -1, dtype=np.int64)
    assign[positive] = labels
    return nu, assign.reshape(grid.values.shape)
