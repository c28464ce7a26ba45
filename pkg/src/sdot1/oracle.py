"""Exact discrete transport by linear programming, for validation.

Solves the transportation LP with HiGHS and checks the answer against its
own dual certificate (marginal feasibility, dual feasibility of reduced
costs, complementary slackness) before returning it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .measures import DiscreteMeasure

MAX_VARIABLES = 10**7
_LP_TOL = 1e-10


@dataclass(frozen=True)
class DiscreteTransportProblem:
    source_points: np.ndarray
    source_masses: np.ndarray
    target_points: np.ndarray
    target_masses: np.ndarray

    def __post_init__(self):
        for name in ("source_points", "target_points"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float).reshape(-1, 2))
        for name in ("source_masses", "target_masses"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float).reshape(-1))
        if np.any(self.source_masses <= 0) or np.any(self.target_masses <= 0):
            raise ValueError("masses must be positive")
        a, b = math.fsum(self.source_masses), math.fsum(self.target_masses)
        if abs(a - b) > 1e-9 * max(a, b):
            raise ValueError(f"unbalanced problem: {a!r} vs {b!r}")

    @classmethod
    def between(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "DiscreteTransportProblem":
        return cls(mu.points, mu.masses, nu.points, nu.masses)


@dataclass
class TransportSolution:
    cost: float
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray


def solve_transport(p: DiscreteTransportProblem, order: int = 1) -> TransportSolution:
    a, b = p.source_masses, p.target_masses
    m, n = len(a), len(b)
    if m * n > MAX_VARIABLES:
        raise ValueError(f"{m}x{n} problem exceeds the {MAX_VARIABLES} variable guard")
    C = cdist(p.source_points, p.target_points)
    if order != 1:
        C = C**order
    # row sums (source) then column sums (target); drop the redundant last column row
    rows = sparse.kron(sparse.eye(m), np.ones((1, n)))
    cols = sparse.kron(np.ones((1, m)), sparse.eye(n))
    A = sparse.vstack([rows, cols]).tocsr()
    rhs = np.concatenate([a, b])
    # rescale masses to O(1) so absolute LP tolerances are meaningful
    scale = math.fsum(a)
    res = linprog(C.ravel(), A_eq=A, b_eq=rhs / scale, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": _LP_TOL,
                           "dual_feasibility_tolerance": _LP_TOL})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(m, n), 0, None) * scale
    duals = res.eqlin.marginals
    u, v = duals[:m], duals[m:]
    _verify(plan, C, a, b, u, v)
    cost = math.fsum((plan * C).ravel())
    return TransportSolution(cost, plan, u, v)


def _verify(plan, C, a, b, u, v) -> None:
    total = a.sum()
    if np.max(np.abs(plan.sum(axis=1) - a)) > 1e-9 * total or \
            np.max(np.abs(plan.sum(axis=0) - b)) > 1e-9 * total:
        raise RuntimeError("transport plan violates the marginals")
    reduced = C - u[:, None] - v[None, :]
    scale = 1.0 + C.max()
    if reduced.min() < -1e-7 * scale:
        raise RuntimeError("dual certificate infeasible: negative reduced cost")
    if np.max(np.abs(reduced[plan > 1e-12 * total])) > 1e-7 * scale:
        raise RuntimeError("complementary slackness violated")


def discrete_w1(p: DiscreteTransportProblem):
    """Exact W1 between two discrete measures; returns (cost, plan)."""
    sol = solve_transport(p, 1)
    return sol.cost, sol.plan


def discrete_wp(p: DiscreteTransportProblem, order: int) -> float:
    sol = solve_transport(p, order)
    return sol.cost ** (1.0 / order)


def add_measures(a: DiscreteMeasure, b: DiscreteMeasure) -> DiscreteMeasure:
    """Sum of two discrete measures, merging coincident atoms."""
    pts = np.vstack([a.points, b.points])
    masses = np.concatenate([a.masses, b.masses])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    return DiscreteMeasure(uniq, np.bincount(inv.ravel(), weights=masses))


def scale_measure(a: DiscreteMeasure, c: float) -> DiscreteMeasure:
    return DiscreteMeasure(a.points, a.masses * c)


def check_additive_invariance(mu: DiscreteMeasure, nu: DiscreteMeasure, alpha: DiscreteMeasure | None):
    """Return (W1(mu, nu), W1(alpha+mu, alpha+nu), |gap|)."""
    base = discrete_w1(DiscreteTransportProblem.between(mu, nu))[0]
    if alpha is None:
        return base, base, 0.0
    shifted = discrete_w1(DiscreteTransportProblem.between(add_measures(alpha, mu),
                                                          add_measures(alpha, nu)))[0]
    return base, shifted, abs(shifted - base)


def check_scaling_law(mu: DiscreteMeasure, nu: DiscreteMeasure, c: float, p: int = 1):
    """Return (W_p(c mu, c nu), c^(1/p) W_p(mu, nu), |gap|)."""
    if p not in (1, 2):
        raise ValueError("only p = 1 and p = 2 are supported")
    if not c > 0:
        raise ValueError("c must be positive")
    lhs = discrete_wp(DiscreteTransportProblem.between(scale_measure(mu, c), scale_measure(nu, c)), p)
    rhs = c ** (1.0 / p) * discrete_wp(DiscreteTransportProblem.between(mu, nu), p)
    return lhs, rhs, abs(lhs - rhs)


def subpixel_atoms(grid, k: int) -> DiscreteMeasure:
    """The rasterized source measure as a discrete measure (positive subpixels only)."""
    from .geometry import Subpixels, subpixel_centers

    xs, ys = subpixel_centers(grid, k)
    X, Y = np.meshgrid(xs, ys)
    m = Subpixels(grid, k).masses
    keep = m > 0
    return DiscreteMeasure(np.c_[X[keep], Y[keep]], m[keep])
