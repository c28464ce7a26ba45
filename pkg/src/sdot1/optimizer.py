"""L-BFGS minimization of the dual objective with Armijo backtracking.

Only the sufficient-decrease condition is used in the line search: on the
rasterized measure phi is piecewise linear, and curvature conditions are
frequently unsatisfiable.  When no step along the quasi-Newton direction is
accepted, the memory is dropped and steepest descent is tried once before
giving up with ``termination_reason == "stalled"``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import DEFAULT_MAX_K, subpixel_count
from .measures import DensityGrid, DiscreteMeasure
from .objective import Objective, ObjectiveValue, mistransported_mass

CURVATURE_MIN = 1e-12


class SolverError(RuntimeError):
    """Raised when the objective becomes non-finite."""


@dataclass(frozen=True)
class SolverConfig:
    """Optimizer settings.

    ``epsilon`` is the stopping threshold on mistransported mass, expressed as
    a fraction of the total mass (for probability measures this is the
    mass itself).  ``initial_step`` scales the first steepest-descent step,
    whose length is ``initial_step * 0.1 * diameter`` in weight space.
    """

    epsilon: float = 0.05
    memory: int = 10
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_iterations: int = 1000
    max_line_search_steps: int = 40
    initial_step: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.armijo_c1 < 1:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.memory < 1 or self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise ValueError("memory, max_iterations and max_line_search_steps must be positive")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")


@dataclass
class SolveReport:
    final_w: np.ndarray
    iterations: int
    phi_history: list
    final_mistransported_mass: float
    w1_cost: float
    converged: bool
    termination_reason: str
    total_mass: float
    n_evaluations: int = 0
    k: int = 1
    cell_mass: np.ndarray | None = None
    final_value: ObjectiveValue | None = field(default=None, repr=False)
    levels: list = field(default_factory=list)

    @property
    def mistransported_fraction(self) -> float:
        return self.final_mistransported_mass / self.total_mass

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "termination_reason": self.termination_reason,
            "iterations": self.iterations,
            "evaluations": self.n_evaluations,
            "subpixel_factor": self.k,
            "w1": self.w1_cost,
            "mistransported_mass": self.final_mistransported_mass,
            "mistransported_fraction": self.mistransported_fraction,
            "total_mass": self.total_mass,
            "phi_history": [float(p) for p in self.phi_history],
            "weights": [float(v) for v in self.final_w],
            "cell_mass": [float(v) for v in self.cell_mass] if self.cell_mass is not None else None,
        }


def two_loop_direction(gradient, history) -> np.ndarray:
    """Return -H g for the L-BFGS inverse-Hessian estimate H.

    ``history`` holds (s, y) pairs, oldest first.  Pairs with s.y <= 1e-12
    are ignored.  The initial matrix is gamma*I with gamma = s.y / y.y from
    the newest usable pair.
    """
    q = np.array(gradient, dtype=np.float64)
    pairs = [(s, y, float(s @ y)) for s, y in history]
    pairs = [(s, y, 1.0 / sy) for s, y, sy in pairs if sy > CURVATURE_MIN]
    if not pairs:
        return -q
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize(grid: DensityGrid, nu: DiscreteMeasure, w0=None, cfg: SolverConfig | None = None,
             k: int | None = None, max_k: int = DEFAULT_MAX_K,
             callback: Callable[[dict], None] | None = None,
             objective: Objective | None = None) -> SolveReport:
    """Minimize phi from ``w0`` (zeros by default) until the mistransported
    mass drops to ``cfg.epsilon * total_mass``."""
    cfg = cfg or SolverConfig()
    n = nu.n
    w = np.zeros(n) if w0 is None else np.array(w0, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"initial weights have shape {w.shape}, expected ({n},)")
    if objective is None:
        objective = Objective(grid, nu, subpixel_count(n, grid, max_k) if k is None else k)
    total = nu.total_mass
    threshold = cfg.epsilon * total
    steepest_length = cfg.initial_step * 0.1 * grid.diameter

    def f(x) -> ObjectiveValue:
        if not np.all(np.isfinite(x)):
            raise SolverError("weights became non-finite; check the input measures")
        v = objective(x)
        if not math.isfinite(v.phi):
            raise SolverError("objective is not finite; check the input measures")
        return v

    evals_before = objective.n_evaluations
    v = f(w)
    history: deque = deque(maxlen=cfg.memory)
    phi_history = [v.phi]
    iterations = 0
    step = 0.0
    reason = "max_iterations"
    converged = False
    while True:
        mis = mistransported_mass(v)
        if callback is not None:
            callback({"iter": iterations, "phi": v.phi, "mistransported_mass": mis,
                      "step_size": step})
        if mis <= threshold:
            converged, reason = True, "converged"
            break
        if iterations >= cfg.max_iterations:
            break
        g = v.gradient
        attempts = []
        if history:
            d = two_loop_direction(g, history)
            if float(g @ d) < 0:
                attempts.append((d, 1.0))
        gnorm = float(np.linalg.norm(g))
        attempts.append((-g, steepest_length / gnorm))

        accepted = None
        for d, t in attempts:
            slope = float(g @ d)
            for _ in range(cfg.max_line_search_steps):
                w_new = w + t * d
                v_new = f(w_new)
                if v_new.phi <= v.phi + cfg.armijo_c1 * t * slope:
                    accepted = (w_new, v_new, t)
                    break
                t *= cfg.backtrack_factor
            if accepted is not None:
                break
            history.clear()
        if accepted is None:
            reason = "stalled"
            break
        w_new, v_new, step = accepted
        s = w_new - w
        y = v_new.gradient - g
        if float(s @ y) > CURVATURE_MIN:
            history.append((s, y))
        w, v = w_new, v_new
        iterations += 1
        phi_history.append(v.phi)

    return SolveReport(
        final_w=w - w.min(),
        iterations=iterations,
        phi_history=phi_history,
        final_mistransported_mass=mistransported_mass(v),
        w1_cost=v.cost,
        converged=converged,
        termination_reason=reason,
        total_mass=total,
        n_evaluations=objective.n_evaluations - evals_before,
        k=objective.k,
        cell_mass=v.cell_mass.copy(),
        final_value=v,
    )
