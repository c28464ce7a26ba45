"""Semi-discrete optimal transport for the unsquared Euclidean cost.

A density on a pixel grid is transported onto a finite set of weighted
points.  The optimal partition is an additively weighted Voronoi diagram
whose weights minimize a convex dual objective; see :func:`solve`.
"""

from .bounds import (MEAN_DIST_UNIT_SQUARE, ErrorReport, blur_error_bound,
                     quantization_error_bound, quantization_error_exact)
from .geometry import (NONE, Rasterization, SiteSet, rasterize, subpixel_count,
                       weighted_argmin)
from .measures import (DensityGrid, DiscreteMeasure, InputError, check_balance,
                       load_density, load_measure, normalize, write_measure)
from .multiscale import (Hierarchy, build_hierarchy, lloyd_coarsen, propagate_weights,
                         quantize, solve_multiscale)
from .objective import Objective, evaluate, mistransported_mass
from .optimizer import SolveReport, SolverConfig, SolverError, minimize, two_loop_direction
from .oracle import DiscreteTransportProblem, discrete_w1

__version__ = "0.1.0"


def solve(grid, nu, epsilon: float = 0.05, multiscale: bool = True, seed: int = 0,
          **kwargs) -> SolveReport:
    """Optimal transport from ``grid`` to ``nu``; the W1 estimate is
    ``report.w1_cost``.  Extra keyword arguments go to :class:`SolverConfig`."""
    cfg = SolverConfig(epsilon=epsilon, **kwargs)
    if multiscale:
        return solve_multiscale(grid, nu, cfg, seed=seed)
    return minimize(grid, nu, None, cfg)


