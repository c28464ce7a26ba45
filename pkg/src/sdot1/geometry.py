"""Additively weighted nearest-site queries and subpixel rasterization.

Every pixel of a :class:`~sdot1.measures.DensityGrid` is split into k x k
subpixels.  Each subpixel with positive mass is assigned, as a whole, to the
site whose weighted distance ``|x - y_j| - w_j`` at the subpixel center is
smallest (ties go to the smaller index).  Cell masses and transport costs
are then plain sums over subpixels.

The query loop works on tiles of pixels, each refined as a quadtree.  For a
block with center c and half-diagonal r, a site j can only win somewhere in
the block if ``|c - y_j| - r - w_j`` does not exceed the best
``|c - y_k| + r - w_k``; a sharper pairwise test (see ``_candidates``)
removes far sites that are nearly tied with the best one.  Each block tests
only the survivors of its parent.  A block left with one site is filled
directly.  Inside a single pixel, distances to the survivors are bracketed
by their linearization at the pixel center, so most subpixels need a
single square root.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .measures import DensityGrid

NONE = -1
DEFAULT_MAX_K = 64
_SUBPIXELS_PER_SITE = 1000


def _configure_threads() -> None:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    env = os.environ.get("SDOT1_THREADS")
    if env:
        try:
            numba.set_num_threads(max(1, min(int(env), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


_configure_threads()


@dataclass(frozen=True)
class SiteSet:
    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 2)
        w = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        if len(pts) == 0:
            raise ValueError("need at least one site")
        if len(pts) != len(w):
            raise ValueError(f"{len(pts)} sites but {len(w)} weights")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


@dataclass
class Rasterization:
    k: int
    assignment: np.ndarray  # (ny*k, nx*k) int32, NONE for zero-mass subpixels
    cell_mass: np.ndarray
    cell_cost: np.ndarray


def weighted_argmin(x, sites: SiteSet) -> int:
    """Index j minimizing |x - y_j| - w_j, smallest index on ties."""
    dx = x[0] - sites.points[:, 0]
    dy = x[1] - sites.points[:, 1]
    return int(np.argmin(np.sqrt(dx * dx + dy * dy) - sites.weights))


def subpixel_count(n: int, grid: DensityGrid, max_k: int = DEFAULT_MAX_K) -> int:
    """Smallest k with nx*ny*k^2 >= 1000*n, capped at ``max_k``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pixels = grid.nx * grid.ny
    need = _SUBPIXELS_PER_SITE * n
    k = max(1, math.isqrt(max(0, need // pixels)))
    while pixels * k * k < need:
        k += 1
    while k > 1 and pixels * (k - 1) ** 2 >= need:
        k -= 1
    return min(k, max_k)


def subpixel_centers(grid: DensityGrid, k: int) -> tuple[np.ndarray, np.ndarray]:
    """1-d arrays of subpixel center x (by column) and y (by row)."""
    sub = grid.side / k
    xs = grid.x_min + (np.arange(grid.nx * k) + 0.5) * sub
    ys = grid.y_max - (np.arange(grid.ny * k) + 0.5) * sub
    return xs, ys


class Subpixels:
    """Per-subpixel masses of a grid at factor k, reusable across queries."""

    def __init__(self, grid: DensityGrid, k: int):
        if k < 1:
            raise ValueError("subpixel factor must be >= 1")
        self.grid = grid
        self.k = int(k)
        sub_mass = grid.values * (grid.side / k) ** 2
        self.masses = np.repeat(np.repeat(sub_mass, k, axis=0), k, axis=1)
        self.flat_masses = self.masses.ravel()
        self.values = np.ascontiguousarray(grid.values)
        # top-level tiles: a power of two, about 64 subpixels on a side
        self.tile = 1 << max(0, (64 // self.k).bit_length() - 1)


@njit(cache=True, inline="always", error_model="numpy")
def _candidates(cx, cy, rad, px, py, w, pool, m, margin, out_idx, fc, dc, keep, out_f, out_d):
    """Sites among ``pool[:m]`` that may win inside the disc (cx, cy, rad).

    Writes them to ``out_idx`` and returns their count; with ``keep`` their
    values and distances at the center also go to ``out_f`` and ``out_d``.
    Two exclusion tests are used.  The plain one compares
    ``|c - y_j| - rad - w_j`` with the best ``|c - y_i| + rad - w_i``.  The
    pairwise one bounds the variation of f_j - f_i, where
    f_j(x) = |x - y_j| - w_j and i is the best site at c: its gradient is
    u_j - u_i (unit vectors from the sites), and u_j turns by at most
    rad / (d_j - rad) inside the disc.  Far sites in similar directions are
    then separated even when both are nearly tied at c.
    """
    best = -1
    best_f = np.inf
    for q in range(m):
        j = pool[q]
        dx = cx - px[j]
        dy = cy - py[j]
        d = math.sqrt(dx * dx + dy * dy)
        dc[q] = d
        fc[q] = d - w[j]
        if fc[q] < best_f:
            best_f = fc[q]
            best = q
    min_ub = best_f + rad
    di = dc[best]
    bux = 0.0
    buy = 0.0
    if di > rad:
        bux = (cx - px[pool[best]]) / di
        buy = (cy - py[pool[best]]) / di
    cnt = 0
    for q in range(m):
        if fc[q] - rad > min_ub + margin:
            continue
        j = pool[q]
        if q != best and di > rad and dc[q] > rad:
            gx = (cx - px[j]) / dc[q] - bux
            gy = (cy - py[j]) / dc[q] - buy
            lip = math.sqrt(gx * gx + gy * gy) + rad / (dc[q] - rad) + rad / (di - rad)
            if fc[q] - best_f - rad * lip > margin:
                continue
        out_idx[cnt] = j
        if keep:
            out_f[cnt] = fc[q]
            out_d[cnt] = dc[q]
        cnt += 1
    return cnt


@njit(cache=True, inline="always", error_model="numpy")
def _scan_pixel(i, jj, x_min, y_max, sub, k, cx, cy, rad, px, py, w, cand, cf, cd, cnt,
                warm, prev, margin, assign, dist, ux, uy, inv, lo):
    """Assign the k x k subpixels of one pixel among ``cnt`` candidates.

    Each candidate's distance is bracketed without a square root: for an
    offset e from the pixel center c, |c + e - y| lies between
    d + u.e and d + u.e + (|e|^2 - (u.e)^2) / (2 (d - |e|)), where d and u
    are the distance and unit direction at c.  Only candidates whose
    bracket reaches below the smallest upper end are evaluated exactly.
    """
    for q in range(cnt):
        j = cand[q]
        if cd[q] > rad:
            ux[q] = (cx - px[j]) / cd[q]
            uy[q] = (cy - py[j]) / cd[q]
            inv[q] = 0.5 / (cd[q] - rad)
        else:
            inv[q] = -1.0
    for a in range(k):
        yc = y_max - (i * k + a + 0.5) * sub
        ey = yc - cy
        for b in range(k):
            xc = x_min + (jj * k + b + 0.5) * sub
            ex = xc - cx
            r2 = ex * ex + ey * ey
            r = math.sqrt(r2)
            thr = np.inf
            prev_d = 0.0
            if warm and prev >= 0:
                dx = xc - px[prev]
                dy = yc - py[prev]
                prev_d = math.sqrt(dx * dx + dy * dy)
                thr = prev_d - w[prev]
            for q in range(cnt):
                if inv[q] < 0.0:
                    lo[q] = cf[q] - r
                    hi = cf[q] + r
                else:
                    t = ux[q] * ex + uy[q] * ey
                    lo[q] = cf[q] + t
                    hi = lo[q] + (r2 - t * t) * inv[q]
                if hi < thr:
                    thr = hi
            thr += margin
            best = -1
            best_v = np.inf
            best_d = 0.0
            live = 0
            only = -1
            for q in range(cnt):
                if lo[q] <= thr:
                    live += 1
                    only = q
            if live == 1:
                best = cand[only]
                if best == prev and warm:
                    best_d = prev_d
                else:
                    dx = xc - px[best]
                    dy = yc - py[best]
                    best_d = math.sqrt(dx * dx + dy * dy)
            else:
                for q in range(cnt):
                    if lo[q] > thr:
                        continue
                    j = cand[q]
                    dx = xc - px[j]
                    dy = yc - py[j]
                    d = math.sqrt(dx * dx + dy * dy)
                    v = d - w[j]
                    if v < best_v or (v == best_v and j < best):
                        best = j
                        best_v = v
                        best_d = d
            assign[i * k + a, jj * k + b] = best
            dist[i * k + a, jj * k + b] = best_d
            prev = best
    return prev


@njit(cache=True, inline="always", error_model="numpy")
def _fill(r0, r1, c0, c1, x_min, y_max, sub, k, site, px, py, values, assign, dist):
    for i in range(r0, r1):
        for jj in range(c0, c1):
            positive = values[i, jj] > 0.0
            for a in range(k):
                yc = y_max - (i * k + a + 0.5) * sub
                for b in range(k):
                    if positive:
                        xc = x_min + (jj * k + b + 0.5) * sub
                        assign[i * k + a, jj * k + b] = site
                        dx = xc - px[site]
                        dy = yc - py[site]
                        dist[i * k + a, jj * k + b] = math.sqrt(dx * dx + dy * dy)
                    else:
                        assign[i * k + a, jj * k + b] = -1
                        dist[i * k + a, jj * k + b] = 0.0


@njit(cache=True, parallel=True, error_model="numpy")
def _assign_kernel(values, x_min, y_max, side, k, px, py, w, tile, warm, margin,
                   assign, dist):
    ny, nx = values.shape
    n = px.shape[0]
    sub = side / k
    trows = (ny + tile - 1) // tile
    tcols = (nx + tile - 1) // tile
    depth = 2
    while (1 << (depth - 2)) < tile:
        depth += 1
    for t in prange(trows * tcols):
        # depth-first quadtree over the tile; pools[l] holds the candidates of
        # the region currently open at level l (level 0 is every site)
        pools = np.empty((depth + 1, n), dtype=np.int64)
        cf = np.empty(n)
        cd = np.empty(n)
        ux = np.empty(n)
        uy = np.empty(n)
        inv = np.empty(n)
        lo = np.empty(n)
        counts = np.zeros(depth + 1, dtype=np.int64)
        fc = np.empty(n)
        dc = np.empty(n)
        pools[0, :] = np.arange(n)
        counts[0] = n
        stack = np.empty((4 * depth + 4, 5), dtype=np.int64)
        top = 0
        r0 = (t // tcols) * tile
        c0 = (t % tcols) * tile
        stack[0, 0] = r0
        stack[0, 1] = min(r0 + tile, ny)
        stack[0, 2] = c0
        stack[0, 3] = min(c0 + tile, nx)
        stack[0, 4] = 1
        top = 1
        prev = -1
        while top > 0:
            top -= 1
            a0 = stack[top, 0]
            a1 = stack[top, 1]
            b0 = stack[top, 2]
            b1 = stack[top, 3]
            lvl = stack[top, 4]
            single = a1 - a0 == 1 and b1 - b0 == 1
            if single and values[a0, b0] <= 0.0:
                for a in range(k):
                    for b in range(k):
                        assign[a0 * k + a, b0 * k + b] = -1
                        dist[a0 * k + a, b0 * k + b] = 0.0
                continue
            bx0 = x_min + (b0 * k + 0.5) * sub
            bx1 = x_min + (b1 * k - 0.5) * sub
            by0 = y_max - (a1 * k - 0.5) * sub
            by1 = y_max - (a0 * k + 0.5) * sub
            rad = 0.5 * math.sqrt((bx1 - bx0) ** 2 + (by1 - by0) ** 2)
            cx = 0.5 * (bx0 + bx1)
            cy = 0.5 * (by0 + by1)
            cnt = _candidates(cx, cy, rad, px, py, w, pools[lvl - 1], counts[lvl - 1], margin,
                              pools[lvl], fc, dc, single, cf, cd)
            counts[lvl] = cnt
            if cnt == 1:
                _fill(a0, a1, b0, b1, x_min, y_max, sub, k, pools[lvl, 0], px, py, values,
                      assign, dist)
                prev = pools[lvl, 0]
            elif single:
                prev = _scan_pixel(a0, b0, x_min, y_max, sub, k, cx, cy, rad, px, py, w,
                                   pools[lvl], cf, cd, cnt, warm, prev, margin, assign, dist,
                                   ux, uy, inv, lo)
            else:
                am = (a0 + a1 + 1) // 2 if a1 - a0 > 1 else a1
                bm = (b0 + b1 + 1) // 2 if b1 - b0 > 1 else b1
                # pushed in reverse so the top-left child is handled first
                for ra0, ra1 in ((am, a1), (a0, am)):
                    if ra0 == ra1:
                        continue
                    for rb0, rb1 in ((bm, b1), (b0, bm)):
                        if rb0 == rb1:
                            continue
                        stack[top, 0] = ra0
                        stack[top, 1] = ra1
                        stack[top, 2] = rb0
                        stack[top, 3] = rb1
                        stack[top, 4] = lvl + 1
                        top += 1


@njit(cache=True)
def _accumulate(assign, dist, masses, k, cell_mass, cell_cost):
    # serial, pixels row-major then subpixels row-major, so sums never
    # depend on the thread count
    rows, cols = assign.shape
    for pi in range(rows // k):
        for pj in range(cols // k):
            for a in range(pi * k, pi * k + k):
                for b in range(pj * k, pj * k + k):
                    j = assign[a, b]
                    if j >= 0:
                        m = masses[a, b]
                        cell_mass[j] += m
                        cell_cost[j] += m * dist[a, b]


def rasterize(grid: DensityGrid, sites: SiteSet, k: int, warm_start: bool = True,
              subpixels: Subpixels | None = None) -> Rasterization:
    """Assign every positive-mass subpixel to its weighted Voronoi cell."""
    if subpixels is None or subpixels.grid is not grid or subpixels.k != k:
        subpixels = Subpixels(grid, k)
    k = subpixels.k
    shape = (grid.ny * k, grid.nx * k)
    assign = np.empty(shape, dtype=np.int32)
    dist = np.empty(shape, dtype=np.float64)
    px = np.ascontiguousarray(sites.points[:, 0])
    py = np.ascontiguousarray(sites.points[:, 1])
    w = sites.weights
    scale = 1.0 + float(np.max(np.abs(w))) + float(np.max(np.abs(sites.points))) \
        + max(abs(v) for v in grid.bounds)
    _assign_kernel(subpixels.values, float(grid.x_min), float(grid.y_max), float(grid.side),
                   k, px, py, w, subpixels.tile, bool(warm_start), 1e-12 * scale,
                   assign, dist)
    cell_mass = np.zeros(len(sites))
    cell_cost = np.zeros(len(sites))
    _accumulate(assign, dist, subpixels.masses, k, cell_mass, cell_cost)
    return Rasterization(k, assign, cell_mass, cell_cost)


def brute_force_assignment(grid: DensityGrid, sites: SiteSet, k: int) -> np.ndarray:
    """Reference assignment by exhaustive weighted_argmin at each subpixel center."""
    xs, ys = subpixel_centers(grid, k)
    mask = np.repeat(np.repeat(grid.values > 0, k, axis=0), k, axis=1)
    out = np.full(mask.shape, NONE, dtype=np.int32)
    for r in range(len(ys)):
        for c in range(len(xs)):
            if mask[r, c]:
                out[r, c] = weighted_argmin((xs[c], ys[r]), sites)
    return out


def write_assignment_pgm(rast: Rasterization, n_sites: int, path) -> None:
    """Export the assignment as PGM: gray level = site index, NONE = maxval.

    8-bit (NONE = 255) for fewer than 255 sites, 16-bit otherwise.
    """
    from PIL import Image

    a = rast.assignment
    if n_sites < 255:
        img = np.where(a < 0, 255, a).astype(np.uint8)
        Image.fromarray(img, mode="L").save(path, format="PPM")
    else:
        if n_sites >= 65535:
            raise ValueError("too many sites for a 16-bit PGM")
        img = np.where(a < 0, 65535, a).astype(np.uint16)
        Image.fromarray(img).save(path, format="PPM")


def read_assignment_pgm(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        a = np.asarray(im).astype(np.int64)
    maxval = 255 if a.max(initial=0) <= 255 and im.mode == "L" else 65535
    return np.where(a == maxval, NONE, a).astype(np.int32)
