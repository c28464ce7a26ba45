"""Source and target measures: density grids and finitely supported measures.

A :class:`DensityGrid` is a piecewise-constant density on an axis-aligned
rectangle split into square pixels.  Row 0 of ``values`` is the top row of
the image, i.e. the row with the largest y coordinates.  A
:class:`DiscreteMeasure` is a finite list of distinct support points with
positive masses.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

SQUARE_RTOL = 1e-9


class InputError(ValueError):
    """Raised for malformed or inconsistent input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DensityGrid:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    values: np.ndarray  # shape (ny, nx), row 0 = top

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise InputError("density values must be a non-empty 2-d array")
        if not np.all(np.isfinite(values)):
            raise InputError("density values must be finite")
        if np.any(values < 0):
            raise InputError("density values must be nonnegative")
        if not np.any(values > 0):
            raise InputError("zero total mass")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise InputError("empty bounding rectangle")
        ny, nx = values.shape
        sx = (self.x_max - self.x_min) / nx
        sy = (self.y_max - self.y_min) / ny
        if abs(sx - sy) > SQUARE_RTOL * max(sx, sy):
            raise InputError(
                f"non-square pixels: {sx!r} x {sy!r} for a {nx}x{ny} grid on "
                f"[{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]")
        object.__setattr__(self, "values", _frozen(values))
        total = self.total_mass
        if not (math.isfinite(total) and total > 0):
            raise InputError("total mass must be finite and positive")

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def side(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def diameter(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    @property
    def pixel_masses(self) -> np.ndarray:
        return self.values * self.side**2

    @property
    def total_mass(self) -> float:
        return math.fsum(self.pixel_masses.ravel())

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) arrays of shape (ny, nx) holding pixel centers."""
        s = self.side
        xs = self.x_min + (np.arange(self.nx) + 0.5) * s
        ys = self.y_max - (np.arange(self.ny) + 0.5) * s
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class DiscreteMeasure:
    points: np.ndarray  # shape (n, 2)
    masses: np.ndarray  # shape (n,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        m = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        if len(pts) == 0:
            raise InputError("discrete measure needs at least one point")
        if len(pts) != len(m):
            raise InputError(f"{len(pts)} points but {len(m)} masses")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(m))):
            raise InputError("points and masses must be finite")
        if np.any(m <= 0):
            raise InputError("masses must be positive")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InputError("duplicate support points")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "masses", _frozen(m))

    def __len__(self) -> int:
        return len(self.masses)

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)


@dataclass(frozen=True)
class BalanceCheck:
    mu_mass: float
    nu_mass: float
    relative_gap: float
    tol: float = field(default=1e-6)

    @property
    def ok(self) -> bool:
        return self.relative_gap <= self.tol


def normalize(m, target_mass: float = 1.0):
    """Rescale a grid or discrete measure to the given total mass."""
    if not target_mass > 0:
        raise InputError("target_mass must be positive")
    total = m.total_mass
    if isinstance(m, DensityGrid):
        return DensityGrid(m.x_min, m.y_min, m.x_max, m.y_max,
                           m.values * (target_mass / total))
    masses = np.array(m.masses) * (target_mass / total)
    # last atom absorbs the rounding so the masses sum to target_mass
    masses[-1] = target_mass - math.fsum(masses[:-1])
    if masses[-1] <= 0:
        masses = np.array(m.masses) * (target_mass / total)
    return DiscreteMeasure(m.points, masses)


def check_balance(mu: DensityGrid, nu: DiscreteMeasure, tol: float = 1e-6) -> BalanceCheck:
    a, b = mu.total_mass, nu.total_mass
    return BalanceCheck(a, b, abs(a - b) / max(a, b), tol)


# --- I/O -------------------------------------------------------------------

def parse_bounds(bounds) -> tuple[float, float, float, float]:
    if isinstance(bounds, str):
        parts = bounds.split(",")
        if len(parts) != 4:
            raise InputError(f"bounds must be x0,y0,x1,y1, got {bounds!r}")
        try:
            bounds = [float(p) for p in parts]
        except ValueError as exc:
            raise InputError(f"bad bounds {bounds!r}: {exc}") from None
    x0, y0, x1, y1 = (float(v) for v in bounds)
    return x0, y0, x1, y1


def load_density(path, bounds=None) -> DensityGrid:
    """Read a density from a PGM (P2/P5) or CSV grid.

    CSV grids carry their bounds in a JSON sidecar ``<path>.json`` with keys
    x_min, y_min, x_max, y_max; explicit ``bounds`` override it.  Without any
    bounds the grid is placed on [0, 1] x [0, ny/nx].
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        values = _read_grid_csv(path)
        sidecar = path.with_name(path.name + ".json")
        if bounds is None and sidecar.exists():
            try:
                meta = json.loads(sidecar.read_text())
                bounds = [meta[k] for k in ("x_min", "y_min", "x_max", "y_max")]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputError(f"{sidecar}: bad bounds sidecar ({exc})") from None
    else:
        try:
            with Image.open(path) as im:
                if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "1"):
                    raise InputError(f"{path}: not a grayscale PGM image")
                values = np.asarray(im, dtype=np.float64)
        except (InputError, FileNotFoundError):
            raise
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise InputError(f"{path}: malformed PGM ({exc})") from None
    ny, nx = values.shape
    if bounds is None:
        bounds = (0.0, 0.0, 1.0, ny / nx)
    x0, y0, x1, y1 = parse_bounds(bounds)
    return DensityGrid(x0, y0, x1, y1, values)


def _read_grid_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if len(rows[-1]) != len(rows[0]):
                raise InputError(f"{path}:{lineno}: expected {len(rows[0])} values, "
                                 f"got {len(rows[-1])}")
    if not rows:
        raise InputError(f"{path}: empty grid")
    return np.array(rows, dtype=np.float64)


def write_density_csv(grid: DensityGrid, path) -> None:
    """Write ``grid`` as CSV plus a JSON bounds sidecar; reloading is lossless."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid.values:
            w.writerow([repr(float(v)) for v in row])
    meta = dict(zip(("x_min", "y_min", "x_max", "y_max"), grid.bounds))
    path.with_name(path.name + ".json").write_text(json.dumps(meta) + "\n")


def load_measure(path, default_mass: float | None = None) -> DiscreteMeasure:
    """Read a CSV with header ``x,y,mass``.

    With ``default_mass`` set, the mass column may be absent (sample files).
    """
    path = Path(path)
    pts, masses = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if header[:2] != ["x", "y"] or (default_mass is None and header[:3] != ["x", "y", "mass"]):
            raise InputError(f"{path}:1: expected header 'x,y,mass', got {','.join(header)!r}")
        has_mass = len(header) >= 3 and header[2] == "mass"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
                m = float(row[2]) if has_mass else default_mass
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(m)) or m <= 0:
                raise InputError(f"{path}:{lineno}: invalid point or non-positive mass")
            pts.append((x, y))
            masses.append(m)
    if not pts:
        raise InputError(f"{path}: no data rows")
    return DiscreteMeasure(np.array(pts), np.array(masses))


def write_measure(nu: DiscreteMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "mass"])
        for (x, y), m in zip(nu.points, nu.masses):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(m))])
