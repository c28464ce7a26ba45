"""Pictures of transport partitions: a hand-written SVG and a matplotlib PNG.

Cells are drawn as a raster at pixel resolution (each pixel takes the cell
of its central subpixel), tinted by the density, with cell borders
darkened.  Sites are discs whose areas are proportional to their masses.
A gray arrow runs from a cell's centroid to its site whenever the site
does not lie in its own cell.

The SVG output depends only on the inputs: numbers are printed with fixed
precision and the embedded PNG is written without metadata.
"""

from __future__ import annotations

import base64
import colorsys
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import NONE, SiteSet, weighted_argmin

MAX_RASTER_SIDE = 1024
SVG_WIDTH = 640.0
_GOLDEN = 0.6180339887498949


def palette(n: int) -> np.ndarray:
    """n distinct RGB colors in [0, 1]; color j depends only on j."""
    out = np.empty((max(n, 1), 3))
    for j in range(len(out)):
        h = (j * _GOLDEN) % 1.0
        s = 0.55 + 0.25 * ((j * 7) % 3) / 2
        v = 0.80 + 0.15 * ((j * 5) % 2)
        out[j] = colorsys.hsv_to_rgb(h, s, v)
    return out


@dataclass
class Partition:
    """Everything needed to draw a partition.

    ``assignment`` is the subpixel (or pixel, k = 1) cell map with NONE for
    empty subpixels; ``values`` the density at pixel resolution, or None.
    """

    bounds: tuple
    assignment: np.ndarray
    k: int
    points: np.ndarray
    masses: np.ndarray
    values: np.ndarray | None = None
    weights: np.ndarray | None = None


def _pixel_labels(p: Partition) -> np.ndarray:
    c = p.k // 2
    lab = p.assignment[c::p.k, c::p.k]
    step = max(1, int(np.ceil(max(lab.shape) / MAX_RASTER_SIDE)))
    return lab[::step, ::step]


def raster_rgb(p: Partition) -> np.ndarray:
    """uint8 RGB image of the cells, top row = max y."""
    lab = _pixel_labels(p)
    colors = palette(len(p.points))
    rgb = np.ones(lab.shape + (3,))
    filled = lab != NONE
    base = colors[np.where(filled, lab, 0)]
    if p.values is not None:
        v = np.asarray(p.values, dtype=np.float64)
        step = max(1, int(np.ceil(max(v.shape) / MAX_RASTER_SIDE)))
        v = v[::step, ::step][:lab.shape[0], :lab.shape[1]]
        top = v.max()
        alpha = 0.35 + 0.65 * (v / top if top > 0 else v)
    else:
        alpha = np.ones(lab.shape)
    rgb = np.where(filled[..., None], 1.0 - alpha[..., None] * (1.0 - base), 1.0)
    # darken pixels whose right or lower neighbour belongs to another cell
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:, :-1] |= (lab[:, :-1] != lab[:, 1:]) & filled[:, :-1] & filled[:, 1:]
    edge[:-1, :] |= (lab[:-1, :] != lab[1:, :]) & filled[:-1, :] & filled[1:, :]
    rgb[edge] *= 0.55
    return np.round(rgb * 255).astype(np.uint8)


def cell_centroids(p: Partition) -> tuple[np.ndarray, np.ndarray]:
    """Mass-weighted (density-weighted if known) centroids and cell masses."""
    x0, y0, x1, y1 = p.bounds
    rows, cols = p.assignment.shape
    sub = (x1 - x0) / cols
    xs = x0 + (np.arange(cols) + 0.5) * sub
    ys = y1 - (np.arange(rows) + 0.5) * sub
    if p.values is not None:
        wts = np.repeat(np.repeat(np.asarray(p.values, float), p.k, 0), p.k, 1)
    else:
        wts = np.ones(p.assignment.shape)
    lab = p.assignment.ravel()
    ok = lab != NONE
    n = len(p.points)
    wt = wts.ravel()[ok]
    mass = np.bincount(lab[ok], weights=wt, minlength=n)
    X, Y = np.meshgrid(xs, ys)
    cx = np.bincount(lab[ok], weights=wt * X.ravel()[ok], minlength=n)
    cy = np.bincount(lab[ok], weights=wt * Y.ravel()[ok], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.c_[cx / mass, cy / mass], mass


def displaced_sites(p: Partition) -> np.ndarray:
    """Indices of sites lying outside their own (nonempty) cell."""
    x0, y0, x1, y1 = p.bounds
    rows, cols = p.assignment.shape
    sub = (x1 - x0) / cols
    sites = SiteSet(p.points, p.weights) if p.weights is not None else None
    out = []
    for j, (x, y) in enumerate(p.points):
        c = int(np.floor((x - x0) / sub))
        r = int(np.floor((y1 - y) / sub))
        owner = NONE
        if 0 <= r < rows and 0 <= c < cols:
            owner = int(p.assignment[r, c])
        if owner == NONE and sites is not None:
            owner = weighted_argmin((x, y), sites)
        if owner != NONE and owner != j:
            out.append(j)
    return np.array(out, dtype=np.int64)


def _disc_radii(masses, rmax):
    m = np.asarray(masses, dtype=np.float64)
    return rmax * np.sqrt(m / m.max())


def _png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def svg_document(p: Partition, title: str | None = None) -> str:
    x0, y0, x1, y1 = p.bounds
    scale = SVG_WIDTH / (x1 - x0)
    W, H = SVG_WIDTH, (y1 - y0) * scale

    def sx(x):
        return (x - x0) * scale

    def sy(y):
        return (y1 - y) * scale

    png = base64.b64encode(_png_bytes(raster_rgb(p))).decode("ascii")
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.2f}" height="{H:.2f}" '
        f'viewBox="0 0 {W:.2f} {H:.2f}">',
    ]
    if title:
        lines.append(f"<title>{_escape(title)}</title>")
    lines += [
        "<defs><marker id=\"head\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" "
        "markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\">"
        "<path d=\"M0,0 L10,5 L0,10 z\" fill=\"#777777\"/></marker></defs>",
        f'<image x="0" y="0" width="{W:.2f}" height="{H:.2f}" preserveAspectRatio="none" '
        f'style="image-rendering:pixelated" href="data:image/png;base64,{png}"/>',
    ]
    moved = displaced_sites(p)
    if len(moved):
        cen, mass = cell_centroids(p)
        lines.append('<g stroke="#777777" stroke-width="1.2" marker-end="url(#head)">')
        for j in moved:
            if mass[j] > 0:
                lines.append(f'<line x1="{sx(cen[j, 0]):.2f}" y1="{sy(cen[j, 1]):.2f}" '
                             f'x2="{sx(p.points[j, 0]):.2f}" y2="{sy(p.points[j, 1]):.2f}"/>')
        lines.append("</g>")
    r = _disc_radii(p.masses, 0.012 * max(W, H))
    lines.append('<g fill="#202020" fill-opacity="0.85" stroke="#ffffff" stroke-width="0.4">')
    for (x, y), rr in zip(p.points, r):
        lines.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="{max(rr, 0.6):.2f}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(p: Partition, path, title: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg_document(p, title))


def write_figure(p: Partition, path, title: str | None = None, dpi: int = 150) -> None:
    """Same picture through matplotlib, e.g. for PNG or PDF output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x0, y0, x1, y1 = p.bounds
    aspect = (y1 - y0) / (x1 - x0)
    fig, ax = plt.subplots(figsize=(6, 6 * aspect + 0.4))
    ax.imshow(raster_rgb(p), extent=(x0, x1, y0, y1), origin="upper", interpolation="nearest")
    cen, mass = cell_centroids(p)
    for j in displaced_sites(p):
        if mass[j] > 0:
            ax.annotate("", xy=p.points[j], xytext=cen[j],
                        arrowprops=dict(arrowstyle="->", color="0.45", lw=1))
    # scatter sizes are areas in pt^2, so linear in mass
    m = np.asarray(p.masses, float)
    ax.scatter(p.points[:, 0], p.points[:, 1], s=40 * m / m.max(), c="0.12",
               edgecolors="white", linewidths=0.3, zorder=3)
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
