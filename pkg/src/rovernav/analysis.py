"""Terrain analysis: gradient-convolution cost maps and traversal cost grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .heightmap import HeightMap

# 3x3 Sobel operators, applied by cross-correlation and normalized by 1/(8r).
SOBEL_X = np.array([[1.0, 0.0, -1.0],
                    [2.0, 0.0, -2.0],
                    [1.0, 0.0, -1.0]])
SOBEL_Y = np.array([[1.0, 2.0, 1.0],
                    [0.0, 0.0, 0.0],
                    [-1.0, -2.0, -1.0]])

# Unknown cells farther than this (in cells) from any known cell contribute
# zero squared gradient; nearer ones borrow the nearest known height.
UNKNOWN_BORROW_RADIUS = 3.0


class DegenerateFitError(Exception):
    """Too few or collinear known cells for a plane fit."""


class EmptyKernelError(Exception):
    """Rover footprint kernel has no nonzero element."""


def sobel_gradients(hmap: HeightMap):
    """Normalized Sobel x/y slope maps (m/m) with edge replication.

    Unknown cells borrow the nearest known neighbor's height before the
    convolution; cells with no known neighbor within 3 cells return zero
    gradient so unimaged ground stays heuristically neutral.
    """
    r = hmap.cell_size
    if hmap.known.all():
        filled = hmap.heights
        far = None
    elif not hmap.known.any():
        z = np.zeros_like(hmap.heights)
        return z, z.copy()
    else:
        dist, (ri, ci) = ndimage.distance_transform_edt(
            ~hmap.known, return_indices=True)
        filled = hmap.heights[ri, ci]
        far = dist > UNKNOWN_BORROW_RADIUS
    gx = ndimage.correlate(filled, SOBEL_X, mode="nearest") / (8.0 * r)
    gy = ndimage.correlate(filled, SOBEL_Y, mode="nearest") / (8.0 * r)
    if far is not None:
        gx[far] = 0.0
        gy[far] = 0.0
    return gx, gy


def gradient_sq(gx, gy):
    """Squared gradient magnitude; quadratic cost, no square root needed."""
    gx = np.asarray(gx)
    gy = np.asarray(gy)
    if gx.shape != gy.shape:
        raise ValueError("gradient maps must share a shape")
    return gx * gx + gy * gy


def annulus_kernel(outer_radius, inner_radius, cell):
    """Rover footprint ring: 1 where inner <= center distance <= outer.

    The kernel is square with side 2*ceil(outer/cell)+1 so the ring always
    fits; a zero inner radius degenerates to a filled disc.
    """
    if not (0.0 <= inner_radius <= outer_radius):
        raise ValueError("need 0 <= inner_radius <= outer_radius")
    if cell <= 0:
        raise ValueError("cell must be positive")
    n = int(math.ceil(outer_radius / cell))
    offs = np.arange(-n, n + 1) * cell
    d = np.hypot(offs[None, :], offs[:, None])
    return ((d >= inner_radius) & (d <= outer_radius)).astype(float)


def gradient_conv_cost(gsq, kernel, cost_factor):
    """Footprint-averaged squared gradient scaled to cost units.

    Cross-correlates with the rover kernel (edge replication), normalizes by
    the count of nonzero kernel elements, and multiplies by the cost factor.
    """
    kernel = np.asarray(kernel, dtype=float)
    total = kernel.sum()
    if total == 0:
        raise EmptyKernelError("kernel has no nonzero element")
    out = ndimage.correlate(np.asarray(gsq, dtype=float), kernel, mode="nearest")
    return out * (cost_factor / total)


@dataclass
class GradientMaps:
    gx: np.ndarray
    gy: np.ndarray
    gsq: np.ndarray
    gc: np.ndarray


def compute_gradient_maps(hmap: HeightMap, params: "AnalysisParams") -> GradientMaps:
    gx, gy = sobel_gradients(hmap)
    gsq = gradient_sq(gx, gy)
    kernel = annulus_kernel(params.kernel_outer, params.kernel_inner, hmap.cell_size)
    gc = gradient_conv_cost(gsq, kernel, params.cost_factor)
    return GradientMaps(gx, gy, gsq, gc)


def _plane_lsq(x, y, z):
    """Least-squares plane via centered moments: (a, b, roughness, ok)."""
    n = len(z)
    xm, ym, zm = x.mean(), y.mean(), z.mean()
    xc, yc, zc = x - xm, y - ym, z - zm
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    sxy = float(xc @ yc)
    sxz = float(xc @ zc)
    syz = float(yc @ zc)
    szz = float(zc @ zc)
    det = sxx * syy - sxy * sxy
    if det <= 1e-10 * max(sxx * syy, 1e-300):
        return 0.0, 0.0, 0.0, False
    a = (syy * sxz - sxy * syz) / det
    b = (sxx * syz - sxy * sxz) / det
    rough = max(0.0, (szz - a * sxz - b * syz) / n)
    return a, b, rough, True


def fit_plane(hmap: HeightMap, region):
    """(tilt_deg, roughness_m2) of the best-fit plane over a cell block.

    `region` is inclusive cell index bounds (ix0, ix1, iy0, iy1); only known
    cells participate.  Raises DegenerateFitError for fewer than three known
    cells or a collinear arrangement.
    """
    ix0, ix1, iy0, iy1 = region
    k = hmap.known[iy0:iy1 + 1, ix0:ix1 + 1]
    if np.count_nonzero(k) < 3:
        raise DegenerateFitError("fewer than 3 known cells in region")
    iy, ix = np.nonzero(k)
    x = (ix + ix0 + 0.5) * hmap.cell_size
    y = (iy + iy0 + 0.5) * hmap.cell_size
    z = hmap.heights[iy0:iy1 + 1, ix0:ix1 + 1][k]
    a, b, rough, ok = _plane_lsq(x, y, z)
    if not ok:
        raise DegenerateFitError("known cells are collinear")
    tilt = math.degrees(math.atan(math.hypot(a, b)))
    return tilt, rough


@dataclass(frozen=True)
class AnalysisParams:
    costmap_cell: float = 0.5
    costmap_extent: float = 100.0
    w_tilt: float = 0.08           # cost per degree of tilt
    w_rough: float = 50.0          # cost per m^2 of roughness
    min_traverse_cost: float = 1.0
    # Above the cost of any smooth slope the rover tolerates (including its
    # gradient-convolution term), so ranking never prefers driving into
    # unimaged ground over imaged safe terrain; must stay above
    # min_traverse_cost.
    unknown_cost: float = 8.0
    tilt_limit_deg: float = 30.0
    min_known_fraction: float = 0.5
    cost_factor: float = 20.0      # gradient-convolution k
    # Footprint kernel radii.  The outer radius reaches past the wheels; a
    # zero inner radius keeps the belly swath covered, which is where the
    # clearance gate rejects most poses on rocky ground.
    kernel_outer: float = 1.4
    kernel_inner: float = 0.0

    def validate(self):
        if self.w_tilt < 0 or self.w_rough < 0:
            raise ValueError("cost weights must be >= 0")
        if self.unknown_cost <= self.min_traverse_cost:
            raise ValueError("unknown_cost must exceed the flat-terrain cost")


@dataclass
class CostMap:
    origin: np.ndarray
    cell_size: float
    width: int
    height: int
    base_cost: np.ndarray     # (h, w) cost units, finite cells only meaningful
    infinite: np.ndarray      # (h, w) bool, impassable
    tilt_deg: np.ndarray
    roughness: np.ndarray
    gradient_cost: np.ndarray
    learned_cost: np.ndarray
    unknown: np.ndarray       # (h, w) bool, unimaged cells at unknown_cost
    outside_cost: float = 2.0  # charged to path samples beyond the frame

    @classmethod
    def empty(cls, origin, cell_size, width, height):
        z = lambda: np.zeros((height, width))
        return cls(np.asarray(origin, dtype=float), float(cell_size),
                   width, height, z(), np.zeros((height, width), bool),
                   z(), z(), z(), z(), np.ones((height, width), bool))

    def copy(self):
        return CostMap(self.origin.copy(), self.cell_size, self.width, self.height,
                       self.base_cost.copy(), self.infinite.copy(),
                       self.tilt_deg.copy(), self.roughness.copy(),
                       self.gradient_cost.copy(), self.learned_cost.copy(),
                       self.unknown.copy(), self.outside_cost)

    def world_to_cell(self, x, y):
        jx = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(int)
        jy = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size).astype(int)
        return jx, jy

    def cell_center(self, jx, jy):
        return (self.origin[0] + (np.asarray(jx) + 0.5) * self.cell_size,
                self.origin[1] + (np.asarray(jy) + 0.5) * self.cell_size)


def _integral(arr):
    s = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1))
    np.cumsum(np.cumsum(arr, axis=0), axis=1, out=s[1:, 1:])
    return s


def _rect_sums(s, iy0, iy1, ix0, ix1):
    """Block sums over inclusive index bounds (arrays broadcast together)."""
    return (s[iy1 + 1, ix1 + 1] - s[iy0, ix1 + 1]
            - s[iy1 + 1, ix0] + s[iy0, ix0])


def _block_bounds(cmap_origin, cmap_cell, nx, ny, hmap):
    """Heightmap index bounds covered by each costmap cell (half-open rects)."""
    r = hmap.cell_size
    ex = cmap_origin[0] + np.arange(nx + 1) * cmap_cell  # cell edges
    ey = cmap_origin[1] + np.arange(ny + 1) * cmap_cell
    ix0 = np.floor((ex[:-1] - hmap.origin[0]) / r).astype(int)
    ix1 = np.ceil((ex[1:] - hmap.origin[0]) / r).astype(int) - 1
    iy0 = np.floor((ey[:-1] - hmap.origin[1]) / r).astype(int)
    iy1 = np.ceil((ey[1:] - hmap.origin[1]) / r).astype(int) - 1
    return ix0, ix1, iy0, iy1


def build_costmap(hmap: HeightMap, params: AnalysisParams, keepout_mask=None,
                  origin=None, width=None, height=None) -> CostMap:
    """Coarse traversal-cost grid from the current heightmap.

    Per imaged cell the cost is w_tilt*tilt + w_rough*roughness +
    min_traverse_cost from a least-squares plane over the covered heightmap
    cells; a cell is infinite iff tilt exceeds the limit, the fit is
    degenerate, or the keep-out mask forbids it.  Cells with too little
    coverage (or outside the heightmap) carry the unknown cost.  The costmap
    frame defaults to `costmap_extent` centered on the heightmap but can be
    pinned externally so it stays fixed over a run.
    """
    params.validate()
    cc = params.costmap_cell
    if origin is None:
        n = int(round(params.costmap_extent / cc))
        width = height = n
        origin = hmap.center - n * cc / 2.0
    origin = np.asarray(origin, dtype=float)
    cmap = CostMap.empty(origin, cc, width, height)
    cmap.base_cost[:] = params.unknown_cost
    cmap.outside_cost = params.unknown_cost
    if keepout_mask is not None:
        cmap.infinite |= keepout_mask

    ix0, ix1, iy0, iy1 = _block_bounds(origin, cc, width, height, hmap)
    vx = np.nonzero((ix1 >= 0) & (ix0 <= hmap.width - 1))[0]
    vy = np.nonzero((iy1 >= 0) & (iy0 <= hmap.height - 1))[0]
    if len(vx) == 0 or len(vy) == 0 or not hmap.known.any():
        return cmap
    jx, jy = np.meshgrid(vx, vy)
    bx0 = np.clip(ix0[jx], 0, hmap.width - 1)
    bx1 = np.clip(ix1[jx], 0, hmap.width - 1)
    by0 = np.clip(iy0[jy], 0, hmap.height - 1)
    by1 = np.clip(iy1[jy], 0, hmap.height - 1)
    total = ((ix1[jx] - ix0[jx] + 1) * (iy1[jy] - iy0[jy] + 1)).astype(float)

    r = hmap.cell_size
    m = hmap.known.astype(float)
    xs = (np.arange(hmap.width) + 0.5) * r
    ys = (np.arange(hmap.height) + 0.5) * r
    X = np.broadcast_to(xs, hmap.known.shape)
    Y = np.broadcast_to(ys[:, None], hmap.known.shape)
    Z = np.where(hmap.known, hmap.heights, 0.0)

    sums = {}
    for name, arr in (("n", m), ("x", m * X), ("y", m * Y), ("z", Z),
                      ("xx", m * X * X), ("yy", m * Y * Y), ("xy", m * X * Y),
                      ("xz", Z * X), ("yz", Z * Y), ("zz", Z * Z)):
        sums[name] = _rect_sums(_integral(arr), by0, by1, bx0, bx1)

    n = sums["n"]
    enough = n >= 3
    known_frac = n / total
    ns = np.where(enough, n, 1.0)
    xm, ym, zm = sums["x"] / ns, sums["y"] / ns, sums["z"] / ns
    sxx = sums["xx"] - ns * xm * xm
    syy = sums["yy"] - ns * ym * ym
    sxy = sums["xy"] - ns * xm * ym
    sxz = sums["xz"] - ns * xm * zm
    syz = sums["yz"] - ns * ym * zm
    szz = sums["zz"] - ns * zm * zm
    det = sxx * syy - sxy * sxy
    solvable = enough & (det > 1e-10 * np.maximum(sxx * syy, 1e-300))
    dets = np.where(solvable, det, 1.0)
    a = (syy * sxz - sxy * syz) / dets
    b = (sxx * syz - sxy * sxz) / dets
    rough = np.maximum(0.0, (szz - a * sxz - b * syz) / ns)
    tilt = np.degrees(np.arctan(np.hypot(a, b)))

    imaged = known_frac >= params.min_known_fraction
    fitted = imaged & solvable
    degenerate = imaged & ~solvable
    over_tilt = fitted & (tilt > params.tilt_limit_deg)

    view = (slice(vy[0], vy[-1] + 1), slice(vx[0], vx[-1] + 1))
    cmap.unknown[view] = ~imaged
    cmap.tilt_deg[view] = np.where(fitted, tilt, 0.0)
    cmap.roughness[view] = np.where(fitted, rough, 0.0)
    cost = (params.w_tilt * tilt + params.w_rough * rough
            + params.min_traverse_cost)
    cmap.base_cost[view] = np.where(fitted, cost, params.unknown_cost)
    cmap.infinite[view] |= degenerate | over_tilt
    return cmap


def inject_heuristic_costs(cmap: CostMap, hmap: HeightMap, gc=None, acemap=None,
                           gradient_weight=1.0, learned_factor=0.0) -> CostMap:
    """Add heuristic terms to a costmap (returns a new map).

    Each costmap cell gains the mean gradient-convolution cost over the
    heightmap cells it covers, and, when a clearance prediction map is
    supplied, `learned_factor` times the mean over its eight heading channels.
    Both terms flow into everything downstream of base_cost, including the
    cost-to-go field.
    """
    out = cmap.copy()
    ix0, ix1, iy0, iy1 = _block_bounds(cmap.origin, cmap.cell_size,
                                       cmap.width, cmap.height, hmap)
    vx = np.nonzero((ix1 >= 0) & (ix0 <= hmap.width - 1))[0]
    vy = np.nonzero((iy1 >= 0) & (iy0 <= hmap.height - 1))[0]
    if len(vx) == 0 or len(vy) == 0:
        return out
    jx, jy = np.meshgrid(vx, vy)
    bx0 = np.clip(ix0[jx], 0, hmap.width - 1)
    bx1 = np.clip(ix1[jx], 0, hmap.width - 1)
    by0 = np.clip(iy0[jy], 0, hmap.height - 1)
    by1 = np.clip(iy1[jy], 0, hmap.height - 1)
    covered = ((bx1 - bx0 + 1) * (by1 - by0 + 1)).astype(float)
    view = (slice(vy[0], vy[-1] + 1), slice(vx[0], vx[-1] + 1))

    if gc is not None:
        mean_gc = _rect_sums(_integral(np.asarray(gc)), by0, by1, bx0, bx1) / covered
        out.gradient_cost[view] += gradient_weight * mean_gc
        out.base_cost[view] += gradient_weight * mean_gc
    if acemap is not None and learned_factor != 0.0:
        vals = acemap.values
        finite = np.isfinite(vals)
        vsum = _rect_sums(_integral(np.where(finite, vals, 0.0).sum(axis=2)),
                          by0, by1, bx0, bx1)
        vcnt = _rect_sums(_integral(finite.sum(axis=2).astype(float)),
                          by0, by1, bx0, bx1)
        mean_p = np.where(vcnt > 0, vsum / np.maximum(vcnt, 1.0), 0.0)
        out.learned_cost[view] += learned_factor * mean_p
        out.base_cost[view] += learned_factor * mean_p
    return out
