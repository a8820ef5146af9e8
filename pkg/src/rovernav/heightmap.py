"""Rover-centered 2.5D terrain height grid with validity mask."""

from __future__ import annotations

import numpy as np


class NoKnownCellsError(Exception):
    """A window query found no known cell to report on."""


class HeightMap:
    """Regular XY grid of terrain heights in meters.

    ``heights[iy, ix]`` is the height of cell (ix, iy); it is only meaningful
    where ``known[iy, ix]`` is True (unknown cells are stored as NaN).  Cell
    (ix, iy) covers the half-open world square
    ``[origin + i*cell_size, origin + (i+1)*cell_size)`` on each axis, so a
    point exactly on a boundary belongs to the higher-index cell.
    """

    def __init__(self, origin, cell_size, width, height, heights=None, known=None):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if width < 3 or height < 3:
            raise ValueError("HeightMap must be at least 3x3 cells")
        self.origin = np.array([float(origin[0]), float(origin[1])])
        self.cell_size = float(cell_size)
        self.width = int(width)
        self.height = int(height)
        if heights is None:
            heights = np.full((self.height, self.width), np.nan)
        if known is None:
            known = np.zeros((self.height, self.width), dtype=bool)
        self.heights = np.asarray(heights, dtype=float)
        self.known = np.asarray(known, dtype=bool)
        if self.heights.shape != (self.height, self.width):
            raise ValueError("heights shape does not match width/height")
        if self.known.shape != (self.height, self.width):
            raise ValueError("known shape does not match width/height")

    @classmethod
    def rover_centered(cls, center, extent=20.0, cell_size=0.1):
        """Empty map of `extent` x `extent` meters centered on `center`."""
        n = int(round(extent / cell_size))
        origin = (center[0] - n * cell_size / 2.0, center[1] - n * cell_size / 2.0)
        return cls(origin, cell_size, n, n)

    def copy(self):
        return HeightMap(self.origin, self.cell_size, self.width, self.height,
                         self.heights.copy(), self.known.copy())

    def world_to_cell(self, x, y):
        """Cell indices (ix, iy) containing world point(s); may be out of range."""
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(int)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size).astype(int)
        return ix, iy

    def cell_center(self, ix, iy):
        x = self.origin[0] + (np.asarray(ix) + 0.5) * self.cell_size
        y = self.origin[1] + (np.asarray(iy) + 0.5) * self.cell_size
        return x, y

    def contains(self, x, y):
        ix, iy = self.world_to_cell(x, y)
        return (0 <= ix) & (ix < self.width) & (0 <= iy) & (iy < self.height)

    @property
    def center(self):
        return self.origin + 0.5 * self.cell_size * np.array([self.width, self.height])

    def height_at(self, x, y):
        """Height of the cell containing (x, y); NaN if unknown or off-map."""
        ix, iy = self.world_to_cell(x, y)
        if ix < 0 or ix >= self.width or iy < 0 or iy >= self.height:
            return np.nan
        return self.heights[iy, ix]

    def window_stats(self):
        """Cached window-query structures for this frame (see WindowStats)."""
        stats = getattr(self, "_stats", None)
        if stats is None:
            stats = self._stats = WindowStats(self)
        return stats


def integrate_points(hmap: HeightMap, points) -> HeightMap:
    """New frame where each cell hit by >= 1 point gets the mean z of its points.

    Cells receiving no points keep their previous state; a re-imaged cell is
    replaced (not blended with) this frame's mean.  Points outside the map are
    silently dropped.
    """
    pts = np.asarray(points, dtype=float)
    out = hmap.copy()
    if pts.size == 0:
        return out
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be an (n, 3) array of x, y, z")
    ix, iy = hmap.world_to_cell(pts[:, 0], pts[:, 1])
    inside = (ix >= 0) & (ix < hmap.width) & (iy >= 0) & (iy < hmap.height)
    if not np.any(inside):
        return out
    flat = iy[inside] * hmap.width + ix[inside]
    z = pts[inside, 2]
    nsum = np.bincount(flat, minlength=hmap.width * hmap.height).astype(float)
    zsum = np.bincount(flat, weights=z, minlength=hmap.width * hmap.height)
    hit = nsum > 0
    means = np.full(nsum.shape, np.nan)
    means[hit] = zsum[hit] / nsum[hit]
    hit2d = hit.reshape(hmap.height, hmap.width)
    out.heights[hit2d] = means.reshape(hmap.height, hmap.width)[hit2d]
    out.known[hit2d] = True
    return out


def _rect_index_span(hmap, rect):
    """Inclusive index bounds of cells intersecting a world rect, unclipped."""
    xmin, ymin, xmax, ymax = rect
    if xmax < xmin or ymax < ymin:
        raise ValueError("rect must have xmin <= xmax and ymin <= ymax")
    ix0 = int(np.floor((xmin - hmap.origin[0]) / hmap.cell_size))
    ix1 = int(np.floor((xmax - hmap.origin[0]) / hmap.cell_size))
    iy0 = int(np.floor((ymin - hmap.origin[1]) / hmap.cell_size))
    iy1 = int(np.floor((ymax - hmap.origin[1]) / hmap.cell_size))
    return ix0, ix1, iy0, iy1


class _RangeTable:
    """Sparse-table range reduce: O(1) min/max over any index rectangle."""

    def __init__(self, arr, op, fill):
        h, w = arr.shape
        self.op = op
        ky = max(1, int(h - 1).bit_length())
        kx = max(1, int(w - 1).bit_length())
        t = np.full((ky + 1, kx + 1, h, w), fill, dtype=arr.dtype)
        t[0, 0] = arr
        for k in range(1, kx + 1):
            prev, cur = t[0, k - 1], t[0, k]
            half = 1 << (k - 1)
            cur[:] = prev
            cur[:, : w - half] = op(prev[:, : w - half], prev[:, half:])
        for k in range(1, ky + 1):
            half = 1 << (k - 1)
            prev, cur = t[k - 1], t[k]
            cur[:] = prev
            cur[:, : h - half, :] = op(prev[:, : h - half, :], prev[:, half:, :])
        self.t = t
        self.logs = np.zeros(max(h, w) + 1, dtype=np.int64)
        for k in range(1, self.logs.shape[0].bit_length()):
            self.logs[(1 << k):] = k

    def query_many(self, y0, y1, x0, x1):
        """Elementwise reduce over [y0, y1] x [x0, x1]; bounds pre-clipped."""
        ly = self.logs[y1 - y0 + 1]
        lx = self.logs[x1 - x0 + 1]
        yb = y1 - (1 << ly) + 1
        xb = x1 - (1 << lx) + 1
        t = self.t
        return self.op(
            self.op(t[ly, lx, y0, x0], t[ly, lx, y0, xb]),
            self.op(t[ly, lx, yb, x0], t[ly, lx, yb, xb]))


class WindowStats:
    """Per-frame structures answering window min/max/known-count queries.

    Built once per heightmap frame and shared by every clearance evaluation
    against it; treat the frame as immutable once queried.
    """

    def __init__(self, hmap):
        self.width = hmap.width
        self.height = hmap.height
        lo = np.where(hmap.known, hmap.heights, np.inf)
        hi = np.where(hmap.known, hmap.heights, -np.inf)
        self.mins = _RangeTable(lo, np.minimum, np.inf)
        self.maxs = _RangeTable(hi, np.maximum, -np.inf)
        s = np.zeros((hmap.height + 1, hmap.width + 1), dtype=np.int64)
        np.cumsum(np.cumsum(hmap.known, axis=0), axis=1, out=s[1:, 1:])
        self._counts = s

    def counts(self, y0, y1, x0, x1):
        s = self._counts
        return s[y1 + 1, x1 + 1] - s[y0, x1 + 1] - s[y1 + 1, x0] + s[y0, x0]

    def minmax_known(self, ix0, ix1, iy0, iy1):
        """(min, max, known_count) arrays over unclipped index rectangles.

        Off-map area contributes no cells; fully off-map windows return
        (+inf, -inf, 0).
        """
        cx0 = np.clip(ix0, 0, self.width - 1)
        cx1 = np.clip(ix1, 0, self.width - 1)
        cy0 = np.clip(iy0, 0, self.height - 1)
        cy1 = np.clip(iy1, 0, self.height - 1)
        empty = (ix1 < 0) | (ix0 > self.width - 1) | (iy1 < 0) | (iy0 > self.height - 1)
        mn = self.mins.query_many(cy0, cy1, cx0, cx1)
        mx = self.maxs.query_many(cy0, cy1, cx0, cx1)
        nk = self.counts(cy0, cy1, cx0, cx1)
        mn = np.where(empty, np.inf, mn)
        mx = np.where(empty, -np.inf, mx)
        nk = np.where(empty, 0, nk)
        return mn, mx, nk


def window_minmax(hmap: HeightMap, rect):
    """(min, max, known_fraction) of heights over cells intersecting a rect.

    `rect` is (xmin, ymin, xmax, ymax) in world meters.  Min/max run over the
    known cells only; known_fraction divides by the total cell count of the
    rect, so area hanging off the map counts as unknown.  Raises
    NoKnownCellsError when no known cell intersects.
    """
    ix0, ix1, iy0, iy1 = _rect_index_span(hmap, rect)
    total = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
    cx0, cx1 = max(ix0, 0), min(ix1, hmap.width - 1)
    cy0, cy1 = max(iy0, 0), min(iy1, hmap.height - 1)
    if cx0 > cx1 or cy0 > cy1:
        raise NoKnownCellsError("rect does not overlap the map")
    k = hmap.known[cy0:cy1 + 1, cx0:cx1 + 1]
    nk = int(np.count_nonzero(k))
    if nk == 0:
        raise NoKnownCellsError("all cells intersecting rect are unknown")
    h = hmap.heights[cy0:cy1 + 1, cx0:cx1 + 1][k]
    return float(h.min()), float(h.max()), nk / total


def recenter(hmap: HeightMap, new_center) -> HeightMap:
    """New frame re-centered near `new_center`, shifted by whole cells.

    The shift is snapped to an integer cell count so every retained cell keeps
    its exact world footprint and height; newly exposed cells are unknown.
    """
    half = 0.5 * hmap.cell_size * np.array([hmap.width, hmap.height])
    ideal_origin = np.asarray(new_center, dtype=float) - half
    shift = np.rint((ideal_origin - hmap.origin) / hmap.cell_size).astype(int)
    out = HeightMap(hmap.origin + shift * hmap.cell_size, hmap.cell_size,
                    hmap.width, hmap.height)
    sx, sy = int(shift[0]), int(shift[1])
    # Overlap of old index range with the shifted one.
    ox0, ox1 = max(0, sx), min(hmap.width, hmap.width + sx)
    oy0, oy1 = max(0, sy), min(hmap.height, hmap.height + sy)
    if ox0 < ox1 and oy0 < oy1:
        out.heights[oy0 - sy:oy1 - sy, ox0 - sx:ox1 - sx] = hmap.heights[oy0:oy1, ox0:ox1]
        out.known[oy0 - sy:oy1 - sy, ox0 - sx:ox1 - sx] = hmap.known[oy0:oy1, ox0:ox1]
    return out
