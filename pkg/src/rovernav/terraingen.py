"""Synthetic ground-truth terrain: tilted plane plus rocks at a target CFA."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .heightmap import HeightMap

# A cell counts as rock-covered once its bump clears the local plane by this.
ROCK_COVER_THRESHOLD = 0.01  # m
CFA_TOLERANCE = 0.10         # achieved CFA must land in [0.9, 1.1] x target


class SpecInfeasibleError(Exception):
    """The CFA target cannot be reached with the given rock diameters/extent."""


class TerrainClass(enum.Enum):
    BENIGN = "benign"
    COMPLEX = "complex"


def classify_terrain(slope_deg, cfa) -> TerrainClass:
    """Benign iff CFA <= 7% and slope <= 15 deg (both bounds inclusive)."""
    if cfa <= 0.07 and slope_deg <= 15.0:
        return TerrainClass.BENIGN
    return TerrainClass.COMPLEX


@dataclass(frozen=True)
class TerrainSpec:
    seed: int
    slope_deg: float
    cfa: float
    extent: float = 110.0
    cell: float = 0.1
    rock_diameter_range: tuple = (0.1, 1.5)
    height_ratio: float = 0.5
    keep_clear: tuple = ()  # ((x, y, radius), ...) discs kept rock-free

    def validate(self):
        if not (0.0 <= self.cfa < 0.5):
            raise ValueError("cfa must be in [0, 0.5)")
        if not (0.0 <= self.slope_deg <= 30.0):
            raise ValueError("slope_deg must be in [0, 30]")
        dmin, dmax = self.rock_diameter_range
        if not (0.0 < dmin < dmax):
            raise ValueError("bad rock_diameter_range")
        if self.extent <= 0 or self.cell <= 0:
            raise ValueError("extent and cell must be positive")

    def terrain_class(self) -> TerrainClass:
        return classify_terrain(self.slope_deg, self.cfa)


def _truncated_exp_rate(dmin, dmax, mean_frac=0.4):
    """Rate lambda putting the truncated-exponential mean at dmin + frac*span."""
    span = dmax - dmin
    target = mean_frac * span

    def mean_minus_target(lam):
        # Mean of Exp(lam) truncated to [0, span], shifted by dmin.
        t = lam * span
        return 1.0 / lam - span * math.exp(-t) / (1.0 - math.exp(-t)) - target

    return brentq(mean_minus_target, 1e-9, 1e4)


def _sample_diameter(rng, dmin, dmax, lam):
    u = rng.random()
    span = dmax - dmin
    return dmin - math.log(1.0 - u * (1.0 - math.exp(-lam * span))) / lam


def generate_terrain(spec: TerrainSpec) -> HeightMap:
    """Deterministic fully-known terrain: plane at slope_deg plus rock bumps.

    The plane rises along +x.  Rock diameters follow a truncated exponential
    size-frequency distribution; rocks are drawn from a single seeded stream
    and added until the measured covered-area fraction reaches the CFA target,
    so the same seed with a higher CFA places a superset of rocks.  Rocks
    overlap by max-combination and coverage is measured on the final grid.
    """
    spec.validate()
    n = int(round(spec.extent / spec.cell))
    hmap = HeightMap((0.0, 0.0), spec.cell, n, n)
    xs = (np.arange(n) + 0.5) * spec.cell
    plane = np.tan(math.radians(spec.slope_deg)) * xs
    hmap.heights = np.broadcast_to(plane, (n, n)).copy()
    hmap.known = np.ones((n, n), dtype=bool)
    if spec.cfa <= 0.0:
        return hmap

    dmin, dmax = spec.rock_diameter_range
    lam = _truncated_exp_rate(dmin, dmax)
    rng = np.random.default_rng(spec.seed)
    covered = np.zeros((n, n), dtype=bool)
    total_cells = n * n
    target = spec.cfa
    stop_at = 0.95 * target  # mid-window stop keeps the +-10% contract
    ceiling = (1.0 + CFA_TOLERANCE) * target
    achieved = 0.0
    mean_rock_area = math.pi * (dmin + 0.4 * (dmax - dmin)) ** 2 / 4.0
    max_draws = 2000 + int(200 * target * spec.extent ** 2 / mean_rock_area)

    draws = 0
    while achieved < stop_at and draws < max_draws:
        draws += 1
        d = _sample_diameter(rng, dmin, dmax, lam)
        cx = rng.random() * spec.extent
        cy = rng.random() * spec.extent
        if any(math.hypot(cx - kx, cy - ky) < kr + d / 2.0
               for kx, ky, kr in spec.keep_clear):
            continue
        radius = d / 2.0
        hmax = 0.5 * d * spec.height_ratio
        ix0 = max(0, int((cx - radius) / spec.cell) - 1)
        ix1 = min(n - 1, int((cx + radius) / spec.cell) + 1)
        iy0 = max(0, int((cy - radius) / spec.cell) - 1)
        iy1 = min(n - 1, int((cy + radius) / spec.cell) + 1)
        if ix0 > ix1 or iy0 > iy1:
            continue
        wx = xs[ix0:ix1 + 1] - cx
        wy = xs[iy0:iy1 + 1] - cy
        rr = (wx[None, :] ** 2 + wy[:, None] ** 2) / radius ** 2
        bump = np.where(rr < 1.0, hmax * np.sqrt(np.maximum(0.0, 1.0 - rr)), 0.0)
        win = (slice(iy0, iy1 + 1), slice(ix0, ix1 + 1))
        old_h = hmap.heights[win].copy()
        old_c = covered[win].copy()
        hmap.heights[win] = np.maximum(old_h, plane[None, ix0:ix1 + 1] + bump)
        covered[win] = old_c | (hmap.heights[win] > plane[None, ix0:ix1 + 1]
                                + ROCK_COVER_THRESHOLD)
        new_achieved = achieved + (np.count_nonzero(covered[win])
                                   - np.count_nonzero(old_c)) / total_cells
        if new_achieved > ceiling:
            # Undo a rock that would overshoot the CFA window; smaller draws
            # later will finish the fill.
            hmap.heights[win] = old_h
            covered[win] = old_c
            if achieved >= (1.0 - CFA_TOLERANCE) * target:
                break
            continue
        achieved = new_achieved
    if achieved < (1.0 - CFA_TOLERANCE) * target:
        raise SpecInfeasibleError(
            f"achieved CFA {achieved:.4f} outside window for target {target} "
            f"after {draws} draws")
    return hmap


def measured_cfa(hmap: HeightMap, slope_deg) -> float:
    """Covered-area fraction: cells more than 1 cm above the local plane."""
    n = hmap.width
    xs = (np.arange(n) + 0.5) * hmap.cell_size
    plane = np.tan(math.radians(slope_deg)) * xs
    covered = hmap.heights > plane[None, :] + ROCK_COVER_THRESHOLD
    return float(np.count_nonzero(covered)) / covered.size
