"""Conservative clearance evaluation of rover poses over a heightmap.

For a pose, the terrain under each wheel's potential footprint is reduced to a
(min, max) height interval; worst-case combinations of those intervals bound
the attitude, the suspension deflections, and the belly clearance.  A pose is
infeasible when any bound reaches its limit; otherwise a finite cost grows
quadratically with proximity to the limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .heightmap import HeightMap
from .pathtree import CandidatePath, sample_path

ACEMAP_HEADINGS = tuple(float(a) for a in range(0, 360, 45))


@dataclass(frozen=True)
class RoverGeometry:
    track: float = 2.2
    wheelbase: float = 2.6
    wheel_size: tuple = (0.4, 0.32)   # body-frame (x, y) extent of a footprint
    belly_size: tuple = (1.8, 1.2)
    belly_height: float = 0.6         # nominal belly pan height above contact
    # Effective lever arms for the suspension deflection bounds.  They divide
    # worst-case height differences that include the slope common mode, so
    # they are longer than the physical links; shorter values reject smooth
    # slopes the rover can actually hold.
    rocker_length: float = 3.5
    bogie_length: float = 2.2
    belly_bands: int = 6              # lengthwise belly subdivisions

    def wheel_centers(self):
        """Body-frame centers, order FL, ML, RL, FR, MR, RR."""
        hx, ht = self.wheelbase / 2.0, self.track / 2.0
        return ((hx, ht), (0.0, ht), (-hx, ht),
                (hx, -ht), (0.0, -ht), (-hx, -ht))

    def belly_patches(self):
        """Belly pan split into patches with bilinear support weights.

        Each patch is ((cx, cy), (sx, sy), ia, ib, (t0, t1), (mu0, mu1)).
        The pan over a patch sits no lower than the bilinear interpolation of
        the wheel supports: along x between left-side wheels ia/ib with weight
        t (right side uses ia+3/ib+3), and across the track with weight mu on
        the left side.  t and mu are given at the patch edges.
        """
        sx = self.belly_size[0] / self.belly_bands
        sy = self.belly_size[1] / 2.0
        xe = np.linspace(-self.belly_size[0] / 2.0, self.belly_size[0] / 2.0,
                         self.belly_bands + 1)
        half_span = self.wheelbase / 2.0
        patches = []
        for cy, y_edges in ((sy / 2.0, (0.0, sy)), (-sy / 2.0, (-sy, 0.0))):
            mu = tuple(np.clip((y + self.track / 2.0) / self.track, 0.0, 1.0)
                       for y in y_edges)
            for e0, e1 in zip(xe[:-1], xe[1:]):
                cx = (e0 + e1) / 2.0
                if cx >= 0:
                    ia, ib = 0, 1  # front, middle
                    t = (max(0.0, e0 / half_span), max(0.0, e1 / half_span))
                else:
                    ia, ib = 2, 1  # rear, middle
                    t = (max(0.0, -e0 / half_span), max(0.0, -e1 / half_span))
                patches.append(((cx, cy), (sx, sy), ia, ib, t, mu))
        return patches


@dataclass(frozen=True)
class AceLimits:
    max_roll_deg: float = 35.0
    max_pitch_deg: float = 35.0
    max_rocker_deg: float = 20.0
    max_bogie_deg: float = 25.0
    min_clearance: float = 0.25
    # Poses with any footprint imaged below this fraction come back feasible
    # with a flat penalty instead of a verdict: unimaged ground is costly but
    # not prohibitive.
    known_fraction_threshold: float = 0.5
    unknown_penalty: float = 25.0

    def validate(self):
        for v in (self.max_roll_deg, self.max_pitch_deg, self.max_rocker_deg,
                  self.max_bogie_deg, self.min_clearance):
            if v <= 0:
                raise ValueError("limits must be strictly positive")


MARGIN_NAMES = ("roll", "pitch", "rocker", "bogie", "clearance")


@dataclass
class AceResult:
    feasible: bool
    cost: float                 # finite iff feasible
    margins: np.ndarray         # worst-case bound/limit ratios, MARGIN_NAMES order
    unknown_fraction: float
    insufficient: bool = False  # True when the penalty path was taken


@dataclass
class AcePathResult:
    feasible: bool
    cost: float
    eval_count: int


@dataclass
class AceMap:
    """Per-cell, per-heading infeasibility aligned to a heightmap grid.

    `values[iy, ix, k]` is 1.0/0.0 ground truth (or a probability in [0, 1]
    when predicted) for heading ACEMAP_HEADINGS[k]; NaN marks cells the
    evaluator could not assess.
    """
    origin: np.ndarray
    cell_size: float
    values: np.ndarray  # (h, w, 8)

    def world_to_cell(self, x, y):
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(int)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size).astype(int)
        return ix, iy


def _world_rects(pose, geom: RoverGeometry):
    """Axis-aligned bounds of the rotated wheel footprints and belly patches.

    Returns 6 wheel rects followed by the belly patch rects, each
    (xmin, ymin, xmax, ymax).  The AABB of a rotated rectangle over-covers it,
    keeping the height intervals conservative for any heading.
    """
    x, y, hdeg = pose
    th = math.radians(hdeg)
    c, s = math.cos(th), math.sin(th)
    ac, as_ = abs(c), abs(s)
    centers = list(geom.wheel_centers())
    shapes = [geom.wheel_size] * 6
    for center, size, *_ in geom.belly_patches():
        centers.append(center)
        shapes.append(size)
    rects = []
    for (ox, oy), (sx, sy) in zip(centers, shapes):
        cx = x + c * ox - s * oy
        cy = y + s * ox + c * oy
        hx = (ac * sx + as_ * sy) / 2.0
        hy = (as_ * sx + ac * sy) / 2.0
        rects.append((cx - hx, cy - hy, cx + hx, cy + hy))
    return rects


@lru_cache(maxsize=32)
def _patch_weights(geom: RoverGeometry):
    return tuple(geom.belly_patches())


def _combine_bounds(wmin, wmax, patch_max, geom, limits):
    """Worst-case bound/limit ratios from per-footprint height intervals.

    Works elementwise, so the inputs may be scalars or full-grid arrays
    (wmin/wmax stacked (6, ...), patch_max (n_patches, ...)).  Returns the
    (5, ...) ratio stack in MARGIN_NAMES order.
    """
    track, base = geom.track, geom.wheelbase
    max_l = np.max(wmax[0:3], axis=0)
    min_l = np.min(wmin[0:3], axis=0)
    max_r = np.max(wmax[3:6], axis=0)
    min_r = np.min(wmin[3:6], axis=0)
    roll = np.arctan(np.maximum(np.maximum(max_l - min_r, max_r - min_l), 0.0) / track)

    max_f = np.maximum(wmax[0], wmax[3])
    min_f = np.minimum(wmin[0], wmin[3])
    max_b = np.maximum(wmax[2], wmax[5])
    min_b = np.minimum(wmin[2], wmin[5])
    pitch = np.arctan(np.maximum(np.maximum(max_f - min_b, max_b - min_f), 0.0) / base)

    rocker = 0.0
    bogie = 0.0
    for f, m, r in ((0, 1, 2), (3, 4, 5)):
        up = wmax[f] - (wmin[m] + wmin[r]) / 2.0
        down = (wmax[m] + wmax[r]) / 2.0 - wmin[f]
        rocker = np.maximum(rocker, np.maximum(np.maximum(up, down), 0.0))
        b_up = wmax[m] - wmin[r]
        b_down = wmax[r] - wmin[m]
        bogie = np.maximum(bogie, np.maximum(np.maximum(b_up, b_down), 0.0))
    rocker = np.arctan(rocker / geom.rocker_length)
    bogie = np.arctan(bogie / geom.bogie_length)

    # Belly clearance per patch: the pan sits no lower than the bilinear
    # interpolation of the wheel window minima (min over the patch corners);
    # worst terrain under the patch comes from its own window max.
    clear_ratio = 0.0
    for k, (_, _, ia, ib, ts, mus) in enumerate(_patch_weights(geom)):
        support = np.inf
        for t in ts:
            s_left = t * wmin[ia] + (1.0 - t) * wmin[ib]
            s_right = t * wmin[ia + 3] + (1.0 - t) * wmin[ib + 3]
            for mu in mus:
                support = np.minimum(support, mu * s_left + (1.0 - mu) * s_right)
        lb = geom.belly_height + support - patch_max[k]
        ratio = np.where(lb > 0.0,
                         limits.min_clearance / np.where(lb > 0.0, lb, 1.0),
                         np.inf)
        clear_ratio = np.maximum(clear_ratio, ratio)

    return np.stack([
        np.degrees(roll) / limits.max_roll_deg,
        np.degrees(pitch) / limits.max_pitch_deg,
        np.degrees(rocker) / limits.max_rocker_deg,
        np.degrees(bogie) / limits.max_bogie_deg,
        clear_ratio,
    ])


@lru_cache(maxsize=32)
def _footprint_arrays(geom: RoverGeometry):
    """Window layout shared by all evaluation paths: 6 wheels then patches."""
    centers = list(geom.wheel_centers())
    sizes = [geom.wheel_size] * 6
    for center, size, *_ in geom.belly_patches():
        centers.append(center)
        sizes.append(size)
    return (np.array(centers, dtype=float), np.array(sizes, dtype=float),
            len(centers) - 6)


def _window_bounds(hmap, x, y, cth, sth, geom):
    """Unclipped index bounds of every footprint window for pose arrays.

    x, y, cth, sth broadcast against each other; returns int arrays shaped
    (..., n_windows, 4) split as ix0, ix1, iy0, iy1.
    """
    centers, sizes, _ = _footprint_arrays(geom)
    ox, oy = centers[:, 0], centers[:, 1]
    sx, sy = sizes[:, 0], sizes[:, 1]
    x = np.asarray(x)[..., None]
    y = np.asarray(y)[..., None]
    c = np.asarray(cth)[..., None]
    s = np.asarray(sth)[..., None]
    cx = x + c * ox - s * oy
    cy = y + s * ox + c * oy
    hx = (np.abs(c) * sx + np.abs(s) * sy) / 2.0
    hy = (np.abs(s) * sx + np.abs(c) * sy) / 2.0
    r = hmap.cell_size
    ix0 = np.floor(((cx - hx) - hmap.origin[0]) / r).astype(np.int64)
    ix1 = np.floor(((cx + hx) - hmap.origin[0]) / r).astype(np.int64)
    iy0 = np.floor(((cy - hy) - hmap.origin[1]) / r).astype(np.int64)
    iy1 = np.floor(((cy + hy) - hmap.origin[1]) / r).astype(np.int64)
    return ix0, ix1, iy0, iy1


def _batch_evaluate(hmap, poses, geom, limits):
    """Vectorized clearance evaluation of an (n, 3) pose array.

    Returns (feasible, cost, ratios, kf_mean, insufficient) arrays; poses with
    any under-imaged footprint come back feasible at the flat penalty cost.
    """
    poses = np.asarray(poses, dtype=float)
    th = np.radians(poses[:, 2])
    ix0, ix1, iy0, iy1 = _window_bounds(hmap, poses[:, 0], poses[:, 1],
                                        np.cos(th), np.sin(th), geom)
    stats = hmap.window_stats()
    mn, mx, nk = stats.minmax_known(ix0, ix1, iy0, iy1)
    total = (ix1 - ix0 + 1) * (iy1 - iy0 + 1)
    kf = nk / total
    wmin = mn[:, :6].T
    wmax = mx[:, :6].T
    patch_max = mx[:, 6:].T
    insufficient = kf.min(axis=1) < limits.known_fraction_threshold
    with np.errstate(invalid="ignore"):
        ratios = _combine_bounds(wmin, wmax, patch_max, geom, limits)
        ratios = np.where(np.isnan(ratios), np.inf, ratios)
        ok = np.all(ratios < 1.0, axis=0)
        cost = np.where(ok, np.sum(ratios ** 2, axis=0), np.inf)
    feasible = ok | insufficient
    cost = np.where(insufficient, limits.unknown_penalty, cost)
    return feasible, cost, ratios, kf.mean(axis=1), insufficient


def evaluate_pose(hmap: HeightMap, pose, geom: RoverGeometry,
                  limits: AceLimits) -> AceResult:
    """Clearance verdict for one pose (x, y, heading_deg).

    Feasible poses cost the sum of squared bound/limit ratios; any ratio
    reaching 1 is infeasible.  Poses whose footprints are insufficiently
    imaged take the flat-penalty path instead of a verdict.
    """
    feasible, cost, ratios, kf_mean, insufficient = _batch_evaluate(
        hmap, np.asarray(pose, dtype=float)[None, :], geom, limits)
    if insufficient[0]:
        return AceResult(True, limits.unknown_penalty, np.zeros(5),
                         1.0 - float(kf_mean[0]), insufficient=True)
    return AceResult(bool(feasible[0]), float(cost[0]), ratios[:, 0],
                     1.0 - float(kf_mean[0]))


def evaluate_poses(hmap, poses, geom, limits) -> AcePathResult:
    """Accumulate pose evaluations in order, stopping at the first infeasible."""
    poses = np.asarray(poses, dtype=float)
    if len(poses) == 0:
        return AcePathResult(True, 0.0, 0)
    feasible, cost, *_ = _batch_evaluate(hmap, poses, geom, limits)
    bad = np.nonzero(~feasible)[0]
    if bad.size:
        return AcePathResult(False, math.inf, int(bad[0]) + 1)
    return AcePathResult(True, float(cost.sum()), len(poses))


def evaluate_path(hmap, path, geom, limits, interval=0.25) -> AcePathResult:
    """Evaluate a candidate path at regular intervals along its maneuvers.

    Arc poses are sampled every `interval` meters, turns every 15 degrees; the
    start pose is evaluated once.  Cost accumulates over samples and the walk
    stops at the first infeasible pose.
    """
    if isinstance(path, CandidatePath):
        poses = sample_path(path.maneuvers, tuple(path.poses[0]), interval)
    else:
        poses = np.asarray(path, dtype=float)
    return evaluate_poses(hmap, poses, geom, limits)


def _shift2d(arr, sy, sx, fill):
    """arr translated so out[i, j] = arr[i + sy, j + sx], fill elsewhere."""
    h, w = arr.shape
    out = np.full_like(arr, fill)
    y0, y1 = max(0, -sy), min(h, h - sy)
    x0, x1 = max(0, -sx), min(w, w - sx)
    if y0 < y1 and x0 < x1:
        out[y0:y1, x0:x1] = arr[y0 + sy:y1 + sy, x0 + sx:x1 + sx]
    return out


def _pad_integral(counts_integral, pad):
    """Integral table extended by edge replication: clamped reads by slicing."""
    return np.pad(counts_integral, pad, mode="edge")


def _window_counts(padded_integral, pad, shape, bounds):
    """Known-cell count of the window at offset `bounds` from every cell."""
    ix0, ix1, iy0, iy1 = bounds
    h, w = shape

    def read(dy, dx):
        return padded_integral[pad + dy:pad + dy + h, pad + dx:pad + dx + w]

    return (read(iy1 + 1, ix1 + 1) - read(iy0, ix1 + 1)
            - read(iy1 + 1, ix0) + read(iy0, ix0))


def build_ground_truth_acemap(hmap: HeightMap, geom: RoverGeometry,
                              limits: AceLimits) -> AceMap:
    """Per-cell infeasibility for the eight fixed headings, run in bulk.

    Equivalent to calling evaluate_pose at every cell center for every
    heading, vectorized with separable window filters at constant per-heading
    index offsets.  Cells that fail the known-fraction threshold carry NaN so
    training can mask them out.  Footprint offsets landing exactly on a cell
    boundary could tip differently here than in the per-pose path; the
    default geometry keeps every offset clear of half-cell alignments.
    """
    from scipy import ndimage

    h, w = hmap.height, hmap.width
    values = np.empty((h, w, len(ACEMAP_HEADINGS)))
    hmin = np.where(hmap.known, hmap.heights, np.inf)
    hmax = np.where(hmap.known, hmap.heights, -np.inf)
    pad = int(math.ceil((math.hypot(*geom.wheel_centers()[0])
                         + max(geom.belly_size) + 1.0) / hmap.cell_size))
    counts = _pad_integral(hmap.window_stats()._counts, pad)
    iref, jref = h // 2, w // 2
    ref_x, ref_y = hmap.cell_center(jref, iref)
    _, _, n_patches = _footprint_arrays(geom)

    for ch, heading in enumerate(ACEMAP_HEADINGS):
        th = math.radians(heading)
        bx0, bx1, by0, by1 = _window_bounds(hmap, ref_x, ref_y,
                                            math.cos(th), math.sin(th), geom)
        wmin = np.empty((6, h, w))
        wmax = np.empty((6, h, w))
        patch_max = np.empty((n_patches, h, w))
        kf_min = np.full((h, w), np.inf)
        # Windows of one shape share one filter pass; per-window results are
        # integer shifts of it (all wheels share a size, as do all patches).
        cache = {}
        for i in range(6 + n_patches):
            bounds = (int(bx0[i]) - jref, int(bx1[i]) - jref,
                      int(by0[i]) - iref, int(by1[i]) - iref)
            ix0, ix1, iy0, iy1 = bounds
            dx, dy = ix1 - ix0 + 1, iy1 - iy0 + 1
            base = cache.get((dx, dy))
            if base is None:
                base = (
                    ndimage.minimum_filter(hmin, size=(dy, dx),
                                           mode="constant", cval=np.inf),
                    ndimage.maximum_filter(hmax, size=(dy, dx),
                                           mode="constant", cval=-np.inf),
                )
                cache[(dx, dy)] = base
            kf = _window_counts(counts, pad, (h, w), bounds) / (dx * dy)
            kf_min = np.minimum(kf_min, kf)
            sy, sx = iy0 + dy // 2, ix0 + dx // 2
            if i < 6:
                wmin[i] = _shift2d(base[0], sy, sx, np.inf)
                wmax[i] = _shift2d(base[1], sy, sx, -np.inf)
            else:
                patch_max[i - 6] = _shift2d(base[1], sy, sx, -np.inf)
        insufficient = kf_min < limits.known_fraction_threshold
        with np.errstate(invalid="ignore"):
            ratios = _combine_bounds(wmin, wmax, patch_max, geom, limits)
            infeasible = np.any(ratios >= 1.0, axis=0)
        channel = np.where(infeasible, 1.0, 0.0)
        channel[insufficient] = np.nan
        values[:, :, ch] = channel
    return AceMap(hmap.origin.copy(), hmap.cell_size, values)
