"""Candidate path tree: turn-in-place + fixed-curvature arc primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

TURN_SAMPLE_STEP_DEG = 15.0


@dataclass(frozen=True)
class TurnInPlace:
    angle_deg: float


@dataclass(frozen=True)
class Arc:
    curvature: float  # 1/m, signed; 0 = straight
    length: float     # m


Maneuver = TurnInPlace | Arc


def arc_pose(pose, curvature, arclen):
    """Advance a pose (x, y, heading_deg) along a constant-curvature arc.

    Closed form: zero curvature advances along the heading; otherwise the pose
    moves on a circle of radius 1/curvature and the heading rotates by
    curvature * arclen radians.
    """
    if arclen < 0:
        raise ValueError("arclen must be >= 0")
    x, y, hdeg = pose
    th = math.radians(hdeg)
    if curvature == 0.0:
        return (x + arclen * math.cos(th), y + arclen * math.sin(th), hdeg)
    dth = curvature * arclen
    x2 = x + (math.sin(th + dth) - math.sin(th)) / curvature
    y2 = y - (math.cos(th + dth) - math.cos(th)) / curvature
    return (x2, y2, hdeg + math.degrees(dth))


def _sample_maneuver(pose, m, interval):
    """Poses along one maneuver, endpoint included, start excluded."""
    out = []
    if isinstance(m, TurnInPlace):
        a = m.angle_deg
        n = int(abs(a) // TURN_SAMPLE_STEP_DEG)
        sgn = 1.0 if a >= 0 else -1.0
        for k in range(1, n + 1):
            out.append((pose[0], pose[1], pose[2] + sgn * k * TURN_SAMPLE_STEP_DEG))
        if abs(a) - n * TURN_SAMPLE_STEP_DEG > 1e-12:
            out.append((pose[0], pose[1], pose[2] + a))
        end = (pose[0], pose[1], pose[2] + a)
    else:
        n = int(m.length // interval)
        for k in range(1, n + 1):
            out.append(arc_pose(pose, m.curvature, k * interval))
        if m.length - n * interval > 1e-12:
            out.append(arc_pose(pose, m.curvature, m.length))
        end = arc_pose(pose, m.curvature, m.length)
    if out:
        out[-1] = end
    return out, end


def sample_path(maneuvers, start_pose=(0.0, 0.0, 0.0), interval=0.25):
    """Pose samples along a maneuver sequence, (n, 3) array including start.

    Arcs are sampled every `interval` meters of arc length, turns every 15
    degrees of rotation; maneuver endpoints are always included and junction
    poses are not duplicated.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    poses = [tuple(float(v) for v in start_pose)]
    cur = poses[0]
    for m in maneuvers:
        samples, cur = _sample_maneuver(cur, m, interval)
        poses.extend(samples)
    return np.array(poses, dtype=float)


def default_turn_angles(count=14):
    """Evenly spaced headings over the full circle, always including no-turn."""
    angles = np.linspace(0.0, 360.0, count + 1)[:-1]
    wrapped = np.where(angles > 180.0, angles - 360.0, angles)
    return tuple(float(a) for a in wrapped)


def default_curvatures(count=11, max_curvature=1.0 / 3.0):
    """Symmetric curvature menu: 0 plus +-k evenly spaced up to the maximum."""
    if count % 2 == 0:
        raise ValueError("curvature count must be odd (symmetric about 0)")
    m = count // 2
    ks = [i * max_curvature / m for i in range(1, m + 1)]
    menu = [0.0] + [s * k for k in ks for s in (1.0, -1.0)]
    return tuple(sorted(menu))


@dataclass(frozen=True)
class TreeSpec:
    turn_count: int = 14
    arc_count: int = 11
    arc_length: float = 3.0
    depth: int = 2
    max_curvature: float = 1.0 / 3.0
    prune_mode: str = "none"  # "none" | "keep_best_per_group"

    def turn_angles(self):
        return default_turn_angles(self.turn_count)

    def curvatures(self):
        return default_curvatures(self.arc_count, self.max_curvature)

    @classmethod
    def broader(cls):
        """Each level widened by 4 options: 18 x 15 x 15 = 4050 paths."""
        return cls(turn_count=18, arc_count=15)

    @classmethod
    def deeper_pruned(cls):
        return cls(prune_mode="keep_best_per_group")


@dataclass
class CandidatePath:
    maneuvers: tuple
    poses: np.ndarray          # (n, 3) sampled poses, first = rover pose
    group_key: tuple           # shared-prefix id (turn index, arc indices...)
    actuation_cost: float = 0.0
    terrain_cost: float = 0.0
    heuristic_cost: float = 0.0
    cost_to_go: float = 0.0
    total_cost: float = 0.0

    @property
    def endpoint(self):
        return self.poses[-1]

    def initial_turn_deg(self):
        m = self.maneuvers[0]
        return abs(m.angle_deg) if isinstance(m, TurnInPlace) else 0.0

    def curvature_changes(self):
        arcs = [m.curvature for m in self.maneuvers if isinstance(m, Arc)]
        return sum(1 for a, b in zip(arcs, arcs[1:]) if a != b)


class PathTree:
    """Candidate paths plus flat pose arrays for vectorized ranking.

    `poses` stacks every path's samples; path i owns rows
    [offsets[i], offsets[i+1]).  Shared turn/arc prefixes are computed once at
    construction, but per-path sample counts still include prefix poses so
    clearance-eval accounting stays per-path.
    """

    def __init__(self, paths, interval):
        self.paths = paths
        self.interval = interval
        counts = np.array([len(p.poses) for p in paths])
        self.offsets = np.concatenate([[0], np.cumsum(counts)])
        self.poses = np.concatenate([p.poses for p in paths], axis=0)
        self.n_changes = np.array([p.curvature_changes() for p in paths])
        self.initial_turns = np.array([p.initial_turn_deg() for p in paths])
        self.initial_turns_signed = np.array(
            [m.angle_deg if isinstance(m := p.maneuvers[0], TurnInPlace) else 0.0
             for p in paths])

    @classmethod
    def _from_arrays(cls, paths, interval, offsets, poses, n_changes,
                     initial_turns, initial_turns_signed):
        tree = cls.__new__(cls)
        tree.paths = paths
        tree.interval = interval
        tree.offsets = offsets
        tree.poses = poses
        tree.n_changes = n_changes
        tree.initial_turns = initial_turns
        tree.initial_turns_signed = initial_turns_signed
        return tree

    def __len__(self):
        return len(self.paths)

    def endpoint_indices(self):
        return self.offsets[1:] - 1


@lru_cache(maxsize=8)
def _canonical_tree(spec: TreeSpec, interval: float):
    """Tree rooted at the origin pose; transformed per cycle to the rover."""
    turns = spec.turn_angles()
    curvs = spec.curvatures()
    paths = []
    for ti, ang in enumerate(turns):
        turn = TurnInPlace(ang)
        t_samples, t_end = _sample_maneuver((0.0, 0.0, 0.0), turn, interval)
        stack = [((ti,), (turn,), t_samples, t_end)]
        for _ in range(spec.depth):
            nxt = []
            for key, mans, samples, end in stack:
                for ci, k in enumerate(curvs):
                    arc = Arc(k, spec.arc_length)
                    a_samples, a_end = _sample_maneuver(end, arc, interval)
                    nxt.append((key + (ci,), mans + (arc,),
                                samples + a_samples, a_end))
            stack = nxt
        for key, mans, samples, _ in stack:
            poses = np.array([(0.0, 0.0, 0.0)] + samples, dtype=float)
            paths.append(CandidatePath(mans, poses, key))
    return PathTree(paths, interval)


def _transform_poses(poses, start_pose):
    x, y, hdeg = start_pose
    th = math.radians(hdeg)
    c, s = math.cos(th), math.sin(th)
    out = np.empty_like(poses)
    out[:, 0] = x + c * poses[:, 0] - s * poses[:, 1]
    out[:, 1] = y + s * poses[:, 0] + c * poses[:, 1]
    out[:, 2] = poses[:, 2] + hdeg
    return out


def build_tree(spec: TreeSpec, start_pose=(0.0, 0.0, 0.0), interval=0.25) -> PathTree:
    """Full Cartesian tree of turn x arc^depth candidate paths at a pose."""
    canon = _canonical_tree(spec, interval)
    moved = _transform_poses(canon.poses, start_pose)
    paths = []
    for i, p in enumerate(canon.paths):
        poses = moved[canon.offsets[i]:canon.offsets[i + 1]]
        paths.append(CandidatePath(p.maneuvers, poses, p.group_key))
    return PathTree._from_arrays(paths, interval, canon.offsets, moved,
                                 canon.n_changes, canon.initial_turns,
                                 canon.initial_turns_signed)


class EmptyGroupError(Exception):
    """Every depth-2 sibling group came back all-infinite."""


def extend_pruned(tree: PathTree, costs, spec: TreeSpec) -> PathTree:
    """Keep the cheapest leaf of each sibling group, then extend by one level.

    `costs` holds one ranking cost per path of the depth-2 tree (+inf allowed).
    Within each group of leaves sharing a parent, the lowest-cost one survives
    (ties: smallest |curvature| of the final arc, then first in menu order);
    groups that are entirely infinite are dropped.  Every survivor is extended
    by the full arc menu.
    """
    costs = np.asarray(costs, dtype=float)
    if len(costs) != len(tree.paths):
        raise ValueError("one cost per path required")
    groups = {}
    for i, p in enumerate(tree.paths):
        groups.setdefault(p.group_key[:-1], []).append(i)
    curvs = spec.curvatures()
    kept = []
    for key in sorted(groups):
        idxs = groups[key]
        finite = [i for i in idxs if np.isfinite(costs[i])]
        if not finite:
            continue
        # Ties: smallest |curvature| of the final arc, then the left option.
        finite.sort(key=lambda i: (costs[i],
                                   abs(tree.paths[i].maneuvers[-1].curvature),
                                   -tree.paths[i].maneuvers[-1].curvature))
        kept.append(finite[0])
    if not kept:
        raise EmptyGroupError("all sibling groups are infinite")
    paths = []
    for i in kept:
        base = tree.paths[i]
        end = tuple(base.poses[-1])
        for ci, k in enumerate(curvs):
            arc = Arc(k, spec.arc_length)
            samples, _ = _sample_maneuver(end, arc, tree.interval)
            poses = np.concatenate([base.poses, np.array(samples)], axis=0)
            paths.append(CandidatePath(base.maneuvers + (arc,), poses,
                                       base.group_key + (ci,)))
    return PathTree(paths, tree.interval)
