"""Closed-loop trial execution: synthetic sensing, slip, failure detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ace import RoverGeometry
from .heightmap import HeightMap, integrate_points, recenter
from .pathtree import Arc, TurnInPlace, arc_pose, sample_path
from .planner import (GoalInfeasibleError, NoFeasiblePathError, PlannerConfig,
                      plan_cycle)
from .terraingen import TerrainSpec, generate_terrain
from .bridge import ProviderSpec, make_provider


@dataclass(frozen=True)
class SensorWedge:
    fov_deg: float = 120.0
    min_range: float = 0.5
    max_range: float = 8.0
    noise_sigma: float = 0.0  # zero keeps trials deterministic


@dataclass(frozen=True)
class SlipParams:
    s0: float = 0.02        # baseline longitudinal slip fraction
    s1: float = 0.3         # extra slip per radian of opposing slope
    heading_drift: float = 0.02  # rad of drift per rad of cross-slope


@dataclass(frozen=True)
class SafetyLimits:
    """True-pose limits checked on ground truth; looser than the clearance
    evaluator's limits so the gate keeps a margin over execution drift."""
    max_roll_deg: float = 40.0
    max_pitch_deg: float = 40.0
    min_clearance: float = 0.15


@dataclass(frozen=True)
class SimConfig:
    terrain: TerrainSpec
    goal_distance: float = 80.0
    goal_radius: float = 1.5
    timeout_cycles: int = 400
    wedge: SensorWedge = SensorWedge()
    slip: SlipParams = SlipParams()
    safety: SafetyLimits = SafetyLimits()
    planner: PlannerConfig = PlannerConfig()
    provider: ProviderSpec = ProviderSpec()
    heightmap_extent: float = 20.0
    start_margin: float = 15.0      # start x, and extent margin around it
    log_heightmaps: int = 0         # reservoir size of per-cycle snapshots
    seed: int = 0

    def start_pose(self):
        y = self.terrain.extent / 2.0
        return (self.start_margin, y, 0.0)

    def goal_xy(self):
        y = self.terrain.extent / 2.0
        return (self.start_margin + self.goal_distance, y)

    def with_clear_discs(self):
        """Terrain spec with rock-free discs added at the start and goal."""
        sx, sy, _ = self.start_pose()
        gx, gy = self.goal_xy()
        discs = ((sx, sy, 4.0), (gx, gy, 2.0))
        return replace(self.terrain, keep_clear=self.terrain.keep_clear + discs)


@dataclass
class TrialResult:
    outcome: str                # success | timeout | no_feasible_path | safety_violation
    path_length: float
    straight_line: float
    cycles: int
    ace_evals: list
    overthink: list
    final_pose: tuple
    seed: int
    snapshots: list = field(default_factory=list, repr=False)

    @property
    def inefficiency(self):
        """Driven length over straight-line distance, minus one (success only)."""
        return self.path_length / self.straight_line - 1.0

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "path_length": round(self.path_length, 9),
            "straight_line": round(self.straight_line, 9),
            "cycles": int(self.cycles),
            "ace_evals": [int(e) for e in self.ace_evals],
            "overthink": [bool(o) for o in self.overthink],
            "final_pose": [round(float(v), 9) for v in self.final_pose],
            "seed": int(self.seed),
        }


def sense(truth: HeightMap, pose, wedge: SensorWedge, rng=None):
    """Point cloud of true-terrain cell centers inside the sensing wedge.

    Cells whose center lies within [min_range, max_range] of the pose and
    within +-fov/2 of the heading emit one point at the true height, plus
    zero-mean noise when sigma > 0.
    """
    x, y, hdeg = pose
    r = truth.cell_size
    ix0 = max(0, int((x - wedge.max_range - truth.origin[0]) / r))
    ix1 = min(truth.width - 1, int((x + wedge.max_range - truth.origin[0]) / r) + 1)
    iy0 = max(0, int((y - wedge.max_range - truth.origin[1]) / r))
    iy1 = min(truth.height - 1, int((y + wedge.max_range - truth.origin[1]) / r) + 1)
    if ix0 > ix1 or iy0 > iy1:
        return np.empty((0, 3))
    cx = truth.origin[0] + (np.arange(ix0, ix1 + 1) + 0.5) * r
    cy = truth.origin[1] + (np.arange(iy0, iy1 + 1) + 0.5) * r
    dx = cx[None, :] - x
    dy = cy[:, None] - y
    dist = np.hypot(dx, dy)
    ok = (dist >= wedge.min_range) & (dist <= wedge.max_range)
    if wedge.fov_deg < 360.0:
        bearing = np.degrees(np.arctan2(dy, dx)) - hdeg
        bearing = (bearing + 180.0) % 360.0 - 180.0
        ok &= np.abs(bearing) <= wedge.fov_deg / 2.0
    ok &= truth.known[iy0:iy1 + 1, ix0:ix1 + 1]
    yy, xx = np.nonzero(ok)
    z = truth.heights[iy0 + yy, ix0 + xx]
    if wedge.noise_sigma > 0.0 and rng is not None:
        z = z + rng.normal(0.0, wedge.noise_sigma, size=z.shape)
    return np.column_stack([cx[xx], cy[yy], z])


def _true_slope(truth: HeightMap, pose):
    """Central-difference terrain gradient (dz/dx, dz/dy) at the pose cell."""
    ix, iy = truth.world_to_cell(pose[0], pose[1])
    ix = int(np.clip(ix, 1, truth.width - 2))
    iy = int(np.clip(iy, 1, truth.height - 2))
    r = truth.cell_size
    gx = (truth.heights[iy, ix + 1] - truth.heights[iy, ix - 1]) / (2.0 * r)
    gy = (truth.heights[iy + 1, ix] - truth.heights[iy - 1, ix]) / (2.0 * r)
    return gx, gy


def execute_maneuver(pose, command, truth: HeightMap, slip: SlipParams):
    """Apply a maneuver with slope-dependent slip; returns (pose, length).

    Turns execute exactly.  Arc progress is scaled by (1 - s) where
    s = s0 + s1 * max(0, opposing slope angle), clamped to [0, 0.9]; the
    heading also drifts proportionally to the cross-slope angle.  The slope
    is sampled once at the starting pose.
    """
    if isinstance(command, TurnInPlace):
        return (pose[0], pose[1], pose[2] + command.angle_deg), 0.0
    gx, gy = _true_slope(truth, pose)
    th = math.radians(pose[2])
    along = gx * math.cos(th) + gy * math.sin(th)
    cross = -gx * math.sin(th) + gy * math.cos(th)
    s = min(0.9, max(0.0, slip.s0 + slip.s1 * max(0.0, math.atan(along))))
    eff = command.length * (1.0 - s)
    new_pose = arc_pose(pose, command.curvature, eff)
    drift = math.degrees(slip.heading_drift * math.atan(cross))
    return (new_pose[0], new_pose[1], new_pose[2] + drift), eff


def true_pose_metrics(truth: HeightMap, pose, geom: RoverGeometry):
    """Settled attitude and belly clearance on ground truth.

    Wheels contact the terrain at their center points; a least-squares plane
    through the six contacts gives roll/pitch, and clearance is the minimum
    gap between the belly pan (parallel to that plane) and the terrain under
    the belly rectangle.
    """
    x, y, hdeg = pose
    th = math.radians(hdeg)
    c, s = math.cos(th), math.sin(th)
    bx = np.array([w[0] for w in geom.wheel_centers()])
    by = np.array([w[1] for w in geom.wheel_centers()])
    wx = x + c * bx - s * by
    wy = y + s * bx + c * by
    hz = np.array([truth.height_at(px, py) for px, py in zip(wx, wy)])
    if np.isnan(hz).any():
        return math.nan, math.nan, math.nan
    # Fit h = a*x_body + b*y_body + c0 over the wheel contacts.
    A = np.column_stack([bx, by, np.ones(6)])
    (a, b, c0), *_ = np.linalg.lstsq(A, hz, rcond=None)
    pitch = math.degrees(math.atan(a))
    roll = math.degrees(math.atan(b))
    # Sample the belly rectangle on a fine grid in the body frame.
    gx = np.linspace(-geom.belly_size[0] / 2.0, geom.belly_size[0] / 2.0, 13)
    gy = np.linspace(-geom.belly_size[1] / 2.0, geom.belly_size[1] / 2.0, 9)
    bgx, bgy = np.meshgrid(gx, gy)
    px = x + c * bgx - s * bgy
    py = y + s * bgx + c * bgy
    ix, iy = truth.world_to_cell(px.ravel(), py.ravel())
    ix = np.clip(ix, 0, truth.width - 1)
    iy = np.clip(iy, 0, truth.height - 1)
    terrain = truth.heights[iy, ix]
    belly_z = a * bgx.ravel() + b * bgy.ravel() + c0 + geom.belly_height
    clearance = float(np.min(belly_z - terrain))
    return roll, pitch, clearance


def _violates_safety(truth, pose, geom, safety: SafetyLimits):
    roll, pitch, clearance = true_pose_metrics(truth, pose, geom)
    if math.isnan(roll):
        return False  # off-map contact cannot be judged; bounds keep it rare
    return (abs(roll) > safety.max_roll_deg
            or abs(pitch) > safety.max_pitch_deg
            or clearance < safety.min_clearance)


def run_trial(config: SimConfig) -> TrialResult:
    """Run one sense-plan-act loop on synthetic terrain until it resolves.

    Outcomes: success (goal radius reached), timeout (cycle budget), a cycle
    with no clearance-passing path, or a true-pose safety violation detected
    on ground truth along an executed maneuver.
    """
    truth = generate_terrain(config.with_clear_discs())
    pose = config.start_pose()
    goal = config.goal_xy()
    start_xy = np.array(pose[:2])
    straight = float(np.hypot(goal[0] - pose[0], goal[1] - pose[1]))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    provider = make_provider(config.provider, config.planner.geom,
                             config.planner.limits)
    hmap = HeightMap.rover_centered(pose[:2], config.heightmap_extent,
                                    config.terrain.cell)
    # Costmap frame fixed for the whole trial, covering start and goal.
    cc = config.planner.analysis.costmap_cell
    n = int(round(config.planner.analysis.costmap_extent / cc))
    mid = ((pose[0] + goal[0]) / 2.0, (pose[1] + goal[1]) / 2.0)
    frame = ((mid[0] - n * cc / 2.0, mid[1] - n * cc / 2.0), n, n)

    evals, overthink, snapshots = [], [], []
    seen = 0
    path_length = 0.0
    outcome = "timeout"
    cycles = 0
    command = None
    try:
        for cycle in range(config.timeout_cycles):
            cycles = cycle + 1
            hmap = recenter(hmap, pose[:2])
            pts = sense(truth, pose, config.wedge, rng)
            hmap = integrate_points(hmap, pts)
            try:
                command, plan = plan_cycle(hmap, pose, goal, config.planner,
                                           provider, costmap_frame=frame,
                                           last_command=command)
            except (NoFeasiblePathError, GoalInfeasibleError):
                outcome = "no_feasible_path"
                break
            evals.append(plan.ace_evals)
            overthink.append(plan.overthink)
            if config.log_heightmaps:
                # Seeded reservoir keeps a uniform sample of cycle snapshots.
                if len(snapshots) < config.log_heightmaps:
                    snapshots.append(hmap)
                else:
                    j = int(rng.integers(0, seen + 1))
                    if j < config.log_heightmaps:
                        snapshots[j] = hmap
                seen += 1

            new_pose, dlen = execute_maneuver(pose, command, truth, config.slip)
            path_length += dlen
            violated = False
            if isinstance(command, Arc) and dlen > 0.0:
                steps = sample_path((Arc(command.curvature, dlen),), pose, 0.25)
            else:
                steps = [new_pose]
            for p in steps[1:] if len(steps) > 1 else steps:
                if _violates_safety(truth, p, config.planner.geom, config.safety):
                    violated = True
                    break
            pose = new_pose
            if violated:
                outcome = "safety_violation"
                break
            if math.hypot(goal[0] - pose[0], goal[1] - pose[1]) <= config.goal_radius:
                outcome = "success"
                break
    finally:
        provider.close()
    return TrialResult(outcome, path_length, straight, cycles, evals,
                       overthink, tuple(pose), config.seed, snapshots)
