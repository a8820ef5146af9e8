"""Path selection: cost-to-go, heuristic ranking, clearance-gated choice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sparse_dijkstra

from .ace import ACEMAP_HEADINGS, AceLimits, RoverGeometry, evaluate_poses
from .analysis import (AnalysisParams, CostMap, build_costmap,
                       compute_gradient_maps, inject_heuristic_costs)
from .bridge import request_acemap
from .pathtree import Arc, TreeSpec, TurnInPlace, build_tree, extend_pruned


class GoalInfeasibleError(Exception):
    """The goal cell is impassable in the current costmap."""


class NoFeasiblePathError(Exception):
    """No candidate passed the clearance gate; carries the PlanResult."""

    def __init__(self, result):
        super().__init__(result.failure_reason)
        self.result = result


@dataclass(frozen=True)
class RankingWeights:
    turn_cost_base: float = 5.0
    turn_cost_per_deg: float = 0.05
    curvature_change_cost: float = 0.5
    # Charged when the initial turn reverses the previous cycle's turning
    # direction; damps flip-flop oscillation at symmetric decision points,
    # since only the first 30 degrees of a turn are ever actuated.
    turn_reversal_cost: float = 10.0
    terrain_weight: float = 0.25       # per costmap sample (~cost * meters)
    gradient_weight: float = 1.0       # scales the injected convolution term
    learned_factor: float = 5.0        # scales clearance probabilities
    cost_to_go_weight: float = 1.0

    def _fields(self):
        return (self.turn_cost_base, self.turn_cost_per_deg,
                self.curvature_change_cost, self.turn_reversal_cost,
                self.terrain_weight, self.gradient_weight, self.learned_factor,
                self.cost_to_go_weight)

    def validate(self):
        for v in self._fields():
            if v < 0:
                raise ValueError("ranking weights must be >= 0")

    def scaled(self, factor):
        return RankingWeights(*(factor * v for v in self._fields()))


@dataclass(frozen=True)
class Budget:
    # Hard cap exists so a boxed-in cycle terminates; it is far above the
    # overthink threshold so the metric, not the cap, reflects list quality.
    max_ace_evals: int = 4000
    min_evals_after_feasible: int = 100
    overthink_threshold: int = 275
    first_feasible: bool = False


@dataclass
class PlanResult:
    path: object               # chosen CandidatePath or None
    ace_evals: int
    overthink: bool
    n_feasible: int = 0
    paths_checked: int = 0
    chosen_ace_cost: float = math.inf
    failure_reason: str | None = None
    ranked_head: list = field(default_factory=list)  # (total, feasible?) diag

    def to_dict(self):
        return {
            "chosen": self.path is not None,
            "ace_evals": int(self.ace_evals),
            "overthink": bool(self.overthink),
            "n_feasible": int(self.n_feasible),
            "paths_checked": int(self.paths_checked),
            "failure_reason": self.failure_reason,
        }


def dijkstra_cost_to_go(cmap: CostMap, goal) -> np.ndarray:
    """8-connected minimum cost from every cell to the goal cell.

    Edge weight is the mean of the endpoint cell costs times the step length
    (cell size, x sqrt(2) on diagonals); infinite cells are impassable and
    unreachable cells come back +inf.
    """
    jx, jy = cmap.world_to_cell(goal[0], goal[1])
    if not (0 <= jx < cmap.width and 0 <= jy < cmap.height):
        raise GoalInfeasibleError("goal outside the costmap")
    if cmap.infinite[jy, jx]:
        raise GoalInfeasibleError("goal cell is impassable")
    h, w = cmap.height, cmap.width
    n = h * w
    fin = ~cmap.infinite
    cost = cmap.base_cost
    idx = np.arange(n).reshape(h, w)
    rows, cols, data = [], [], []
    for dy, dx, step in ((0, 1, 1.0), (1, 0, 1.0),
                         (1, 1, math.sqrt(2.0)), (1, -1, math.sqrt(2.0))):
        src = idx[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
        dst = idx[max(0, dy):h + min(0, dy), max(0, dx):w + min(0, dx)]
        ok = fin[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)] \
            & fin[max(0, dy):h + min(0, dy), max(0, dx):w + min(0, dx)]
        wgt = (cost[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
               + cost[max(0, dy):h + min(0, dy), max(0, dx):w + min(0, dx)]) \
            * (0.5 * step * cmap.cell_size)
        rows.append(src[ok])
        cols.append(dst[ok])
        data.append(wgt[ok])
    graph = csr_matrix((np.concatenate(data),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n, n))
    dist = _sparse_dijkstra(graph, directed=False, indices=int(idx[jy, jx]))
    return dist.reshape(h, w)


def _acemap_probabilities(acemap, x, y, heading_deg):
    """Infeasibility probability at world points, circularly interpolating
    between the two heading channels adjacent to each pose heading."""
    ix, iy = acemap.world_to_cell(x, y)
    h, w, _ = acemap.values.shape
    inb = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    ixc = np.clip(ix, 0, w - 1)
    iyc = np.clip(iy, 0, h - 1)
    step = 360.0 / len(ACEMAP_HEADINGS)
    hd = np.mod(heading_deg, 360.0)
    k0 = np.floor(hd / step).astype(int) % len(ACEMAP_HEADINGS)
    k1 = (k0 + 1) % len(ACEMAP_HEADINGS)
    frac = (hd - k0 * step) / step
    p0 = np.nan_to_num(acemap.values[iyc, ixc, k0], nan=0.0)
    p1 = np.nan_to_num(acemap.values[iyc, ixc, k1], nan=0.0)
    return np.where(inb, (1.0 - frac) * p0 + frac * p1, 0.0)


def rank_paths(tree, cmap: CostMap, cost_to_go, acemap, weights: RankingWeights,
               last_turn_sign=0.0):
    """Assign each candidate its weighted total cost and sort ascending.

    Total = actuation (turns and steering changes cost time) + terrain cost
    sampled along the path + learned clearance term + cost-to-go at the
    endpoint.  Any sample on an infinite cell makes the whole path infinite.
    Ties break toward fewer steering changes, then a smaller initial turn.
    `last_turn_sign` (+-1) marks the previous cycle's turning direction so
    direction reversals can be charged.
    """
    weights.validate()
    pts = tree.poses
    jx, jy = cmap.world_to_cell(pts[:, 0], pts[:, 1])
    inb = (jx >= 0) & (jx < cmap.width) & (jy >= 0) & (jy < cmap.height)
    jxc = np.clip(jx, 0, cmap.width - 1)
    jyc = np.clip(jy, 0, cmap.height - 1)
    sample_cost = np.where(inb, cmap.base_cost[jyc, jxc], cmap.outside_cost)
    sample_inf = inb & cmap.infinite[jyc, jxc]

    starts = tree.offsets[:-1]
    terrain = weights.terrain_weight * np.add.reduceat(sample_cost, starts)
    blocked = np.add.reduceat(sample_inf.astype(float), starts) > 0.0

    actuation = np.where(
        tree.initial_turns > 0.0,
        weights.turn_cost_base + weights.turn_cost_per_deg * tree.initial_turns,
        0.0) + weights.curvature_change_cost * tree.n_changes
    if last_turn_sign:
        reversal = tree.initial_turns_signed * last_turn_sign < 0.0
        actuation = actuation + weights.turn_reversal_cost * reversal

    heuristic = np.zeros(len(tree.paths))
    if acemap is not None and weights.learned_factor > 0.0:
        probs = _acemap_probabilities(acemap, pts[:, 0], pts[:, 1], pts[:, 2])
        heuristic = weights.learned_factor * np.add.reduceat(probs, starts)

    ends = tree.offsets[1:] - 1
    ex, ey = pts[ends, 0], pts[ends, 1]
    ejx, ejy = cmap.world_to_cell(ex, ey)
    einb = (ejx >= 0) & (ejx < cmap.width) & (ejy >= 0) & (ejy < cmap.height)
    ctg = np.where(einb, cost_to_go[np.clip(ejy, 0, cmap.height - 1),
                                    np.clip(ejx, 0, cmap.width - 1)], np.inf)

    totals = actuation + terrain + heuristic + weights.cost_to_go_weight * ctg
    totals[blocked] = np.inf

    order = np.lexsort((tree.initial_turns, tree.n_changes, totals))
    ranked = []
    for i in order:
        p = tree.paths[i]
        p.actuation_cost = float(actuation[i])
        p.terrain_cost = float(terrain[i])
        p.heuristic_cost = float(heuristic[i])
        p.cost_to_go = float(ctg[i])
        p.total_cost = float(totals[i])
        ranked.append(p)
    return ranked


def select_path(ranked, hmap, geom: RoverGeometry, limits: AceLimits,
                budget: Budget) -> PlanResult:
    """Walk the ranked list through the clearance gate.

    After the first feasible path, the walk continues until
    min_evals_after_feasible more evaluations are spent (0 in first-feasible
    mode), returning the feasible path with the lowest ranking-plus-clearance
    cost.  Overthink flags a cycle whose evaluation count exceeded the
    threshold.
    """
    evals = 0
    best = None
    best_combined = math.inf
    best_ace = math.inf
    n_feasible = 0
    checked = 0
    first_feasible_at = None
    hit_budget = False
    for path in ranked:
        if not math.isfinite(path.total_cost):
            break
        if evals >= budget.max_ace_evals:
            hit_budget = True
            break
        if (first_feasible_at is not None
                and evals - first_feasible_at >= budget.min_evals_after_feasible):
            break
        res = evaluate_poses(hmap, path.poses, geom, limits)
        checked += 1
        evals += res.eval_count
        if res.feasible:
            n_feasible += 1
            if first_feasible_at is None:
                first_feasible_at = evals
            combined = path.total_cost + res.cost
            if combined < best_combined:
                best, best_combined, best_ace = path, combined, res.cost
            if budget.first_feasible:
                break
    overthink = evals > budget.overthink_threshold
    if best is None:
        reason = "budget_exhausted" if hit_budget else "list_exhausted"
        return PlanResult(None, evals, overthink, n_feasible, checked,
                          failure_reason=reason)
    return PlanResult(best, evals, overthink, n_feasible, checked,
                      chosen_ace_cost=best_ace)


def first_maneuver_command(path, max_arc=1.0, max_turn_deg=30.0):
    """Truncate the chosen path's first maneuver to one actuation step.

    Arcs actuate at most their first meter, turns their first 30 degrees; an
    explicit no-turn start falls through to the first arc.
    """
    for m in path.maneuvers:
        if isinstance(m, TurnInPlace):
            if m.angle_deg == 0.0:
                continue
            a = math.copysign(min(abs(m.angle_deg), max_turn_deg), m.angle_deg)
            return TurnInPlace(a)
        return Arc(m.curvature, min(m.length, max_arc))
    raise ValueError("path has no actuatable maneuver")


@dataclass(frozen=True)
class PlannerConfig:
    analysis: AnalysisParams = AnalysisParams()
    weights: RankingWeights = RankingWeights()
    tree: TreeSpec = TreeSpec()
    budget: Budget = Budget()
    geom: RoverGeometry = RoverGeometry()
    limits: AceLimits = AceLimits()
    heuristic_mode: str = "none"  # none | gradient | learned | both
    ace_interval: float = 0.25


def plan_cycle(hmap, pose, goal, config: PlannerConfig, provider,
               costmap_frame=None, keepout_mask=None, last_command=None):
    """One full Select Path step; returns (command, PlanResult).

    Raises GoalInfeasibleError or NoFeasiblePathError when the cycle cannot
    produce a command.  The returned command is always the leading step of a
    path that passed the real clearance gate, regardless of what any
    heuristic provider predicted.  `last_command` gives the previous cycle's
    maneuver so turn reversals can be damped.
    """
    last_turn_sign = 0.0
    if isinstance(last_command, TurnInPlace) and last_command.angle_deg:
        last_turn_sign = math.copysign(1.0, last_command.angle_deg)
    frame = {}
    if costmap_frame is not None:
        frame = {"origin": costmap_frame[0], "width": costmap_frame[1],
                 "height": costmap_frame[2]}
    cmap = build_costmap(hmap, config.analysis, keepout_mask, **frame)

    gc = None
    if config.heuristic_mode in ("gradient", "both"):
        gc = compute_gradient_maps(hmap, config.analysis).gc
    acemap = None
    if config.heuristic_mode in ("learned", "both"):
        acemap = request_acemap(provider, hmap)
    if gc is not None or acemap is not None:
        cmap = inject_heuristic_costs(
            cmap, hmap, gc, acemap,
            gradient_weight=config.weights.gradient_weight,
            learned_factor=config.weights.learned_factor)

    ctg = dijkstra_cost_to_go(cmap, goal)
    tree = build_tree(config.tree, pose, config.ace_interval)
    if config.tree.prune_mode == "keep_best_per_group":
        ranked = rank_paths(tree, cmap, ctg, acemap, config.weights,
                            last_turn_sign)
        costs = np.array([p.total_cost for p in tree.paths])
        tree = extend_pruned(tree, costs, config.tree)
    ranked = rank_paths(tree, cmap, ctg, acemap, config.weights, last_turn_sign)
    result = select_path(ranked, hmap, config.geom, config.limits, config.budget)
    if result.path is None:
        raise NoFeasiblePathError(result)
    # Architectural invariant: no provider output can skip the gate.
    assert result.path.total_cost < math.inf and math.isfinite(result.chosen_ace_cost)
    return first_maneuver_command(result.path), result
