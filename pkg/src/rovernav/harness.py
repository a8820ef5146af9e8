"""Monte Carlo experiment runner, metrics aggregation, training-data export."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ace import build_ground_truth_acemap
from .bridge import ProviderSpec, acemap_to_grid, heightmap_to_grid, write_grid
from .planner import Budget, PlannerConfig
from .pathtree import TreeSpec
from .rover_sim import SimConfig, TrialResult, run_trial
from .terraingen import TerrainClass, TerrainSpec, classify_terrain

Z_95 = 1.96


def margin_of_error(p, n):
    """95% margin of error of a proportion: 1.96 * sqrt(p(1-p)/n)."""
    if n <= 0:
        return math.nan
    return Z_95 * math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "baseline"
    slopes: tuple = (0.0, 10.0, 15.0, 20.0, 25.0)
    cfas: tuple = (0.0, 0.05, 0.07, 0.10, 0.15)
    seeds_per_terrain: int = 10
    master_seed: int = 2025
    heuristic_mode: str = "none"            # none | gradient | learned | both
    tree_mode: str = "default"              # default | broader | deeper_pruned
    selection_mode: str = "baseline_min_evals"  # or first_feasible
    provider: ProviderSpec = ProviderSpec()
    overthink_threshold: int = 275
    occurrence_weights: dict = field(default_factory=dict, hash=False)
    goal_distance: float = 80.0
    timeout_cycles: int = 250               # ample headroom for an 80 m run
    workers: int = 0                        # 0 = cpu count
    sim_overrides: dict = field(default_factory=dict, hash=False)

    def tree_spec(self):
        if self.tree_mode == "default":
            return TreeSpec()
        if self.tree_mode == "broader":
            return TreeSpec.broader()
        if self.tree_mode == "deeper_pruned":
            return TreeSpec.deeper_pruned()
        raise ValueError(f"unknown tree mode {self.tree_mode!r}")

    def weight_for(self, slope, cfa):
        return float(self.occurrence_weights.get((slope, cfa), 1.0))


EXPERIMENT_PRESETS = {
    # Axes per experiment; everything else matches the baseline run.
    "baseline": {},
    "1": {"heuristic_mode": "gradient"},
    "2": {"heuristic_mode": "learned", "selection_mode": "first_feasible",
          "provider": ProviderSpec(kind="oracle", oracle_radius=8.5)},
    "3": {"heuristic_mode": "learned", "selection_mode": "first_feasible",
          "provider": ProviderSpec(kind="oracle", oracle_radius=8.5),
          "tree_mode": "broader"},
    "4": {"heuristic_mode": "learned", "selection_mode": "first_feasible",
          "provider": ProviderSpec(kind="oracle"), "tree_mode": "deeper_pruned"},
}


def experiment_config(name, **overrides):
    if name not in EXPERIMENT_PRESETS:
        raise ValueError(f"unknown experiment {name!r}")
    kwargs = dict(EXPERIMENT_PRESETS[name])
    kwargs.update(overrides)
    return ExperimentConfig(name=name, **kwargs)


def trial_matrix(config: ExperimentConfig):
    """Deterministic (terrain_spec, sim_seed) list for a config."""
    trials = []
    i = 0
    for slope in config.slopes:
        for cfa in config.cfas:
            for k in range(config.seeds_per_terrain):
                ss = np.random.SeedSequence(config.master_seed, spawn_key=(i,))
                seed = int(ss.generate_state(1)[0])
                trials.append((slope, cfa, seed))
                i += 1
    return trials


def sim_config_for(config: ExperimentConfig, slope, cfa, seed,
                   log_heightmaps=0) -> SimConfig:
    budget = Budget(overthink_threshold=config.overthink_threshold,
                    first_feasible=config.selection_mode == "first_feasible")
    planner = PlannerConfig(tree=config.tree_spec(), budget=budget,
                            heuristic_mode=config.heuristic_mode)
    sim = SimConfig(terrain=TerrainSpec(seed=seed, slope_deg=slope, cfa=cfa),
                    goal_distance=config.goal_distance,
                    timeout_cycles=config.timeout_cycles, planner=planner,
                    provider=config.provider, seed=seed,
                    log_heightmaps=log_heightmaps)
    if config.sim_overrides:
        sim = replace(sim, **config.sim_overrides)
    return sim


def _run_one(args):
    idx, slope, cfa, sim = args
    result = run_trial(sim)
    return idx, slope, cfa, result


@dataclass
class ClassMetrics:
    n_trials: int = 0
    n_cycles: int = 0
    success_rate: float = math.nan       # percent
    success_moe: float = math.nan
    inefficiency: float = math.nan       # percent, successful trials
    inefficiency_moe: float = math.nan
    ace_evals_per_cycle: float = math.nan
    ace_evals_moe: float = math.nan
    overthink_rate: float = math.nan     # percent of cycles
    overthink_moe: float = math.nan
    est_seconds_per_cycle_10ms: float = math.nan
    est_seconds_per_cycle_20ms: float = math.nan

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in self.__dict__.items()}


@dataclass
class MetricsSummary:
    per_class: dict  # "benign"/"complex" -> ClassMetrics

    def to_dict(self):
        return {k: v.to_dict() for k, v in self.per_class.items()}


def _aggregate_class(rows, weights):
    """Weighted-average per-terrain metrics into one ClassMetrics.

    `rows` maps (slope, cfa) -> list of TrialResult.  Rates use the Wald
    margin of error with n = pooled trials (or cycles for overthink); means
    report 1.96 standard errors.
    """
    out = ClassMetrics()
    if not rows:
        return out
    terrains = sorted(rows)
    w = np.array([weights.get(t, 1.0) for t in terrains], dtype=float)
    w = w / w.sum()

    succ, ineff, evals, othink = [], [], [], []
    ineff_all, evals_all = [], []
    n_trials = n_cycles = 0
    for t in terrains:
        rs = rows[t]
        n_trials += len(rs)
        succ.append(np.mean([r.outcome == "success" for r in rs]))
        ok = [r.inefficiency for r in rs if r.outcome == "success"]
        ineff.append(np.mean(ok) if ok else np.nan)
        ineff_all.extend(ok)
        ev = [e for r in rs for e in r.ace_evals]
        ot = [o for r in rs for o in r.overthink]
        n_cycles += len(ev)
        evals.append(np.mean(ev) if ev else np.nan)
        evals_all.extend(ev)
        othink.append(np.mean(ot) if ot else np.nan)

    def wavg(vals):
        vals = np.asarray(vals, dtype=float)
        ok = ~np.isnan(vals)
        if not ok.any():
            return math.nan
        return float(np.sum(vals[ok] * w[ok]) / np.sum(w[ok]))

    out.n_trials = n_trials
    out.n_cycles = n_cycles
    p_succ = wavg(succ)
    out.success_rate = 100.0 * p_succ
    out.success_moe = 100.0 * margin_of_error(p_succ, n_trials)
    out.inefficiency = 100.0 * wavg(ineff)
    if len(ineff_all) > 1:
        out.inefficiency_moe = 100.0 * Z_95 * float(np.std(ineff_all, ddof=1)) \
            / math.sqrt(len(ineff_all))
    out.ace_evals_per_cycle = wavg(evals)
    if len(evals_all) > 1:
        out.ace_evals_moe = Z_95 * float(np.std(evals_all, ddof=1)) \
            / math.sqrt(len(evals_all))
    p_ot = wavg(othink)
    out.overthink_rate = 100.0 * p_ot
    out.overthink_moe = 100.0 * margin_of_error(p_ot, n_cycles)
    out.est_seconds_per_cycle_10ms = out.ace_evals_per_cycle * 0.010
    out.est_seconds_per_cycle_20ms = out.ace_evals_per_cycle * 0.020
    return out


def summarize(trials, config: ExperimentConfig) -> MetricsSummary:
    """Fold per-trial results into benign/complex metric blocks."""
    by_class = {TerrainClass.BENIGN: {}, TerrainClass.COMPLEX: {}}
    weights = {TerrainClass.BENIGN: {}, TerrainClass.COMPLEX: {}}
    for slope, cfa, result in trials:
        cls = classify_terrain(slope, cfa)
        by_class[cls].setdefault((slope, cfa), []).append(result)
        weights[cls][(slope, cfa)] = config.weight_for(slope, cfa)
    return MetricsSummary({
        "benign": _aggregate_class(by_class[TerrainClass.BENIGN],
                                   weights[TerrainClass.BENIGN]),
        "complex": _aggregate_class(by_class[TerrainClass.COMPLEX],
                                    weights[TerrainClass.COMPLEX]),
    })


def run_montecarlo(config: ExperimentConfig, log_heightmaps=0, progress=None):
    """Run every trial in the matrix and aggregate; deterministic by seeds.

    Returns (MetricsSummary, trials) where trials is a list of
    (slope, cfa, TrialResult) in matrix order regardless of scheduling.
    """
    matrix = trial_matrix(config)
    jobs = [(i, slope, cfa,
             sim_config_for(config, slope, cfa, seed, log_heightmaps))
            for i, (slope, cfa, seed) in enumerate(matrix)]
    results = [None] * len(jobs)
    workers = config.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, slope, cfa, res in pool.map(_run_one, jobs,
                                                 chunksize=max(1, len(jobs) // (4 * workers))):
                results[idx] = (slope, cfa, res)
                if progress:
                    progress(idx, len(jobs), res)
    else:
        for job in jobs:
            idx, slope, cfa, res = _run_one(job)
            results[idx] = (slope, cfa, res)
            if progress:
                progress(idx, len(jobs), res)
    return summarize(results, config), results


def write_trials_jsonl(trials, path):
    with open(path, "w") as fh:
        for slope, cfa, result in trials:
            row = {"slope_deg": slope, "cfa": cfa,
                   "terrain_class": classify_terrain(slope, cfa).value}
            row.update(result.to_dict())
            fh.write(json.dumps(row, sort_keys=True) + "\n")


METRIC_COLUMNS = ("success_rate", "success_moe", "inefficiency",
                  "inefficiency_moe", "ace_evals_per_cycle", "ace_evals_moe",
                  "overthink_rate", "overthink_moe",
                  "est_seconds_per_cycle_10ms", "est_seconds_per_cycle_20ms",
                  "n_trials", "n_cycles")


def summary_csv_rows(name, summary: MetricsSummary):
    rows = []
    for cls in ("benign", "complex"):
        m = summary.per_class[cls]
        row = [name, cls]
        for col in METRIC_COLUMNS:
            v = getattr(m, col)
            row.append("" if isinstance(v, float) and math.isnan(v)
                       else f"{v:.6g}")
        rows.append(row)
    return rows


def write_summary_csv(named_summaries, path):
    """CSV with one row per (experiment arm, terrain class)."""
    with open(path, "w") as fh:
        fh.write(",".join(("experiment", "class") + METRIC_COLUMNS) + "\n")
        for name, summary in named_summaries:
            for row in summary_csv_rows(name, summary):
                fh.write(",".join(str(v) for v in row) + "\n")


def format_summary_table(named_summaries):
    """Plain-text metric grid, one block per terrain class."""
    lines = []
    hdr = f"{'experiment':<22}{'class':<9}{'succ%':>8}{'ineff%':>9}" \
          f"{'evals/cyc':>11}{'othink%':>9}"
    lines.append(hdr)
    lines.append("-" * len(hdr))
    for name, summary in named_summaries:
        for cls in ("benign", "complex"):
            m = summary.per_class[cls]
            if m.n_trials == 0:
                continue
            lines.append(
                f"{name:<22}{cls:<9}"
                f"{m.success_rate:>7.1f} {m.inefficiency:>8.1f} "
                f"{m.ace_evals_per_cycle:>10.1f} {m.overthink_rate:>8.1f}")
    return "\n".join(lines)


class InsufficientSnapshotsError(Exception):
    """A trial logged fewer heightmap snapshots than requested."""


def export_training_pairs(trials, out_dir, samples_per_trial=8,
                          train_fraction=9500.0 / 12000.0, seed=7,
                          geom=None, limits=None):
    """Write (heightmap, ground-truth clearance map) grid pairs to disk.

    Each trial contributes up to `samples_per_trial` of its logged heightmap
    snapshots (all of them when fewer were logged; sampling never repeats a
    snapshot).  Pairs are shuffled deterministically and split by count
    rounding into train/ and val/ subdirectories.
    """
    from .ace import AceLimits, RoverGeometry
    geom = geom or RoverGeometry()
    limits = limits or AceLimits()
    rng = np.random.default_rng(seed)
    pairs = []
    for slope, cfa, result in trials:
        snaps = result.snapshots
        if not snaps:
            continue
        take = min(samples_per_trial, len(snaps))
        order = rng.permutation(len(snaps))[:take]
        for j in sorted(order):
            pairs.append(snaps[j])
    if not pairs:
        raise InsufficientSnapshotsError("no heightmap snapshots were logged")
    order = rng.permutation(len(pairs))
    n_train = int(round(len(pairs) * train_fraction))
    out_dir = Path(out_dir)
    counts = {"train": 0, "val": 0}
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val"
        sub = out_dir / split
        sub.mkdir(parents=True, exist_ok=True)
        hmap = pairs[idx]
        acemap = build_ground_truth_acemap(hmap, geom, limits)
        stem = f"pair_{rank:05d}"
        (sub / f"{stem}_height.grid").write_bytes(write_grid(heightmap_to_grid(hmap)))
        (sub / f"{stem}_acemap.grid").write_bytes(write_grid(acemap_to_grid(acemap)))
        counts[split] += 1
    return counts
