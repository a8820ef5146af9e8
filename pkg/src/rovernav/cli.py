"""Command-line front end for trials, experiments, and dataset tooling."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import harness
from .ace import AceLimits, RoverGeometry
from .bridge import (ChannelMismatchError, ParseError, ProviderSpec,
                     grid_to_acemap, heightmap_to_grid, read_grid, write_grid)
from .harness import (ExperimentConfig, experiment_config, export_training_pairs,
                      format_summary_table, run_montecarlo, summary_csv_rows,
                      write_summary_csv, write_trials_jsonl, METRIC_COLUMNS)
from .planner import Budget, PlannerConfig
from .rover_sim import SimConfig, run_trial
from .terraingen import SpecInfeasibleError, TerrainSpec, generate_terrain


def _out_dir(args):
    path = Path(args.out or os.environ.get("ROVERNAV_OUT", "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path):
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _experiment_from_args(args):
    raw = _load_config(args.config)
    kwargs = {}
    for key in ("slopes", "cfas", "seeds_per_terrain", "master_seed",
                "heuristic_mode", "tree_mode", "selection_mode",
                "overthink_threshold", "goal_distance", "timeout_cycles",
                "workers"):
        if key in raw:
            val = raw[key]
            kwargs[key] = tuple(val) if isinstance(val, list) else val
    if args.seed is not None:
        kwargs["master_seed"] = args.seed
    if args.seeds_per_terrain is not None:
        kwargs["seeds_per_terrain"] = args.seeds_per_terrain
    if args.workers is not None:
        kwargs["workers"] = args.workers
    if getattr(args, "provider", None):
        kwargs["provider"] = ProviderSpec.parse(args.provider)
    return experiment_config(args.experiment, **kwargs)


def cmd_gen_terrain(args):
    spec = TerrainSpec(seed=args.seed, slope_deg=args.slope, cfa=args.cfa,
                       extent=args.extent, cell=args.cell)
    try:
        hmap = generate_terrain(spec)
    except SpecInfeasibleError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out = _out_dir(args) / args.name
    out.write_bytes(write_grid(heightmap_to_grid(hmap)))
    print(f"wrote {out} ({hmap.width}x{hmap.height} cells, "
          f"class {spec.terrain_class().value})")
    return 0


def cmd_run_trial(args):
    planner = PlannerConfig(heuristic_mode=args.mode,
                            budget=Budget(first_feasible=args.first_feasible))
    sim = SimConfig(terrain=TerrainSpec(seed=args.seed, slope_deg=args.slope,
                                        cfa=args.cfa),
                    goal_distance=args.goal_distance, planner=planner,
                    provider=ProviderSpec.parse(args.provider), seed=args.seed)
    result = run_trial(sim)
    row = result.to_dict()
    row["slope_deg"] = args.slope
    row["cfa"] = args.cfa
    out = _out_dir(args) / f"trial_{args.seed}.json"
    out.write_text(json.dumps(row, sort_keys=True, indent=2) + "\n")
    evals = row["ace_evals"]
    mean_evals = sum(evals) / len(evals) if evals else 0.0
    print(f"{result.outcome}: {result.cycles} cycles, "
          f"{mean_evals:.1f} clearance evals/cycle -> {out}")
    return 0 if result.outcome == "success" else 1


def cmd_run_experiment(args):
    config = _experiment_from_args(args)
    out = _out_dir(args)
    arms = [(config.name, config)]
    if args.compare_baseline and config.name != "baseline":
        arms.insert(0, ("baseline", experiment_config(
            "baseline", slopes=config.slopes, cfas=config.cfas,
            seeds_per_terrain=config.seeds_per_terrain,
            master_seed=config.master_seed, workers=config.workers,
            timeout_cycles=config.timeout_cycles,
            goal_distance=config.goal_distance)))
    summaries = []
    for name, arm in arms:
        summary, trials = run_montecarlo(arm)
        write_trials_jsonl(trials, out / f"trials_{name}.jsonl")
        summaries.append((name, summary))
    write_summary_csv(summaries, out / "summary.csv")
    print(format_summary_table(summaries))
    print(f"wrote {out / 'summary.csv'}")
    return 0


def cmd_export_dataset(args):
    config = _experiment_from_args(args)
    _, trials = run_montecarlo(config, log_heightmaps=args.samples_per_trial)
    counts = export_training_pairs(trials, _out_dir(args) / "dataset",
                                   samples_per_trial=args.samples_per_trial,
                                   train_fraction=args.train_fraction,
                                   seed=config.master_seed)
    print(f"dataset: {counts['train']} train / {counts['val']} val pairs")
    return 0


def cmd_eval_acemap(args):
    try:
        pred = grid_to_acemap(read_grid(Path(args.predictions).read_bytes()))
        truth = grid_to_acemap(read_grid(Path(args.truth).read_bytes()))
    except (ParseError, ChannelMismatchError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if pred.values.shape != truth.values.shape:
        print("error: prediction and truth shapes differ", file=sys.stderr)
        return 2
    mask = np.isfinite(truth.values)
    yhat = (pred.values >= 0.5)[mask]
    y = (truth.values >= 0.5)[mask]
    tp = int(np.sum(yhat & y))
    tn = int(np.sum(~yhat & ~y))
    fp = int(np.sum(yhat & ~y))
    fn = int(np.sum(~yhat & y))
    total = tp + tn + fp + fn
    acc = (tp + tn) / total if total else float("nan")
    recall = tp / (tp + fn) if tp + fn else float("nan")
    precision = tp / (tp + fp) if tp + fp else float("nan")
    print(f"cells={total} accuracy={100*acc:.2f}% recall={recall:.3f} "
          f"precision={precision:.3f}")
    for ch in range(truth.values.shape[2]):
        m = np.isfinite(truth.values[:, :, ch])
        if not m.any():
            continue
        ph = pred.values[:, :, ch][m] >= 0.5
        th = truth.values[:, :, ch][m] >= 0.5
        print(f"  heading {ch * 45:3d}: tp={int(np.sum(ph & th))} "
              f"fp={int(np.sum(ph & ~th))} fn={int(np.sum(~ph & th))} "
              f"tn={int(np.sum(~ph & ~th))}")
    return 0


def cmd_report(args):
    rows = []
    for path in args.trials:
        name = Path(path).stem.replace("trials_", "")
        trials = []
        with open(path) as fh:
            for line in fh:
                row = json.loads(line)
                trials.append((row["slope_deg"], row["cfa"], _RowResult(row)))
        config = ExperimentConfig(name=name)
        summary = harness.summarize(trials, config)
        rows.append((name, summary))
    write_summary_csv(rows, _out_dir(args) / "report.csv")
    print(format_summary_table(rows))
    return 0


class _RowResult:
    """TrialResult stand-in rebuilt from a JSON line."""

    def __init__(self, row):
        self.outcome = row["outcome"]
        self.path_length = row["path_length"]
        self.straight_line = row["straight_line"]
        self.ace_evals = row["ace_evals"]
        self.overthink = row["overthink"]

    @property
    def inefficiency(self):
        return self.path_length / self.straight_line - 1.0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rovernav",
        description="Rover navigation trials, experiments, and dataset tools")
    parser.add_argument("--out", help="output directory (or $ROVERNAV_OUT)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-terrain", help="write a synthetic terrain grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slope", type=float, default=0.0)
    p.add_argument("--cfa", type=float, default=0.0)
    p.add_argument("--extent", type=float, default=110.0)
    p.add_argument("--cell", type=float, default=0.1)
    p.add_argument("--name", default="terrain.grid")
    p.set_defaults(func=cmd_gen_terrain)

    p = sub.add_parser("run-trial", help="run a single trial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slope", type=float, default=0.0)
    p.add_argument("--cfa", type=float, default=0.0)
    p.add_argument("--goal-distance", type=float, default=80.0)
    p.add_argument("--mode", default="none",
                   choices=["none", "gradient", "learned", "both"])
    p.add_argument("--provider", default="none")
    p.add_argument("--first-feasible", action="store_true")
    p.set_defaults(func=cmd_run_trial)

    p = sub.add_parser("run-experiment", help="run a Monte Carlo experiment")
    p.add_argument("experiment", choices=["baseline", "1", "2", "3", "4"])
    p.add_argument("--config", help="TOML file with terrain matrix overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds-per-terrain", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--provider", default=None,
                   help="override the heuristic provider, e.g. remote:HOST:PORT")
    p.add_argument("--compare-baseline", action="store_true")
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("export-dataset",
                       help="run trials and export training pairs")
    p.add_argument("--experiment", default="baseline")
    p.add_argument("--config", help="TOML file with terrain matrix overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds-per-terrain", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--samples-per-trial", type=int, default=8)
    p.add_argument("--train-fraction", type=float, default=9500.0 / 12000.0)
    p.set_defaults(func=cmd_export_dataset)

    p = sub.add_parser("eval-acemap",
                       help="score a predicted clearance map against truth")
    p.add_argument("predictions")
    p.add_argument("truth")
    p.set_defaults(func=cmd_eval_acemap)

    p = sub.add_parser("report", help="summarize trial JSONL files to CSV")
    p.add_argument("trials", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
