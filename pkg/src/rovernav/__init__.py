"""Rover surface navigation: terrain analysis, clearance-gated path planning,
and a Monte Carlo trial harness.

The planning cycle mirrors a flight-style architecture: integrate sensed
points into a rover-centered heightmap, derive a coarse traversal costmap
(optionally sharpened by a gradient-convolution heuristic and a learned
clearance predictor), rank a fixed tree of turn+arc candidate paths, validate
them with a conservative clearance evaluator, and actuate the first maneuver.
"""

from .ace import (ACEMAP_HEADINGS, AceLimits, AceMap, AcePathResult, AceResult,
                  RoverGeometry, build_ground_truth_acemap, evaluate_path,
                  evaluate_pose, evaluate_poses)
from .analysis import (AnalysisParams, CostMap, DegenerateFitError,
                       EmptyKernelError, GradientMaps, annulus_kernel,
                       build_costmap, compute_gradient_maps, fit_plane,
                       gradient_conv_cost, gradient_sq,
                       inject_heuristic_costs, sobel_gradients)
from .bridge import (ChannelMismatchError, ConstantProvider,
                     FileBackedProvider, GridFile, GroundTruthOracle,
                     NoneProvider, ParseError, ProviderSpec, RemoteProvider,
                     acemap_to_grid, grid_to_acemap, grid_to_heightmap,
                     heightmap_to_grid, make_provider, read_grid,
                     request_acemap, write_grid)
from .harness import (ExperimentConfig, MetricsSummary, experiment_config,
                      export_training_pairs, margin_of_error, run_montecarlo,
                      summarize)
from .heightmap import (HeightMap, NoKnownCellsError, integrate_points,
                        recenter, window_minmax)
from .pathtree import (Arc, CandidatePath, EmptyGroupError, PathTree, TreeSpec,
                       TurnInPlace, arc_pose, build_tree, extend_pruned,
                       sample_path)
from .planner import (Budget, GoalInfeasibleError, NoFeasiblePathError,
                      PlannerConfig, PlanResult, RankingWeights,
                      dijkstra_cost_to_go, first_maneuver_command, plan_cycle,
                      rank_paths, select_path)
from .rover_sim import (SafetyLimits, SensorWedge, SimConfig, SlipParams,
                        TrialResult, execute_maneuver, run_trial, sense,
                        true_pose_metrics)
from .terraingen import (SpecInfeasibleError, TerrainClass, TerrainSpec,
                         classify_terrain, generate_terrain, measured_cfa)

__version__ = "0.1.0"
