"""Robust camera relative-pose estimation under many-to-many association."""

from .assoc import (AssociationGraph, BearingObservation, Edge, GroundTruth,
                    association_metrics, build_mknn, connected_components,
                    group_precision)
from .geometry import (PoseParams, RelativePose, angular_residual, exp_so3,
                       feasible_phi_interval, log_so3, omega, params_to_pose,
                       polar_coords, pose_to_params)
from .marginals import (AssignmentConfig, ConvergenceError,
                        ProbabilityAssignment, assign_marginals,
                        reference_probability)
from .mechanisms import (InlierGraph, MechanismConfig, approx_log_likelihood,
                         cm_score, enumerate_matchings, exact_likelihood,
                         hcm_score, hcm_weights, identify_inliers,
                         max_matching_cardinality, score_pose)
from .search import (IntervalEvent, SearchGrid, SearchResult, discretize,
                     evaluate_cell, mcm_then_hcm, search, sweep_cm, sweep_hcm,
                     sweep_mcm)
from .evalharness import (PoseError, SceneConfig, SyntheticScene,
                          discretization_mc, eval_time_bench, generate_scene,
                          mechanism_comparison, pose_auc, pose_error,
                          sensitivity_sweep)

__version__ = "0.1.0"
