"""Attack detection and probabilistic recovery for a simplex-style altitude controller."""

from .config import CONTROLLERS, ExperimentConfig, load_config
from .detector import BeliefBuffer, DetectorState, cusum_step, residual, rollback_anchor
from .dynamics import (GaussianBelief, LinearModel, Trajectory, build_default_drone_model,
                       kalman_update, predict_belief, step_truth)
from .errors import ContractViolation, NumericalError, PlannerError, UnrecoverableEpisode
from .harness import aggregate, run_batch, run_episode, sweep
from .planner import MissionContext, PlannerInput, Verdict, obtain_target, plan_target, verify_target
from .records import RunRecord, read_csv, write_csv
from .recovery import (InputBounds, RecoveryPlan, box_ls_solve, opr_pcl_step, solve_opr_ol,
                       solve_rtr_lqr, virtual_sensor_control)
from .sensing import AttackScenario, apply_attack, measure
from .target_set import Strip, TargetForm, contains, distance_to_center, strip_probability, validate_params

__version__ = "0.1.0"
