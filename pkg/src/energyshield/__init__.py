"""Energy-based fairness shields: runtime controllers, exact violation DP,
tail bounds, least-invasive synthesis and simulation tools."""
from .analysis import (
    CharacteristicModel,
    DriftBand,
    TailBoundParams,
    TwoGroupModel,
    analysis_report,
    drift_containment,
    expected_cost_h,
    characteristic_f,
    find_fixpoint,
    limit_cost,
    single_group_params,
    tail_bound,
    tail_sum,
    two_group_params,
    two_group_tau,
)
from .energy import (
    EnergyFunction,
    Exponential,
    Idle,
    Monotonic,
    Naive,
    Polynomial,
    Steepness,
    calibrate,
    calibrated_pivot,
    compare_steepness,
    eval_monotonic,
    from_json,
    validate,
)
from .errors import (
    BoundPreconditionError,
    ConfigError,
    DomainError,
    IncomparablePivotsError,
    ParameterError,
    ResourceLimitError,
    SynthesisDiagnosticError,
)
from .exactdp import ChainSpec, DPResult, dp_value, dp_value_two_group, enumerate_bruteforce
from .fairness import FairnessTarget, RunningMeanState, TwoGroupState, point_fair, update_mean, update_two_group
from .kernels import BACKEND
from .shield import Mode, ShieldEngine, StepRecord, run_stream
from .simkit import ExperimentConfig, compare_engines, empirical_violations, run_ensemble
from .synthesis import SynthesisInstance, SynthesisOutcome, choose_T_DP, condition, synthesize

__version__ = "0.1.0"
