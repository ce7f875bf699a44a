"""Trainable sampling-based solver for linearly constrained binary
quadratic optimization, with step-size schedules learned by unfolding and
transferable between samplers."""

from .problems import (
    AuxiliaryState,
    ConstrainedProblem,
    EffectiveQubo,
    LinearConstraint,
    PenaltyParams,
    QuadraticObjective,
    constraint_residuals,
    effective_qubo,
    energy,
    ising_view,
    penalty_loss,
)
from .samplers import (
    ExactDistribution,
    ExactSampler,
    ExpectationEstimate,
    MHSampler,
    RemoteSampler,
    SampleSet,
    SamplerConfig,
    SQASampler,
    estimate_expectations,
    exact_boltzmann,
    exact_expectations,
    make_sampler,
    mh_sample,
    remote_sample,
    sqa_sample,
)
from .solver import (
    SolveResult,
    SolverTrace,
    StepSchedule,
    best_feasible,
    grid_search_step,
    ohzeki_run,
    ohzeki_step,
)
from .training import (
    AdamState,
    LearnedSchedule,
    TrainConfig,
    UnfoldTape,
    adam_update,
    forward_unfolded,
    grad_eta,
    grad_v_final,
    train,
    transfer_execute,
)
from .benchmark import (
    DatasetSpec,
    ImageInstance,
    Method,
    MetricSeries,
    confidence_interval,
    default_ground_truth,
    evaluate_methods,
    generate_instance,
    lattice_objective,
    mse,
)

__version__ = "0.1.0"
