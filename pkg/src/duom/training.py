"""Learning per-iteration step sizes by unfolding the solver.

The solver's sampling step is not differentiable, so backpropagation uses
an identity special to the sampled family: tilting the energy by v_k moves
<f_k> at rate beta * Var(f_k).  The forward pass therefore records, per
iteration, the residual C_k - <f_k> and the variance of f_k, both free
by-products of the sampling already being done, and the chain rule over
iterations reduces to products of (1 - eta_u * beta * Var_u).  The loss is
the weighted mean penalty loss over the final sampling round; its gradient
with respect to v_k is beta * Cov(loss, f_k) by the same identity.

Schedules trained with one sampler can be executed with another (for
example trained on cheap Metropolis chains and executed against a remote
annealer); the schedule file carries the training sampler's identity so
runs can be labelled "MH-QA" style.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .problems import (
    ConstrainedProblem,
    PenaltyParams,
    constraint_values,
    penalty_losses,
    problem_to_dict,
)
from .rng import check_seed, derive_seed, digest64, stream
from .samplers import SampleSet, SamplerConfig, canonical_json, make_sampler
from .solver import SolveResult, SolverTrace, StepSchedule, ohzeki_run

__all__ = [
    "UnfoldTape",
    "AdamState",
    "TrainConfig",
    "LearnedSchedule",
    "forward_unfolded",
    "grad_v_final",
    "grad_eta",
    "adam_update",
    "train",
    "transfer_execute",
    "sampler_label",
    "method_label",
    "realized_loss",
    "dataset_digest",
    "save_schedule",
    "load_schedule",
    "schedule_to_dict",
    "schedule_from_dict",
]

_LABELS = {"mh": "MH", "sqa": "SQA", "exact": "EXACT", "remote": "QA"}


@dataclass(frozen=True, eq=False)
class UnfoldTape:
    """Per-iteration residuals and variances plus the final sample set."""

    residuals: np.ndarray  # (T, m): C_k - <f_k> at iteration t
    variances: np.ndarray  # (T, m): Var(f_k) at iteration t
    final_samples: SampleSet

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if r.shape != v.shape or r.ndim != 2:
            raise ValueError("residuals and variances must be matching (T, m) arrays")
        if r.size and not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("tape entries must be finite")
        object.__setattr__(self, "residuals", r)
        object.__setattr__(self, "variances", v)

    @property
    def depth(self) -> int:
        return self.residuals.shape[0]


@dataclass(eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_update(
    params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step; returns new params and advanced state."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape or p.shape != state.m.shape:
        raise ValueError("params, grads and state moments must have the same shape")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def forward_unfolded(
    p: ConstrainedProblem,
    sampler,
    etas: np.ndarray,
    params: PenaltyParams,
    ground_truth: np.ndarray | None = None,
) -> tuple[UnfoldTape, SolveResult]:
    """Solver run that also returns the tape needed for the eta gradient.

    The dynamics are identical to a plain run; no extra sampling happens
    because the variances fall out of the expectation estimation pass.
    """
    etas = np.asarray(etas, dtype=np.float64)
    result = ohzeki_run(
        p, sampler, StepSchedule(etas, "learned"), params, ground_truth=ground_truth
    )
    recs = result.trace.records[:-1]
    m = p.n_constraints
    residuals = np.array([r.residual for r in recs]).reshape(len(recs), m)
    variances = np.array([r.variance for r in recs]).reshape(len(recs), m)
    tape = UnfoldTape(residuals, variances, result.final_samples)
    return tape, result


def realized_loss(final: SampleSet, p: ConstrainedProblem, lam: float) -> float:
    """Weight-normalized mean penalty loss over a sample set."""
    losses = penalty_losses(final.samples, p, lam)
    return float((final.weights @ losses) / final.total_weight)


def grad_v_final(
    final: SampleSet, p: ConstrainedProblem, lam: float, beta: float
) -> np.ndarray:
    """Gradient of the realized loss with respect to each multiplier,
    beta * Cov(penalty loss, f_k) over the final sample set."""
    if p.n_constraints == 0:
        return np.zeros(0)
    losses = penalty_losses(final.samples, p, lam)
    F = constraint_values(p, final.samples)
    w = final.weights / final.total_weight
    mean_loss = w @ losses
    mean_f = w @ F
    cov = (w * (losses - mean_loss)) @ (F - mean_f)
    return beta * cov


def grad_eta(
    tape: UnfoldTape, gT: np.ndarray, etas: np.ndarray, beta: float
) -> np.ndarray:
    """Step-size gradient by reverse accumulation in O(T * m).

    dL/deta_t = sum_k gT_k * prod_{u=t+1}^{T-1} (1 - eta_u * beta * Var_u(f_k))
                * (C_k - <f_k>_t)
    """
    etas = np.asarray(etas, dtype=np.float64)
    gT = np.asarray(gT, dtype=np.float64)
    T, m = tape.residuals.shape
    if etas.size != T:
        raise ValueError(f"tape has depth {T} but {etas.size} step sizes were given")
    if gT.size != m:
        raise ValueError(f"tape has {m} constraints but gT has length {gT.size}")
    grad = np.empty(T)
    carry = gT.copy()  # gT_k * prod_{u>t} (1 - eta_u * beta * Var_u)
    for t in range(T - 1, -1, -1):
        grad[t] = carry @ tape.residuals[t]
        carry *= 1.0 - etas[t] * beta * tape.variances[t]
    return grad


@dataclass(frozen=True)
class TrainConfig:
    """Unsupervised training setup.

    One epoch is minibatches_per_epoch Adam updates, each on a freshly
    drawn batch of minibatch_size instances; the learning rate decays by
    lr_decay after every epoch.  With incremental on, the unfold depth
    grows in stages of 5 iterations (schedule entries beyond the current
    depth stay at eta_init until their stage exposes them).
    """

    T: int
    epochs: int
    sampler_kind: str
    sampler_config: SamplerConfig
    eta_init: float = 1e-2
    lam: float = 1.0
    minibatches_per_epoch: int = 20
    minibatch_size: int = 4
    lr_init: float = 5e-2
    lr_decay: float = 0.8
    incremental: bool = True
    seed: int = 0
    endpoint: str | None = None

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if min(self.minibatches_per_epoch, self.minibatch_size) < 1:
            raise ValueError("minibatch settings must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.eta_init <= 0 or self.lr_init < 0:
            raise ValueError("eta_init must be positive and lr_init non-negative")
        if self.sampler_kind == "remote" and not self.endpoint:
            raise ValueError("remote training sampler requires an endpoint")
        check_seed(self.seed)


@dataclass(frozen=True, eq=False)
class LearnedSchedule:
    """Trained step sizes plus the provenance needed to transfer them."""

    etas: np.ndarray
    trained_with: dict  # {"sampler": kind, "beta": float, "trotter": int?}
    lam: float
    seed: int
    dataset_digest: str
    loss_curve: tuple[float, ...]

    def __post_init__(self):
        a = np.array(self.etas, dtype=np.float64)
        if a.ndim != 1 or (a.size and not np.all(np.isfinite(a))):
            raise ValueError("etas must be a finite 1-D vector")
        if "sampler" not in self.trained_with or "beta" not in self.trained_with:
            raise ValueError("trained_with must record the sampler kind and beta")
        a.flags.writeable = False
        object.__setattr__(self, "etas", a)
        object.__setattr__(self, "loss_curve", tuple(float(x) for x in self.loss_curve))

    @property
    def T(self) -> int:
        return self.etas.size

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.etas, "learned")


def dataset_digest(instances: Sequence[ConstrainedProblem]) -> str:
    blob = "\n".join(canonical_json(problem_to_dict(p)) for p in instances)
    return f"{digest64(blob.encode()):016x}"


def _stage_plan(T: int, epochs: int, incremental: bool) -> list[tuple[int, int]]:
    """(depth, epochs) stages; depths grow by 5 up to T."""
    if epochs == 0 or T == 0:
        return []
    if not incremental:
        return [(T, epochs)]
    depths = list(range(5, T, 5)) + [T]
    per = epochs // len(depths)
    extra = epochs % len(depths)
    plan = [(d, per) for d in depths]
    # leftovers go to the deepest stages so full depth trains most
    for i in range(extra):
        d, e = plan[-1 - i]
        plan[-1 - i] = (d, e + 1)
    return [(d, e) for d, e in plan if e > 0]


def train(instances: Sequence[ConstrainedProblem], cfg: TrainConfig) -> LearnedSchedule:
    """Optimize the step-size schedule on a dataset of problem instances.

    Per batch: unfold each instance at the current depth, push the loss
    gradient through the tape, average over the batch, take one Adam step.
    Sampler seeds are derived per (epoch, batch, slot) so runs reproduce.
    """
    if not len(instances):
        raise ValueError("training dataset is empty")
    etas = np.full(cfg.T, cfg.eta_init)
    adam = AdamState.zeros(cfg.T)
    params = PenaltyParams(cfg.lam, cfg.sampler_config.beta)
    base = make_sampler(cfg.sampler_kind, cfg.sampler_config, cfg.endpoint)
    lr = cfg.lr_init
    loss_curve: list[float] = []
    epoch = 0
    for depth, stage_epochs in _stage_plan(cfg.T, cfg.epochs, cfg.incremental):
        for _ in range(stage_epochs):
            epoch_losses: list[float] = []
            for b in range(cfg.minibatches_per_epoch):
                picker = stream(cfg.seed, epoch, b)
                idx = picker.choice(
                    len(instances),
                    size=cfg.minibatch_size,
                    replace=len(instances) < cfg.minibatch_size,
                )
                batch_grad = np.zeros(depth)
                for slot, i in enumerate(idx):
                    problem = instances[int(i)]
                    sampler = base.with_seed(derive_seed(cfg.seed, epoch, b, slot))
                    tape, _ = forward_unfolded(problem, sampler, etas[:depth], params)
                    gT = grad_v_final(tape.final_samples, problem, cfg.lam, params.beta)
                    batch_grad += grad_eta(tape, gT, etas[:depth], params.beta)
                    epoch_losses.append(realized_loss(tape.final_samples, problem, cfg.lam))
                batch_grad /= cfg.minibatch_size
                full_grad = np.zeros(cfg.T)
                full_grad[:depth] = batch_grad
                etas, adam = adam_update(etas, full_grad, adam, lr)
            loss_curve.append(float(np.mean(epoch_losses)))
            lr *= cfg.lr_decay
            epoch += 1
    trained_with = {"sampler": cfg.sampler_kind, "beta": cfg.sampler_config.beta}
    if cfg.sampler_kind == "sqa":
        trained_with["trotter"] = cfg.sampler_config.trotter
    return LearnedSchedule(
        etas=etas,
        trained_with=trained_with,
        lam=cfg.lam,
        seed=cfg.seed,
        dataset_digest=dataset_digest(instances),
        loss_curve=tuple(loss_curve),
    )


def sampler_label(kind: str) -> str:
    return _LABELS.get(kind, kind.upper())


def method_label(trained_kind: str, executed_kind: str) -> str:
    """"SQA-QA" style pairing of training and execution samplers."""
    return f"{sampler_label(trained_kind)}-{sampler_label(executed_kind)}"


def transfer_execute(
    sched: LearnedSchedule,
    p: ConstrainedProblem,
    execution_sampler,
    params: PenaltyParams,
    ground_truth: np.ndarray | None = None,
) -> SolveResult:
    """Run the solver with a trained schedule under a possibly different
    sampler than the one used in training."""
    label = method_label(sched.trained_with["sampler"], getattr(execution_sampler, "kind", "?"))
    return ohzeki_run(
        p,
        execution_sampler,
        sched.schedule(),
        params,
        ground_truth=ground_truth,
        label=label,
    )


# Schedule file format: {"T": int, "etas": [...], "trained_with":
# {"sampler": kind, "trotter": int?, "beta": real}, "lambda": real,
# "seed": int, "dataset_digest": hex, "loss_curve": [...]}.


def schedule_to_dict(s: LearnedSchedule) -> dict:
    return {
        "T": s.T,
        "etas": s.etas.tolist(),
        "trained_with": dict(s.trained_with),
        "lambda": s.lam,
        "seed": s.seed,
        "dataset_digest": s.dataset_digest,
        "loss_curve": list(s.loss_curve),
    }


def schedule_from_dict(d: dict) -> LearnedSchedule:
    try:
        etas = np.asarray(d["etas"], dtype=np.float64)
        if etas.size != int(d["T"]):
            raise ValueError("T does not match the number of step sizes")
        return LearnedSchedule(
            etas=etas,
            trained_with=dict(d["trained_with"]),
            lam=float(d["lambda"]),
            seed=int(d["seed"]),
            dataset_digest=str(d["dataset_digest"]),
            loss_curve=tuple(float(x) for x in d.get("loss_curve", [])),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed schedule dict: {e}") from e


def save_schedule(s: LearnedSchedule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schedule_to_dict(s), indent=1) + "\n")


def load_schedule(path: str | Path) -> LearnedSchedule:
    return schedule_from_dict(json.loads(Path(path).read_text()))
