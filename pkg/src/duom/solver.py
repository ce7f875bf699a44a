"""Sampling-based constraint solver with per-iteration step sizes.

Each iteration samples the current effective energy, estimates the
constraint expectations, and nudges the multipliers toward the targets:
v_k <- v_k + eta_t * (C_k - <f_k>).  After the last update one more
sampling round is taken; the answer is the penalty-loss minimizer over
every sample seen anywhere in the run.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .problems import (
    AuxiliaryState,
    ConstrainedProblem,
    PenaltyParams,
    effective_qubo,
    objective_values,
    penalty_losses,
)
from .samplers import ExpectationEstimate, SampleSet

__all__ = [
    "StepSchedule",
    "IterationRecord",
    "SolverTrace",
    "SolveResult",
    "SolverError",
    "DivergenceError",
    "SamplerRunError",
    "ohzeki_step",
    "ohzeki_run",
    "best_feasible",
    "grid_search_step",
    "iterations_to_zero",
]

DIVERGENCE_BOUND = 1e12


class SolverError(Exception):
    pass


class DivergenceError(SolverError):
    def __init__(self, iteration: int, values: np.ndarray):
        worst = float(np.abs(values).max()) if values.size else 0.0
        super().__init__(
            f"auxiliary variables diverged at iteration {iteration} "
            f"(max |v_k| = {worst:.3e}, bound {DIVERGENCE_BOUND:.0e})"
        )
        self.iteration = iteration


class SamplerRunError(SolverError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"sampling failed at iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class StepSchedule:
    """Per-iteration step sizes; kind records how they were obtained."""

    etas: np.ndarray
    kind: str = "constant"

    def __init__(self, etas: Sequence[float] | np.ndarray, kind: str = "constant"):
        a = np.array(etas, dtype=np.float64)
        if a.ndim != 1:
            raise ValueError("etas must be a 1-D vector")
        if a.size and not np.all(np.isfinite(a)):
            raise ValueError("etas must be finite")
        if kind not in ("constant", "learned"):
            raise ValueError(f"unknown schedule kind {kind!r}")
        a.flags.writeable = False
        object.__setattr__(self, "etas", a)
        object.__setattr__(self, "kind", kind)

    @classmethod
    def constant(cls, eta: float, T: int) -> "StepSchedule":
        return cls(np.full(T, float(eta)), "constant")

    def __len__(self) -> int:
        return self.etas.size


@dataclass(eq=False)
class IterationRecord:
    iteration: int
    v: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    residual: np.ndarray
    best_loss: float
    best_mse: float | None
    eta: float | None
    sample_seconds: float = 0.0
    step_seconds: float = 0.0

    @property
    def residual_l2(self) -> float:
        return float(np.linalg.norm(self.residual))


@dataclass(eq=False)
class SolverTrace:
    records: list[IterationRecord]

    def best_mse_curve(self) -> list[float | None]:
        return [r.best_mse for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        """Columns: iteration, residual_l2, best_loss, best_mse, eta, one
        v_k column per constraint (first 32 when there are more), then
        per-phase timings."""
        m = self.records[0].v.size if self.records else 0
        v_cols = min(m, 32)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["iteration", "residual_l2", "best_loss", "best_mse", "eta"]
                + [f"v_{k}" for k in range(v_cols)]
                + ["sample_seconds", "step_seconds"]
            )
            for r in self.records:
                w.writerow(
                    [
                        r.iteration,
                        repr(r.residual_l2),
                        repr(r.best_loss),
                        "" if r.best_mse is None else repr(r.best_mse),
                        "" if r.eta is None else repr(r.eta),
                    ]
                    + [repr(float(x)) for x in r.v[:v_cols]]
                    + [f"{r.sample_seconds:.6f}", f"{r.step_seconds:.6f}"]
                )


@dataclass(eq=False)
class SolveResult:
    best_x: np.ndarray
    best_loss: float
    final_v: AuxiliaryState
    trace: SolverTrace
    final_samples: SampleSet
    label: str | None = None


def ohzeki_step(
    v: AuxiliaryState,
    est: ExpectationEstimate,
    targets: np.ndarray,
    eta: float,
) -> AuxiliaryState:
    """One multiplier update v_k + eta * (C_k - <f_k>)."""
    t = np.asarray(targets, dtype=np.float64)
    if est.mean.size != v.v.size or t.size != v.v.size:
        raise ValueError(
            f"length mismatch: v has {v.v.size}, mean {est.mean.size}, targets {t.size}"
        )
    return AuxiliaryState(v.v + eta * (t - est.mean), v.iteration + 1)


def _lex_smallest(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 1:
        return rows[0]
    order = np.lexsort(rows.T[::-1])
    return rows[order[0]]


def _best_in_set(
    s: SampleSet, p: ConstrainedProblem, lam: float
) -> tuple[np.ndarray, float, float]:
    """Minimum penalty-loss sample; ties broken by objective value, then by
    lexicographically smallest bit string."""
    losses = penalty_losses(s.samples, p, lam)
    best_loss = float(losses.min())
    tied = s.samples[losses == best_loss]
    f0 = objective_values(p.objective, tied)
    best_f0 = float(f0.min())
    x = _lex_smallest(tied[f0 == best_f0])
    return x.copy(), best_loss, best_f0


def best_feasible(
    s: SampleSet, p: ConstrainedProblem, lam: float
) -> tuple[np.ndarray, float]:
    x, loss, _ = _best_in_set(s, p, lam)
    return x, loss


class _RunningBest:
    def __init__(self, p: ConstrainedProblem, lam: float, ground_truth: np.ndarray | None):
        self.p = p
        self.lam = lam
        self.x_star = (
            None if ground_truth is None else np.asarray(ground_truth, dtype=np.float64)
        )
        self.x: np.ndarray | None = None
        self.loss = math.inf
        self.f0 = math.inf
        self.mse: float | None = None if ground_truth is None else math.inf

    def update(self, s: SampleSet) -> None:
        x, loss, f0 = _best_in_set(s, self.p, self.lam)
        if (loss, f0, tuple(x.tolist())) < (
            self.loss,
            self.f0,
            () if self.x is None else tuple(self.x.tolist()),
        ):
            self.x, self.loss, self.f0 = x, loss, f0
        if self.x_star is not None:
            errs = np.mean((s.samples - self.x_star) ** 2, axis=1)
            self.mse = min(self.mse, float(errs.min()))


def _guarded_step(
    v: AuxiliaryState, est: ExpectationEstimate, targets: np.ndarray, eta: float, t: int
) -> AuxiliaryState:
    arr = v.v + eta * (targets - est.mean)
    if not np.all(np.isfinite(arr)) or (arr.size and np.abs(arr).max() > DIVERGENCE_BOUND):
        raise DivergenceError(t + 1, arr)
    return AuxiliaryState(arr, v.iteration + 1)


def ohzeki_run(
    p: ConstrainedProblem,
    sampler,
    schedule: StepSchedule,
    params: PenaltyParams,
    v0: AuxiliaryState | None = None,
    ground_truth: np.ndarray | None = None,
    label: str | None = None,
) -> SolveResult:
    """Run len(schedule) multiplier updates plus a final sampling round.

    The sampler must expose expectations(qubo, problem); its configured
    inverse temperature has to match params.beta since the update dynamics
    and any gradient bookkeeping assume the sampled distribution is the
    Boltzmann distribution at that beta.
    """
    cfg = getattr(sampler, "config", None)
    if cfg is not None and cfg.beta != params.beta:
        raise ValueError(
            f"sampler beta {cfg.beta} does not match penalty params beta {params.beta}"
        )
    v = AuxiliaryState.zeros(p.n_constraints) if v0 is None else v0
    if v.v.size != p.n_constraints:
        raise ValueError(f"v0 has length {v.v.size}, expected {p.n_constraints}")
    targets = p.targets
    best = _RunningBest(p, params.lam, ground_truth)
    records: list[IterationRecord] = []

    def sample_at(t: int, state: AuxiliaryState):
        q = effective_qubo(p, state)
        t0 = time.perf_counter()
        try:
            est, sset = sampler.expectations(q, p)
        except Exception as e:
            raise SamplerRunError(t, e) from e
        return est, sset, time.perf_counter() - t0

    for t in range(len(schedule)):
        eta = float(schedule.etas[t])
        est, sset, dt = sample_at(t, v)
        best.update(sset)
        t0 = time.perf_counter()
        v_next = _guarded_step(v, est, targets, eta, t)
        step_dt = time.perf_counter() - t0
        records.append(
            IterationRecord(
                iteration=t,
                v=v.v,
                mean=est.mean,
                variance=est.variance,
                residual=targets - est.mean,
                best_loss=best.loss,
                best_mse=best.mse,
                eta=eta,
                sample_seconds=dt,
                step_seconds=step_dt,
            )
        )
        v = v_next

    est, sset, dt = sample_at(len(schedule), v)
    best.update(sset)
    records.append(
        IterationRecord(
            iteration=len(schedule),
            v=v.v,
            mean=est.mean,
            variance=est.variance,
            residual=targets - est.mean,
            best_loss=best.loss,
            best_mse=best.mse,
            eta=None,
            sample_seconds=dt,
        )
    )
    assert best.x is not None
    return SolveResult(
        best_x=best.x,
        best_loss=best.loss,
        final_v=v,
        trace=SolverTrace(records),
        final_samples=sset,
        label=label,
    )


def iterations_to_zero(trace: SolverTrace) -> float:
    """First iteration whose running best MSE hits zero, inf if never."""
    for r in trace.records:
        if r.best_mse is not None and r.best_mse == 0.0:
            return float(r.iteration)
    return math.inf


def grid_search_step(
    instances: Sequence[tuple[ConstrainedProblem, np.ndarray]],
    candidates: Sequence[float],
    params: PenaltyParams,
    sampler,
    T: int,
) -> tuple[float, list[dict]]:
    """Try each constant step size on every instance.

    Returns the step size with the lowest mean final best MSE (ties: fewer
    mean iterations to zero MSE, then the smaller step size) along with the
    full per-candidate table.  A diverging candidate scores infinity.
    """
    if not len(candidates):
        raise ValueError("no step size candidates given")
    if not len(instances):
        raise ValueError("no instances given")
    table: list[dict] = []
    for eta in candidates:
        finals: list[float] = []
        iters: list[float] = []
        for problem, x_star in instances:
            if x_star is None:
                raise ValueError("grid search requires instances with ground truth")
            try:
                res = ohzeki_run(
                    problem,
                    sampler,
                    StepSchedule.constant(eta, T),
                    params,
                    ground_truth=x_star,
                )
            except DivergenceError:
                finals.append(math.inf)
                iters.append(math.inf)
                continue
            finals.append(res.trace.records[-1].best_mse)
            iters.append(iterations_to_zero(res.trace))
        table.append(
            {
                "eta": float(eta),
                "mean_final_best_mse": float(np.mean(finals)),
                "mean_iterations_to_zero": float(np.mean(iters)),
                "final_best_mse": finals,
                "iterations_to_zero": iters,
            }
        )
    best = min(
        table,
        key=lambda r: (r["mean_final_best_mse"], r["mean_iterations_to_zero"], r["eta"]),
    )
    return best["eta"], table
