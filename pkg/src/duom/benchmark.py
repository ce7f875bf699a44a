"""Binary image reconstruction benchmark.

Instances recover a fixed binary image from noiseless random linear
measurements: maximize neighbor agreement on the pixel lattice subject to
A x = y with Gaussian A.  Methods are compared by the per-iteration best
mean squared error against the ground-truth image, averaged over a shared
instance set with 95 percent confidence intervals.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .problems import (
    ConstrainedProblem,
    LinearConstraint,
    PenaltyParams,
    QuadraticObjective,
    as_bits,
    problem_from_dict,
    problem_to_dict,
)
from .rng import check_seed, stream
from .solver import SolveResult, StepSchedule, iterations_to_zero, ohzeki_run
from .training import LearnedSchedule, transfer_execute

__all__ = [
    "ImageInstance",
    "DatasetSpec",
    "MetricSeries",
    "Method",
    "HARDNESS_RATIO",
    "lattice_objective",
    "default_ground_truth",
    "generate_instance",
    "mse",
    "confidence_interval",
    "evaluate_methods",
    "write_metric_csv",
    "instance_to_dict",
    "instance_from_dict",
    "save_instance",
    "load_instance",
    "read_pbm",
    "write_pbm",
]

# Measurement ratios M/N at or above this are expected to be hard in the
# large-N limit; configs above it get a warning, not an error.
HARDNESS_RATIO = 0.633


def lattice_objective(width: int, height: int) -> QuadraticObjective:
    """Weight -1 on every horizontally or vertically adjacent pixel pair
    (open boundary); pixel (r, c) is variable r * width + c."""
    if width < 1 or height < 1:
        raise ValueError("width and height must be at least 1")
    terms = []
    for r in range(height):
        for c in range(width):
            i = r * width + c
            if c + 1 < width:
                terms.append((i, i + 1, -1.0))
            if r + 1 < height:
                terms.append((i, i + width, -1.0))
    return QuadraticObjective(width * height, terms)


def default_ground_truth(width: int, height: int) -> np.ndarray:
    """Centered square block of ones, side ceil(width / 3)."""
    if width < 3 or height < 3:
        raise ValueError("default ground truth needs width and height >= 3")
    side = min(-(-width // 3), height, width)
    img = np.zeros((height, width), dtype=np.uint8)
    r0 = (height - side) // 2
    c0 = (width - side) // 2
    img[r0 : r0 + side, c0 : c0 + side] = 1
    return as_bits(img.reshape(-1))


@dataclass(frozen=True, eq=False)
class DatasetSpec:
    width: int
    height: int
    m_ratio: float
    count: int
    seed: int = 0
    ground_truth: np.ndarray | None = None  # defaults to the centered block

    def __post_init__(self):
        if not 0 < self.m_ratio < 1:
            raise ValueError("m_ratio must be in (0, 1)")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        check_seed(self.seed)
        if self.m_ratio >= HARDNESS_RATIO:
            warnings.warn(
                f"measurement ratio {self.m_ratio} is at or above the hardness "
                f"threshold {HARDNESS_RATIO}",
                stacklevel=2,
            )
        gt = self.ground_truth
        if gt is None:
            gt = default_ground_truth(self.width, self.height)
        gt = as_bits(gt, self.width * self.height)
        object.__setattr__(self, "ground_truth", gt)

    @property
    def n_vars(self) -> int:
        return self.width * self.height

    @property
    def n_measurements(self) -> int:
        return int(round(self.m_ratio * self.n_vars))

    def digest_payload(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "m_ratio": self.m_ratio,
            "count": self.count,
            "seed": self.seed,
            "x_star": self.ground_truth.tolist(),
        }


@dataclass(frozen=True, eq=False)
class ImageInstance:
    width: int
    height: int
    x_star: np.ndarray
    a_matrix: np.ndarray  # (M, N) measurement matrix
    y: np.ndarray  # (M,) noiseless observations A @ x_star
    seed: int = 0

    def __post_init__(self):
        n = self.width * self.height
        xs = as_bits(self.x_star, n)
        A = np.array(self.a_matrix, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"measurement matrix must be (M, {n})")
        if A.shape[0] >= n:
            raise ValueError("need fewer measurements than pixels")
        if y.shape != (A.shape[0],):
            raise ValueError("observations must be parallel to measurement rows")
        for a in (A, y):
            a.flags.writeable = False
        object.__setattr__(self, "x_star", xs)
        object.__setattr__(self, "a_matrix", A)
        object.__setattr__(self, "y", y)


def generate_instance(spec: DatasetSpec, index: int) -> tuple[ImageInstance, ConstrainedProblem]:
    """Instance `index` of the dataset: a fresh standard normal measurement
    matrix with observations of the spec's fixed ground-truth image."""
    if index < 0:
        raise ValueError("index must be non-negative")
    n, m = spec.n_vars, spec.n_measurements
    A = stream(spec.seed, index).normal(size=(m, n))
    y = A @ spec.ground_truth
    inst = ImageInstance(spec.width, spec.height, spec.ground_truth, A, y, seed=spec.seed)
    problem = ConstrainedProblem(
        lattice_objective(spec.width, spec.height),
        [LinearConstraint(A[k], float(y[k])) for k in range(m)],
    )
    return inst, problem


def mse(x: np.ndarray, x_star: np.ndarray) -> float:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(x_star, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def confidence_interval(values: Sequence[float]) -> tuple[float, float]:
    """Normal-approximation 95 percent interval: (mean, 1.96 * s / sqrt(n))."""
    a = np.asarray(values, dtype=np.float64)
    if a.size < 2:
        raise ValueError("confidence interval needs at least 2 values")
    return float(a.mean()), float(1.96 * a.std(ddof=1) / math.sqrt(a.size))


@dataclass(frozen=True, eq=False)
class MetricSeries:
    """Per-iteration aggregate of best-MSE curves over an instance set."""

    label: str
    mean_best_mse: np.ndarray
    ci_halfwidth: np.ndarray
    frac_solved: np.ndarray
    iterations_to_zero: tuple[float, ...]  # per instance, inf if never

    def __post_init__(self):
        for name in ("mean_best_mse", "ci_halfwidth", "frac_solved"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not (self.mean_best_mse.shape == self.ci_halfwidth.shape == self.frac_solved.shape):
            raise ValueError("metric arrays must be parallel")
        if self.mean_best_mse.size and self.mean_best_mse.min() < 0:
            raise ValueError("mean best MSE cannot be negative")
        if self.frac_solved.size and not (
            self.frac_solved.min() >= 0 and self.frac_solved.max() <= 1
        ):
            raise ValueError("solved fractions must lie in [0, 1]")

    @property
    def median_iterations_to_zero(self) -> float:
        return float(np.median(self.iterations_to_zero))


@dataclass(frozen=True)
class Method:
    """A labelled (schedule, execution sampler) pair to evaluate.

    schedule may be a LearnedSchedule, an explicit StepSchedule, or a float
    meaning a constant step size.
    """

    label: str
    schedule: LearnedSchedule | StepSchedule | float
    sampler: object

    def resolve_schedule(self, T: int) -> StepSchedule | LearnedSchedule:
        s = self.schedule
        if isinstance(s, (int, float)):
            return StepSchedule.constant(float(s), T)
        if len(s.etas) != T:
            raise ValueError(
                f"method {self.label!r} has a schedule of length {len(s.etas)}, expected {T}"
            )
        return s


def _run_method(method: Method, problem, x_star, params, T) -> SolveResult:
    sched = method.resolve_schedule(T)
    if isinstance(sched, LearnedSchedule):
        return transfer_execute(sched, problem, method.sampler, params, ground_truth=x_star)
    return ohzeki_run(
        problem, method.sampler, sched, params, ground_truth=x_star, label=method.label
    )


def evaluate_methods(
    instances: Sequence[tuple[ImageInstance, ConstrainedProblem]],
    methods: Sequence[Method],
    params: PenaltyParams,
    T: int,
) -> dict[str, MetricSeries]:
    """Run every method on the same instances and aggregate best-MSE curves.

    Errors carry (method, instance) context.  Returns series keyed by label
    in method order.
    """
    if not len(instances):
        raise ValueError("no instances given")
    if not len(methods):
        raise ValueError("no methods given")
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate method labels: {labels}")
    out: dict[str, MetricSeries] = {}
    for method in methods:
        curves = np.empty((len(instances), T + 1))
        iters: list[float] = []
        for i, (inst, problem) in enumerate(instances):
            try:
                res = _run_method(method, problem, inst.x_star, params, T)
            except Exception as e:
                raise RuntimeError(
                    f"method {method.label!r} failed on instance {i}: {e}"
                ) from e
            curve = res.trace.best_mse_curve()
            if len(curve) != T + 1:
                raise RuntimeError(
                    f"method {method.label!r} produced {len(curve)} records, expected {T + 1}"
                )
            curves[i] = curve
            iters.append(iterations_to_zero(res.trace))
        if len(instances) >= 2:
            stats = [confidence_interval(curves[:, t]) for t in range(T + 1)]
            means = np.array([s[0] for s in stats])
            halfw = np.array([s[1] for s in stats])
        else:
            means = curves[0].copy()
            halfw = np.zeros(T + 1)
        out[method.label] = MetricSeries(
            label=method.label,
            mean_best_mse=means,
            ci_halfwidth=halfw,
            frac_solved=(curves == 0.0).mean(axis=0),
            iterations_to_zero=tuple(iters),
        )
    return out


def write_metric_csv(series: dict[str, MetricSeries], path: str | Path) -> None:
    """CSV columns: method, iteration, mean_best_mse, ci_halfwidth, frac_solved."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "iteration", "mean_best_mse", "ci_halfwidth", "frac_solved"])
        for label, s in series.items():
            for t in range(s.mean_best_mse.size):
                w.writerow(
                    [
                        label,
                        t,
                        repr(float(s.mean_best_mse[t])),
                        repr(float(s.ci_halfwidth[t])),
                        repr(float(s.frac_solved[t])),
                    ]
                )


# Instance files are the problem JSON plus the image fields.


def instance_to_dict(inst: ImageInstance, problem: ConstrainedProblem) -> dict:
    d = problem_to_dict(problem)
    d["x_star"] = inst.x_star.tolist()
    d["width"] = inst.width
    d["height"] = inst.height
    return d


def instance_from_dict(d: dict) -> tuple[ImageInstance, ConstrainedProblem]:
    problem = problem_from_dict(d)
    try:
        width, height = int(d["width"]), int(d["height"])
        x_star = as_bits(d["x_star"], problem.n_vars)
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed instance dict: {e}") from e
    inst = ImageInstance(
        width,
        height,
        x_star,
        problem.constraint_matrix,
        problem.targets,
    )
    return inst, problem


def save_instance(inst: ImageInstance, problem: ConstrainedProblem, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst, problem), indent=1) + "\n")


def load_instance(path: str | Path) -> tuple[ImageInstance, ConstrainedProblem]:
    return instance_from_dict(json.loads(Path(path).read_text()))


def read_pbm(path: str | Path) -> tuple[np.ndarray, int, int]:
    """Plain (P1) PBM reader; returns (bits row-major, width, height)."""
    tokens: list[str] = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise ValueError("not a plain PBM (P1) file")
    try:
        width, height = int(tokens[1]), int(tokens[2])
        bits = [int(t) for t in tokens[3:]]
    except (IndexError, ValueError) as e:
        raise ValueError(f"malformed PBM file: {e}") from e
    if len(bits) != width * height:
        raise ValueError(f"PBM has {len(bits)} pixels, expected {width * height}")
    return as_bits(bits), width, height


def write_pbm(bits: np.ndarray, width: int, height: int, path: str | Path) -> None:
    b = as_bits(bits, width * height)
    rows = [" ".join(str(int(x)) for x in b[r * width : (r + 1) * width]) for r in range(height)]
    Path(path).write_text(f"P1\n{width} {height}\n" + "\n".join(rows) + "\n")
