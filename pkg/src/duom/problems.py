"""Constrained binary quadratic problems and the auxiliary-field energy.

A problem is a quadratic objective over bits plus linear equality
constraints.  The solver never samples the penalty-quadratic form directly;
instead each constraint gets an auxiliary multiplier v_k and the sampled
energy is f0(x) - sum_k v_k * f_k(x), which stays quadratic in x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "QuadraticObjective",
    "LinearConstraint",
    "ConstrainedProblem",
    "PenaltyParams",
    "AuxiliaryState",
    "EffectiveQubo",
    "as_bits",
    "penalty_loss",
    "penalty_losses",
    "constraint_residuals",
    "constraint_values",
    "effective_qubo",
    "energy",
    "energies",
    "objective_values",
    "ising_view",
    "problem_to_dict",
    "problem_from_dict",
    "save_problem",
    "load_problem",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    """Read-only copy, so constructors never freeze caller-owned arrays."""
    a = np.array(a)
    a.flags.writeable = False
    return a


def _check_finite(a: np.ndarray, what: str) -> None:
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


def as_bits(x: Sequence[int] | np.ndarray, n_vars: int | None = None) -> np.ndarray:
    """Validate a binary vector and return it as a read-only uint8 array."""
    a = np.asarray(x)
    if a.ndim != 1:
        raise ValueError(f"binary vector must be 1-D, got shape {a.shape}")
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError("binary vector entries must be exactly 0 or 1")
    if n_vars is not None and a.size != n_vars:
        raise ValueError(f"binary vector has length {a.size}, expected {n_vars}")
    return _frozen(a.astype(np.uint8))


@dataclass(frozen=True)
class QuadraticObjective:
    """Sparse quadratic form over bits: sum of w * x_i * x_j with i <= j."""

    n_vars: int
    terms: tuple[tuple[int, int, float], ...]

    def __init__(self, n_vars: int, terms: Iterable[tuple[int, int, float]]):
        if n_vars < 0:
            raise ValueError("n_vars must be non-negative")
        norm = []
        seen = set()
        for i, j, w in terms:
            i, j, w = int(i), int(j), float(w)
            if not 0 <= i <= j < n_vars:
                raise ValueError(f"term index pair ({i}, {j}) out of range for {n_vars} variables")
            if (i, j) in seen:
                raise ValueError(f"duplicate objective term ({i}, {j})")
            if not np.isfinite(w):
                raise ValueError(f"objective weight for ({i}, {j}) is not finite")
            seen.add((i, j))
            norm.append((i, j, w))
        object.__setattr__(self, "n_vars", int(n_vars))
        object.__setattr__(self, "terms", tuple(norm))

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.terms:
            i, j, w = zip(*self.terms)
        else:
            i, j, w = (), (), ()
        return (
            np.asarray(i, dtype=np.intp),
            np.asarray(j, dtype=np.intp),
            np.asarray(w, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """Equality constraint coeffs . x = target."""

    coeffs: np.ndarray
    target: float

    def __init__(self, coeffs: Sequence[float] | np.ndarray, target: float):
        a = np.asarray(coeffs, dtype=np.float64)
        if a.ndim != 1:
            raise ValueError("constraint coefficients must be a 1-D vector")
        _check_finite(a, "constraint coefficients")
        if not np.isfinite(target):
            raise ValueError("constraint target is not finite")
        object.__setattr__(self, "coeffs", _frozen(a))
        object.__setattr__(self, "target", float(target))

    def value(self, x: np.ndarray) -> float:
        return float(self.coeffs @ np.asarray(x, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    objective: QuadraticObjective
    constraints: tuple[LinearConstraint, ...]

    def __init__(self, objective: QuadraticObjective, constraints: Iterable[LinearConstraint] = ()):
        cons = tuple(constraints)
        for k, c in enumerate(cons):
            if c.coeffs.size != objective.n_vars:
                raise ValueError(
                    f"constraint {k} has {c.coeffs.size} coefficients, expected {objective.n_vars}"
                )
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "constraints", cons)

    @property
    def n_vars(self) -> int:
        return self.objective.n_vars

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    @cached_property
    def constraint_matrix(self) -> np.ndarray:
        """(m, N) matrix whose row k holds the k-th constraint coefficients."""
        if not self.constraints:
            return _frozen(np.zeros((0, self.n_vars)))
        return _frozen(np.stack([c.coeffs for c in self.constraints]))

    @cached_property
    def targets(self) -> np.ndarray:
        return _frozen(np.array([c.target for c in self.constraints], dtype=np.float64))


@dataclass(frozen=True)
class PenaltyParams:
    lam: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be a finite positive real")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be a finite positive real")


@dataclass(frozen=True, eq=False)
class AuxiliaryState:
    """Constraint multipliers v at a given iteration."""

    v: np.ndarray
    iteration: int = 0

    def __init__(self, v: Sequence[float] | np.ndarray, iteration: int = 0):
        a = np.asarray(v, dtype=np.float64)
        if a.ndim != 1:
            raise ValueError("v must be a 1-D vector")
        _check_finite(a, "auxiliary state v")
        if iteration < 0:
            raise ValueError("iteration must be non-negative")
        object.__setattr__(self, "v", _frozen(a))
        object.__setattr__(self, "iteration", int(iteration))

    @classmethod
    def zeros(cls, m: int) -> "AuxiliaryState":
        return cls(np.zeros(m), 0)


@dataclass(frozen=True, eq=False)
class EffectiveQubo:
    """Energy offset + linear . x + sum of w * x_i * x_j with i < j."""

    n_vars: int
    linear: np.ndarray
    quadratic: tuple[tuple[int, int, float], ...]
    offset: float = 0.0

    def __init__(
        self,
        n_vars: int,
        linear: Sequence[float] | np.ndarray,
        quadratic: Iterable[tuple[int, int, float]] = (),
        offset: float = 0.0,
    ):
        lin = np.asarray(linear, dtype=np.float64)
        if lin.shape != (n_vars,):
            raise ValueError(f"linear part has shape {lin.shape}, expected ({n_vars},)")
        _check_finite(lin, "linear coefficients")
        if not np.isfinite(offset):
            raise ValueError("offset is not finite")
        norm = []
        seen = set()
        for i, j, w in quadratic:
            i, j, w = int(i), int(j), float(w)
            if not 0 <= i < j < n_vars:
                raise ValueError(f"quadratic index pair ({i}, {j}) invalid for {n_vars} variables")
            if (i, j) in seen:
                raise ValueError(f"duplicate quadratic term ({i}, {j})")
            if not np.isfinite(w):
                raise ValueError(f"quadratic weight for ({i}, {j}) is not finite")
            seen.add((i, j))
            norm.append((i, j, w))
        object.__setattr__(self, "n_vars", int(n_vars))
        object.__setattr__(self, "linear", _frozen(lin))
        object.__setattr__(self, "quadratic", tuple(norm))
        object.__setattr__(self, "offset", float(offset))

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.quadratic:
            i, j, w = zip(*self.quadratic)
        else:
            i, j, w = (), (), ()
        return (
            np.asarray(i, dtype=np.intp),
            np.asarray(j, dtype=np.intp),
            np.asarray(w, dtype=np.float64),
        )

    @cached_property
    def dense_coupling(self) -> np.ndarray:
        """Symmetric (N, N) weight matrix with zero diagonal."""
        W = np.zeros((self.n_vars, self.n_vars))
        i, j, w = self._arrays
        W[i, j] = w
        W[j, i] = w
        return _frozen(W)


def objective_values(obj: QuadraticObjective, x: np.ndarray) -> np.ndarray:
    """Objective for each row of a (n, N) bit matrix."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != obj.n_vars:
        raise ValueError(f"bit matrix has {X.shape[1]} columns, expected {obj.n_vars}")
    i, j, w = obj._arrays
    if i.size == 0:
        return np.zeros(X.shape[0])
    return (X[:, i] * X[:, j]) @ w


def constraint_values(p: ConstrainedProblem, x: np.ndarray) -> np.ndarray:
    """(n, m) matrix of f_k row values for a (n, N) bit matrix."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != p.n_vars:
        raise ValueError(f"bit matrix has {X.shape[1]} columns, expected {p.n_vars}")
    return X @ p.constraint_matrix.T


def constraint_residuals(x: np.ndarray, p: ConstrainedProblem) -> np.ndarray:
    """Vector of f_k(x) - C_k."""
    bits = as_bits(x, p.n_vars)
    return constraint_values(p, bits)[0] - p.targets


def penalty_loss(x: np.ndarray, p: ConstrainedProblem, lam: float) -> float:
    """Objective plus lam times the squared constraint residuals."""
    bits = as_bits(x, p.n_vars)
    r = constraint_residuals(bits, p)
    return float(objective_values(p.objective, bits)[0] + lam * (r @ r))


def penalty_losses(x: np.ndarray, p: ConstrainedProblem, lam: float) -> np.ndarray:
    """Penalty loss for each row of a (n, N) bit matrix."""
    X = np.atleast_2d(x)
    r = constraint_values(p, X) - p.targets
    return objective_values(p.objective, X) + lam * (r * r).sum(axis=1)


def effective_qubo(p: ConstrainedProblem, v: AuxiliaryState) -> EffectiveQubo:
    """Quadratic energy whose value at x is f0(x) - sum_k v_k * f_k(x).

    Diagonal objective terms collapse onto the linear part (x * x = x for
    bits), and the multiplier field tilts the linear part by -A^T v.
    """
    if v.v.size != p.n_constraints:
        raise ValueError(f"auxiliary state has length {v.v.size}, expected {p.n_constraints}")
    linear = np.zeros(p.n_vars)
    quad = []
    for i, j, w in p.objective.terms:
        if i == j:
            linear[i] += w
        else:
            quad.append((i, j, w))
    if p.n_constraints:
        linear -= p.constraint_matrix.T @ v.v
    return EffectiveQubo(p.n_vars, linear, quad, 0.0)


def energy(q: EffectiveQubo, x: np.ndarray) -> float:
    bits = as_bits(x, q.n_vars)
    return float(energies(q, bits[None, :])[0])


def energies(q: EffectiveQubo, x: np.ndarray) -> np.ndarray:
    """Energy of each row of a (n, N) bit matrix."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if X.shape[1] != q.n_vars:
        raise ValueError(f"bit matrix has {X.shape[1]} columns, expected {q.n_vars}")
    i, j, w = q._arrays
    out = X @ q.linear + q.offset
    if i.size:
        out += (X[:, i] * X[:, j]) @ w
    return out


def ising_view(q: EffectiveQubo) -> tuple[np.ndarray, tuple[tuple[int, int, float], ...], float]:
    """Spin form (h, J, offset) with x = (s + 1) / 2, energies preserved."""
    n = q.n_vars
    h = q.linear / 2.0
    offset = q.offset + float(q.linear.sum()) / 2.0
    J = []
    for i, j, w in q.quadratic:
        J.append((i, j, w / 4.0))
        h[i] += w / 4.0
        h[j] += w / 4.0
        offset += w / 4.0
    return _frozen(h), tuple(J), float(offset)


# Problem file format: {"n_vars": int, "objective": {"terms": [[i, j, w], ...]},
# "constraints": [{"coeffs": [...], "target": c}, ...]}.  Terms are written
# sorted by (i, j); readers accept any order.


def problem_to_dict(p: ConstrainedProblem) -> dict:
    return {
        "n_vars": p.n_vars,
        "objective": {"terms": [[i, j, w] for i, j, w in sorted(p.objective.terms)]},
        "constraints": [
            {"coeffs": c.coeffs.tolist(), "target": c.target} for c in p.constraints
        ],
    }


def problem_from_dict(d: dict) -> ConstrainedProblem:
    try:
        n = int(d["n_vars"])
        terms = [(int(i), int(j), float(w)) for i, j, w in d["objective"]["terms"]]
        cons = [
            LinearConstraint(np.asarray(c["coeffs"], dtype=np.float64), float(c["target"]))
            for c in d.get("constraints", [])
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed problem dict: {e}") from e
    return ConstrainedProblem(QuadraticObjective(n, terms), cons)


def save_problem(p: ConstrainedProblem, path: str | Path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p), indent=1) + "\n")


def load_problem(path: str | Path) -> ConstrainedProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))
