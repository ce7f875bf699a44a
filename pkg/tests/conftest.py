import numpy as np
import pytest

from duom.problems import (
    ConstrainedProblem,
    EffectiveQubo,
    LinearConstraint,
    QuadraticObjective,
)


def random_objective(rng: np.random.Generator, n: int, density: float = 0.5) -> QuadraticObjective:
    terms = []
    for i in range(n):
        for j in range(i, n):
            if rng.random() < density:
                terms.append((i, j, float(rng.normal())))
    return QuadraticObjective(n, terms)


def random_problem(
    rng: np.random.Generator, n: int, m: int, density: float = 0.5
) -> ConstrainedProblem:
    """Random instance whose constraint targets are achievable by some bit vector."""
    obj = random_objective(rng, n, density)
    x_feasible = rng.integers(0, 2, n)
    cons = []
    for _ in range(m):
        coeffs = rng.normal(size=n)
        cons.append(LinearConstraint(coeffs, float(coeffs @ x_feasible)))
    return ConstrainedProblem(obj, cons)


def random_qubo(rng: np.random.Generator, n: int, density: float = 0.6) -> EffectiveQubo:
    quad = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                quad.append((i, j, float(rng.normal())))
    return EffectiveQubo(n, rng.normal(size=n), quad, float(rng.normal()))


def direct_objective(obj: QuadraticObjective, x) -> float:
    """Term-by-term pure-Python objective evaluation (test oracle)."""
    return sum(w * int(x[i]) * int(x[j]) for i, j, w in obj.terms)


def direct_qubo_energy(q: EffectiveQubo, x) -> float:
    """Term-by-term pure-Python energy evaluation (test oracle)."""
    total = q.offset
    for l in range(q.n_vars):
        total += q.linear[l] * int(x[l])
    for i, j, w in q.quadratic:
        total += w * int(x[i]) * int(x[j])
    return total


def all_bit_vectors(n: int):
    for idx in range(1 << n):
        yield [(idx >> l) & 1 for l in range(n)]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
