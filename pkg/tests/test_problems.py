import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duom.problems import (
    AuxiliaryState,
    ConstrainedProblem,
    EffectiveQubo,
    LinearConstraint,
    QuadraticObjective,
    as_bits,
    constraint_residuals,
    effective_qubo,
    energies,
    energy,
    ising_view,
    penalty_loss,
    penalty_losses,
    problem_from_dict,
    problem_to_dict,
)

from conftest import (
    all_bit_vectors,
    direct_objective,
    direct_qubo_energy,
    random_problem,
    random_qubo,
)


def two_var_problem():
    obj = QuadraticObjective(2, [(0, 1, -1.0)])
    return ConstrainedProblem(obj, [LinearConstraint([1.0, 1.0], 1.0)])


class TestPenaltyLoss:
    def test_feasible_point_gives_objective(self, rng):
        p = random_problem(rng, 6, 3)
        # recover a feasible x by construction: targets were built from one
        for x in all_bit_vectors(6):
            if np.allclose(constraint_residuals(x, p), 0, atol=1e-9):
                assert penalty_loss(x, p, 2.5) == pytest.approx(
                    direct_objective(p.objective, x)
                )
                break
        else:
            pytest.fail("no feasible point found")

    def test_lambda_zero_gives_objective(self, rng):
        p = random_problem(rng, 5, 2)
        for x in ([0] * 5, [1] * 5, [1, 0, 1, 0, 1]):
            assert penalty_loss(x, p, 0.0) == pytest.approx(direct_objective(p.objective, x))

    def test_hand_case(self):
        # f0 = -x1*x2, constraint x1 + x2 = 1, lambda 1, x = (1, 1)
        assert penalty_loss([1, 1], two_var_problem(), 1.0) == pytest.approx(0.0)

    def test_penalty_nonnegative_and_zero_iff_feasible(self, rng):
        p = random_problem(rng, 7, 2)
        lam = 1.7
        for x in all_bit_vectors(7):
            gap = penalty_loss(x, p, lam) - direct_objective(p.objective, x)
            assert gap >= -1e-12
            r = constraint_residuals(x, p)
            if np.all(r == 0):
                assert gap == 0.0
            if gap == 0.0:
                assert np.allclose(r, 0, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            penalty_loss([1, 0, 1], two_var_problem(), 1.0)

    def test_vectorized_matches_scalar(self, rng):
        p = random_problem(rng, 6, 2)
        X = rng.integers(0, 2, size=(20, 6))
        batch = penalty_losses(X, p, 0.9)
        for row, expected in zip(X, batch):
            assert penalty_loss(row, p, 0.9) == pytest.approx(expected, rel=1e-12)


class TestConstraintResiduals:
    def test_feasible_all_zero(self):
        p = two_var_problem()
        assert np.allclose(constraint_residuals([1, 0], p), [0.0])

    def test_no_constraints_empty(self):
        p = ConstrainedProblem(QuadraticObjective(3, [(0, 1, 1.0)]), [])
        assert constraint_residuals([1, 1, 0], p).shape == (0,)

    def test_hand_case(self):
        p = two_var_problem()
        assert np.allclose(constraint_residuals([1, 1], p), [1.0])


class TestEffectiveQubo:
    def test_zero_field_reproduces_objective(self, rng):
        p = random_problem(rng, 6, 2)
        q = effective_qubo(p, AuxiliaryState.zeros(2))
        for x in all_bit_vectors(6):
            assert energy(q, x) == pytest.approx(direct_objective(p.objective, x), abs=1e-12)

    def test_single_constraint_shifts_linear(self):
        obj = QuadraticObjective(2, [(0, 0, 3.0)])
        p = ConstrainedProblem(obj, [LinearConstraint([1.0, 0.0], 0.0)])
        q = effective_qubo(p, AuxiliaryState([2.0]))
        assert q.linear[0] == pytest.approx(3.0 - 2.0)
        assert q.linear[1] == 0.0

    def test_exhaustive_identity_random_instance(self, rng):
        # oracle: direct evaluation of f0(x) - sum_k v_k f_k(x) over all 256 x
        p = random_problem(rng, 8, 3)
        v = AuxiliaryState(rng.normal(size=3))
        q = effective_qubo(p, v)
        for x in all_bit_vectors(8):
            f0 = direct_objective(p.objective, x)
            fk = [float(c.coeffs @ np.asarray(x, dtype=float)) for c in p.constraints]
            expected = f0 - sum(vk * f for vk, f in zip(v.v, fk))
            assert energy(q, x) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_dimension_mismatch(self, rng):
        p = random_problem(rng, 4, 2)
        with pytest.raises(ValueError):
            effective_qubo(p, AuxiliaryState.zeros(3))


class TestEnergy:
    def test_zero_vector_gives_offset(self, rng):
        q = random_qubo(rng, 5)
        assert energy(q, [0] * 5) == pytest.approx(q.offset)

    def test_zero_qubo(self):
        q = EffectiveQubo(4, np.zeros(4), [], 0.0)
        assert energy(q, [1, 0, 1, 1]) == 0.0

    def test_three_var_term_by_term(self):
        q = EffectiveQubo(3, [0.5, -1.0, 2.0], [(0, 1, 1.5), (1, 2, -0.25)], 0.75)
        for x in all_bit_vectors(3):
            assert energy(q, x) == pytest.approx(direct_qubo_energy(q, x), rel=1e-14)

    def test_vectorized_matches_scalar(self, rng):
        q = random_qubo(rng, 7)
        X = rng.integers(0, 2, size=(40, 7))
        for row, expected in zip(X, energies(q, X)):
            assert energy(q, row) == pytest.approx(expected, rel=1e-12)


class TestIsingView:
    def test_single_linear_term(self):
        q = EffectiveQubo(1, [4.0], [], 0.0)
        h, J, off = ising_view(q)
        assert h[0] == pytest.approx(2.0)
        assert J == ()
        assert off == pytest.approx(2.0)

    def test_zero_qubo(self):
        h, J, off = ising_view(EffectiveQubo(3, np.zeros(3), [], 0.0))
        assert np.all(h == 0) and J == () and off == 0.0

    def test_exhaustive_identity_random(self, rng):
        q = random_qubo(rng, 6)
        h, J, off = ising_view(q)
        for x in all_bit_vectors(6):
            s = [2 * b - 1 for b in x]
            e_spin = off + sum(hi * si for hi, si in zip(h, s))
            e_spin += sum(w * s[i] * s[j] for i, j, w in J)
            assert e_spin == pytest.approx(energy(q, x), rel=1e-12, abs=1e-12)

    def test_exact_for_dyadic_weights(self):
        # integer weights make the substitution arithmetic exact in floats
        q = EffectiveQubo(4, [1.0, -2.0, 0.0, 4.0], [(0, 1, -1.0), (2, 3, 2.0)], 3.0)
        h, J, off = ising_view(q)
        for x in all_bit_vectors(4):
            s = [2 * b - 1 for b in x]
            e_spin = off + sum(hi * si for hi, si in zip(h, s))
            e_spin += sum(w * s[i] * s[j] for i, j, w in J)
            assert e_spin == energy(q, x)


class TestConstruction:
    def test_duplicate_terms_rejected(self):
        with pytest.raises(ValueError):
            QuadraticObjective(3, [(0, 1, 1.0), (0, 1, 2.0)])
        with pytest.raises(ValueError):
            EffectiveQubo(3, np.zeros(3), [(0, 1, 1.0), (0, 1, 2.0)])

    def test_bad_indices_rejected(self):
        with pytest.raises(ValueError):
            QuadraticObjective(3, [(1, 0, 1.0)])  # i > j
        with pytest.raises(ValueError):
            QuadraticObjective(3, [(0, 3, 1.0)])
        with pytest.raises(ValueError):
            EffectiveQubo(3, np.zeros(3), [(1, 1, 1.0)])  # diagonal not allowed

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            QuadraticObjective(2, [(0, 1, float("nan"))])
        with pytest.raises(ValueError):
            LinearConstraint([1.0, float("inf")], 0.0)
        with pytest.raises(ValueError):
            AuxiliaryState([float("nan")])

    def test_constraint_length_checked(self):
        obj = QuadraticObjective(3, [])
        with pytest.raises(ValueError):
            ConstrainedProblem(obj, [LinearConstraint([1.0, 2.0], 0.0)])

    def test_bits_validated(self):
        with pytest.raises(ValueError):
            as_bits([0, 2, 1])
        with pytest.raises(ValueError):
            as_bits([0, 1], 3)

    def test_immutable(self, rng):
        p = random_problem(rng, 4, 1)
        with pytest.raises(ValueError):
            p.constraints[0].coeffs[0] = 5.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_effective_energy_identity_property(n, m, seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, n, m)
    v = AuxiliaryState(rng.normal(size=m))
    q = effective_qubo(p, v)
    x = rng.integers(0, 2, n)
    f0 = direct_objective(p.objective, x)
    fk = p.constraint_matrix @ x if m else np.zeros(0)
    assert energy(q, x) == pytest.approx(f0 - float(v.v @ fk), rel=1e-12, abs=1e-9)


class TestProblemJson:
    def test_round_trip(self, rng):
        p = random_problem(rng, 5, 2)
        d = problem_to_dict(p)
        p2 = problem_from_dict(json.loads(json.dumps(d)))
        assert problem_to_dict(p2) == d

    def test_terms_written_sorted(self):
        obj = QuadraticObjective(3, [(1, 2, 1.0), (0, 1, 2.0), (0, 0, 3.0)])
        d = problem_to_dict(ConstrainedProblem(obj, []))
        assert d["objective"]["terms"] == sorted(d["objective"]["terms"])

    def test_reader_accepts_any_order(self):
        d = {
            "n_vars": 3,
            "objective": {"terms": [[1, 2, 1.0], [0, 1, 2.0]]},
            "constraints": [{"coeffs": [1.0, 0.0, 1.0], "target": 1.0}],
        }
        shuffled = dict(d)
        shuffled["objective"] = {"terms": [[0, 1, 2.0], [1, 2, 1.0]]}
        a = problem_from_dict(d)
        b = problem_from_dict(shuffled)
        assert problem_to_dict(a) == problem_to_dict(b)

    def test_malformed_rejected(self):
        with pytest.raises(ValueError):
            problem_from_dict({"objective": {"terms": []}})
