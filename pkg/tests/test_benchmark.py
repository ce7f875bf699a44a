import csv
import math

import numpy as np
import pytest

from duom.benchmark import (
    DatasetSpec,
    ImageInstance,
    Method,
    MetricSeries,
    confidence_interval,
    default_ground_truth,
    evaluate_methods,
    generate_instance,
    instance_from_dict,
    instance_to_dict,
    lattice_objective,
    load_instance,
    mse,
    read_pbm,
    save_instance,
    write_metric_csv,
    write_pbm,
)
from duom.problems import PenaltyParams, constraint_residuals
from duom.samplers import ExactSampler, MHSampler, SamplerConfig
from duom.solver import StepSchedule, ohzeki_run
from duom.training import LearnedSchedule


class TestLatticeObjective:
    def test_degenerate_single_pixel(self):
        assert lattice_objective(1, 1).terms == ()

    def test_two_by_two(self):
        obj = lattice_objective(2, 2)
        assert len(obj.terms) == 4
        assert all(w == -1.0 for _, _, w in obj.terms)

    @pytest.mark.parametrize("w,h", [(2, 3), (4, 4), (15, 15), (6, 6)])
    def test_term_count_formula(self, w, h):
        assert len(lattice_objective(w, h).terms) == 2 * w * h - w - h

    def test_full_size_count(self):
        assert len(lattice_objective(15, 15).terms) == 420

    def test_adjacency_only(self):
        w, h = 4, 3
        for i, j, _ in lattice_objective(w, h).terms:
            ri, ci = divmod(i, w)
            rj, cj = divmod(j, w)
            assert abs(ri - rj) + abs(ci - cj) == 1


def connected_component_size(bits, width, height):
    img = np.asarray(bits).reshape(height, width)
    ones = {(r, c) for r in range(height) for c in range(width) if img[r, c]}
    if not ones:
        return 0
    stack = [next(iter(ones))]
    seen = set(stack)
    while stack:
        r, c = stack.pop()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (r + dr, c + dc)
            if n in ones and n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) if len(seen) == len(ones) else -1


class TestDefaultGroundTruth:
    def test_15x15_centered_block(self):
        gt = default_ground_truth(15, 15)
        assert gt.sum() == 25
        img = gt.reshape(15, 15)
        assert img[5:10, 5:10].all()
        assert img.sum() == img[5:10, 5:10].sum()

    def test_3x3_center_pixel(self):
        gt = default_ground_truth(3, 3)
        assert gt.sum() == 1
        assert gt.reshape(3, 3)[1, 1] == 1

    @pytest.mark.parametrize("w,h", [(3, 3), (6, 6), (9, 9), (15, 15)])
    def test_single_connected_blob(self, w, h):
        gt = default_ground_truth(w, h)
        assert connected_component_size(gt, w, h) == int(gt.sum())

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            default_ground_truth(2, 5)


class TestGenerateInstance:
    def test_reference_dimensions(self):
        spec = DatasetSpec(15, 15, 0.6, 1, seed=0)
        inst, problem = generate_instance(spec, 0)
        assert problem.n_vars == 225
        assert problem.n_constraints == 135
        assert inst.a_matrix.shape == (135, 225)

    def test_zero_image_zero_observations(self):
        gt = np.zeros(36, dtype=np.uint8)
        spec = DatasetSpec(6, 6, 0.5, 1, seed=3, ground_truth=gt)
        inst, _ = generate_instance(spec, 0)
        assert np.all(inst.y == 0.0)

    def test_deterministic(self):
        spec = DatasetSpec(6, 6, 0.5, 2, seed=9)
        a1, p1 = generate_instance(spec, 1)
        a2, p2 = generate_instance(spec, 1)
        assert np.array_equal(a1.a_matrix, a2.a_matrix)
        assert np.array_equal(a1.y, a2.y)
        b, _ = generate_instance(spec, 0)
        assert not np.array_equal(a1.a_matrix, b.a_matrix)

    def test_ground_truth_feasible(self):
        spec = DatasetSpec(6, 6, 0.5, 1, seed=4)
        inst, problem = generate_instance(spec, 0)
        r = constraint_residuals(inst.x_star, problem)
        assert np.all(np.abs(r) < 1e-12)

    def test_hardness_warning(self):
        with pytest.warns(UserWarning):
            DatasetSpec(6, 6, 0.7, 1)


class TestMse:
    def test_zero_iff_equal(self, rng):
        x = rng.integers(0, 2, 30)
        assert mse(x, x) == 0.0
        y = x.copy()
        y[7] ^= 1
        assert mse(x, y) > 0.0

    def test_complement_is_one(self, rng):
        x = rng.integers(0, 2, 40)
        assert mse(x, 1 - x) == 1.0

    def test_single_pixel(self):
        x = np.zeros(225)
        y = x.copy()
        y[0] = 1
        assert mse(x, y) == pytest.approx(1 / 225)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            mse(np.zeros(3), np.zeros(4))


class TestConfidenceInterval:
    def test_equal_values(self):
        mean, hw = confidence_interval([2.0, 2.0, 2.0])
        assert mean == 2.0 and hw == 0.0

    def test_closed_form_pair(self):
        mean, hw = confidence_interval([0.0, 1.0])
        assert mean == pytest.approx(0.5)
        assert hw == pytest.approx(1.96 * math.sqrt(0.5) / math.sqrt(2))
        assert hw == pytest.approx(0.98)

    def test_single_value_rejected(self):
        with pytest.raises(ValueError):
            confidence_interval([1.0])


def small_instances(count=3, seed=0):
    spec = DatasetSpec(3, 3, 0.55, count, seed=seed)
    return [generate_instance(spec, i) for i in range(count)]


class TestEvaluateMethods:
    def test_single_method_single_instance_equals_trace(self):
        pairs = small_instances(1, seed=7)
        sampler = ExactSampler(SamplerConfig(beta=1.0))
        T = 4
        series = evaluate_methods(
            pairs, [Method("fixed", 1e-2, sampler)], PenaltyParams(1.0, 1.0), T
        )
        inst, problem = pairs[0]
        res = ohzeki_run(
            problem,
            sampler,
            StepSchedule.constant(1e-2, T),
            PenaltyParams(1.0, 1.0),
            ground_truth=inst.x_star,
        )
        assert np.allclose(series["fixed"].mean_best_mse, res.trace.best_mse_curve())
        assert np.all(series["fixed"].ci_halfwidth == 0.0)

    def test_duplicate_labels_rejected(self):
        pairs = small_instances(1)
        sampler = ExactSampler(SamplerConfig(beta=1.0))
        methods = [Method("a", 1e-2, sampler), Method("a", 2e-2, sampler)]
        with pytest.raises(ValueError):
            evaluate_methods(pairs, methods, PenaltyParams(1.0, 1.0), 2)

    def test_mean_invariant_to_instance_order(self):
        pairs = small_instances(3, seed=1)
        sampler = MHSampler(SamplerConfig(beta=1.0, num_reads=20, sweeps_per_read=15, seed=2))
        params = PenaltyParams(1.0, 1.0)
        fwd = evaluate_methods(pairs, [Method("m", 5e-2, sampler)], params, 3)
        rev = evaluate_methods(pairs[::-1], [Method("m", 5e-2, sampler)], params, 3)
        assert np.allclose(fwd["m"].mean_best_mse, rev["m"].mean_best_mse)
        assert np.allclose(fwd["m"].frac_solved, rev["m"].frac_solved)

    def test_learned_schedule_method(self):
        pairs = small_instances(2, seed=2)
        sched = LearnedSchedule(
            etas=np.full(3, 5e-2),
            trained_with={"sampler": "mh", "beta": 1.0},
            lam=1.0,
            seed=0,
            dataset_digest="00",
            loss_curve=(),
        )
        from duom.samplers import SQASampler

        sampler = SQASampler(SamplerConfig(beta=1.0, num_reads=10, sweeps_per_read=15, trotter=2))
        series = evaluate_methods(
            pairs, [Method("MH-SQA", sched, sampler)], PenaltyParams(1.0, 1.0), 3
        )
        s = series["MH-SQA"]
        assert s.mean_best_mse.shape == (4,)
        assert len(s.iterations_to_zero) == 2

    def test_schedule_length_mismatch_rejected(self):
        pairs = small_instances(1)
        sampler = ExactSampler(SamplerConfig(beta=1.0))
        sched = StepSchedule.constant(1e-2, 5)
        with pytest.raises(RuntimeError):
            evaluate_methods(pairs, [Method("m", sched, sampler)], PenaltyParams(1.0, 1.0), 3)

    def test_csv_export(self, tmp_path):
        pairs = small_instances(2, seed=3)
        sampler = ExactSampler(SamplerConfig(beta=1.0))
        series = evaluate_methods(
            pairs, [Method("fixed", 1e-2, sampler)], PenaltyParams(1.0, 1.0), 2
        )
        path = tmp_path / "bench.csv"
        write_metric_csv(series, path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert rows[0]["method"] == "fixed"
        assert float(rows[0]["mean_best_mse"]) == pytest.approx(
            float(series["fixed"].mean_best_mse[0])
        )


class TestInstanceFiles:
    def test_round_trip(self, tmp_path):
        spec = DatasetSpec(4, 4, 0.5, 1, seed=11)
        inst, problem = generate_instance(spec, 0)
        path = tmp_path / "inst.json"
        save_instance(inst, problem, path)
        inst2, problem2 = load_instance(path)
        assert np.array_equal(inst.x_star, inst2.x_star)
        assert np.array_equal(inst.a_matrix, inst2.a_matrix)
        assert np.array_equal(inst.y, inst2.y)
        assert instance_to_dict(inst2, problem2) == instance_to_dict(inst, problem)

    def test_malformed_rejected(self):
        with pytest.raises(ValueError):
            instance_from_dict({"n_vars": 4, "objective": {"terms": []}})


class TestPbm:
    def test_round_trip(self, tmp_path, rng):
        bits = rng.integers(0, 2, 12)
        path = tmp_path / "img.pbm"
        write_pbm(bits, 4, 3, path)
        back, w, h = read_pbm(path)
        assert (w, h) == (4, 3)
        assert np.array_equal(back, bits)

    def test_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "img.pbm"
        path.write_text("P1\n# a comment\n 2 2 \n1 0\n0 1\n")
        bits, w, h = read_pbm(path)
        assert np.array_equal(bits, [1, 0, 0, 1])

    def test_rejects_other_formats(self, tmp_path):
        path = tmp_path / "img.pbm"
        path.write_text("P4\n2 2\n")
        with pytest.raises(ValueError):
            read_pbm(path)
