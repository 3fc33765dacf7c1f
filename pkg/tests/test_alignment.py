"""Similarity matrix and pooling: worked matrices, oracle equality, properties."""

import numpy as np
import pytest

from stepalign.alignment import (
    SimilarityMatrix,
    build_similarity_matrix,
    constrained_max_pool,
    cosine,
    greedy_trace_oracle,
    optimal_assignment,
    row_max_pool,
)
from stepalign.autodiff import Graph, ShapeError, Tensor, grad_check
from stepalign.encoders import MlpParams, init_mlp

MATRIX_ONE = np.array(
    [
        [0.9, 0.2, 0.1, 0.0],
        [0.8, 0.7, 0.3, 0.1],
        [0.5, 0.6, 0.4, 0.2],
        [0.3, 0.2, 0.1, 0.05],
    ]
)

MATRIX_CONFLICT = np.array(
    [
        [0.9, 0.8, 0.1, 0.1],
        [0.85, 0.1, 0.1, 0.1],
        [0.1, 0.1, 0.7, 0.1],
        [0.1, 0.1, 0.1, 0.6],
    ]
)


def sim(values):
    return SimilarityMatrix(Tensor(np.asarray(values, dtype=np.float64)))


class TestCosine:
    def test_identical_direction(self):
        assert cosine(Graph(), Tensor([1.0, 0.0]), Tensor([1.0, 0.0])).item() == 1.0

    def test_orthogonal(self):
        assert cosine(Graph(), Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_opposite_with_scale_invariance(self):
        out = cosine(Graph(), Tensor([1.0, 1.0]), Tensor([-2.0, -2.0]))
        assert out.item() == pytest.approx(-1.0, abs=1e-15)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine(Graph(), Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="cosine"):
            cosine(Graph(), Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_gradient_matches_fd_both_inputs(self):
        rng = np.random.default_rng(0)
        u = Tensor(rng.normal(size=5), requires_grad=True)
        v = Tensor(rng.normal(size=5), requires_grad=True)
        err = grad_check(lambda _p: cosine(Graph(), u, v), [u, v], 1e-5)
        assert err < 1e-6

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            u = Tensor(rng.normal(size=4))
            v = Tensor(rng.normal(size=4))
            assert -1.0 - 1e-12 <= cosine(Graph(), u, v).item() <= 1.0 + 1e-12


class TestBuildSimilarityMatrix:
    def _identity_mlp(self, dim):
        return MlpParams(
            weights=[Tensor(np.eye(dim), requires_grad=True)],
            biases=[Tensor(np.zeros(dim), requires_grad=True)],
        )

    def test_diagonal_ones_with_identity_projection(self):
        rng = np.random.default_rng(0)
        reps = [Tensor(rng.normal(size=6)) for _ in range(5)]
        s = build_similarity_matrix(Graph(), reps[:4], reps, None, self._identity_mlp(6))
        np.testing.assert_allclose(np.diag(s.values)[:4], 1.0, atol=1e-12)

    def test_entries_in_cosine_range(self):
        rng = np.random.default_rng(1)
        cands = [Tensor(rng.normal(size=4)) for _ in range(4)]
        steps = [Tensor(rng.normal(size=3)) for _ in range(6)]
        q = Tensor(rng.normal(size=2))
        mlp = init_mlp(rng, (5, 4))
        s = build_similarity_matrix(Graph(), cands, steps, q, mlp)
        assert s.values.shape == (4, 6)
        assert (np.abs(s.values) <= 1.0 + 1e-12).all()

    def test_candidate_scale_invariance(self):
        rng = np.random.default_rng(2)
        cands = [Tensor(rng.normal(size=4)) for _ in range(4)]
        steps = [Tensor(rng.normal(size=3)) for _ in range(5)]
        q = Tensor(rng.normal(size=2))
        mlp = init_mlp(rng, (5, 4))
        base = build_similarity_matrix(Graph(), cands, steps, q, mlp).values
        scaled_cands = [Tensor(5.0 * cands[0].data)] + cands[1:]
        scaled = build_similarity_matrix(Graph(), scaled_cands, steps, q, mlp).values
        np.testing.assert_allclose(scaled[0], base[0], rtol=1e-12)
        np.testing.assert_array_equal(scaled[1:], base[1:])

    def test_wrong_candidate_count_rejected(self):
        rng = np.random.default_rng(3)
        reps = [Tensor(rng.normal(size=3)) for _ in range(3)]
        with pytest.raises(ShapeError, match="4 candidates"):
            build_similarity_matrix(Graph(), reps, reps, None, self._identity_mlp(3))


class TestConstrainedMaxPool:
    def test_worked_matrix_one(self):
        align = constrained_max_pool(sim(MATRIX_ONE))
        assert align.assignments == (0, 1, 2, 3)
        assert align.selected == (0.9, 0.7, 0.4, 0.05)
        assert align.pick_order == (0, 1, 2, 3)

    def test_conflict_forces_candidate_off_row_max(self):
        align = constrained_max_pool(sim(MATRIX_CONFLICT))
        assert align.assignments == (0, 1, 2, 3)
        assert align.selected == (0.9, 0.1, 0.7, 0.6)

    def test_identity_pattern(self):
        align = constrained_max_pool(sim(np.eye(4)))
        assert align.assignments == (0, 1, 2, 3)
        assert align.selected == (1.0, 1.0, 1.0, 1.0)

    def test_assignments_pairwise_distinct(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(4, 10))
            align = constrained_max_pool(sim(rng.uniform(-1, 1, size=(4, n))))
            assert len(set(align.assignments)) == 4

    def test_selected_scores_non_increasing_in_pick_order(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 10))
            align = constrained_max_pool(sim(rng.uniform(-1, 1, size=(4, n))))
            picked = [align.selected[c] for c in align.pick_order]
            assert all(a >= b for a, b in zip(picked, picked[1:]))

    def test_m_reads_the_matrix_exactly(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(-1, 1, size=(4, 7))
        align = constrained_max_pool(sim(values))
        for c in range(4):
            assert align.selected[c] == values[c, align.assignments[c]]

    def test_too_few_steps_rejected(self):
        with pytest.raises(ValueError, match="N=3"):
            constrained_max_pool(sim(np.zeros((4, 3))))

    def test_non_finite_rejected(self):
        bad = np.zeros((4, 4))
        bad[1, 2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            constrained_max_pool(sim(bad))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            values = rng.uniform(-1, 1, size=(4, 8))
            base = constrained_max_pool(sim(values))
            perm = rng.permutation(4)
            permuted = constrained_max_pool(sim(values[perm]))
            for new_row, old_row in enumerate(perm):
                assert permuted.assignments[new_row] == base.assignments[old_row]
            assert sorted(permuted.selected) == sorted(base.selected)


class TestRowMaxPool:
    def test_conflict_matrix_allows_duplicates(self):
        align = row_max_pool(sim(MATRIX_CONFLICT))
        assert align.assignments == (0, 0, 2, 3)
        assert align.selected == (0.9, 0.85, 0.7, 0.6)

    def test_identity_pattern_matches_constrained(self):
        values = np.eye(4)
        assert row_max_pool(sim(values)).assignments == constrained_max_pool(sim(values)).assignments

    def test_all_equal_ties_pick_lowest_column(self):
        align = row_max_pool(sim(np.full((4, 5), 0.5)))
        assert align.assignments == (0, 0, 0, 0)

    def test_single_column_allowed(self):
        align = row_max_pool(sim(np.array([[0.1], [0.4], [0.3], [0.2]])))
        assert align.assignments == (0, 0, 0, 0)
        assert align.pick_order == (1, 2, 3, 0)


class TestOracleEquality:
    def _assert_same(self, values):
        s = sim(values)
        fast = constrained_max_pool(s)
        slow = greedy_trace_oracle(s)
        assert fast.assignments == slow.assignments
        assert fast.selected == slow.selected
        assert fast.pick_order == slow.pick_order

    def test_worked_matrices(self):
        self._assert_same(MATRIX_ONE)
        self._assert_same(MATRIX_CONFLICT)

    def test_all_ties(self):
        self._assert_same(np.full((4, 6), 0.5))

    def test_random_matrices_with_injected_ties(self):
        rng = np.random.default_rng(42)
        for trial in range(300):
            n = int(rng.integers(4, 13))
            values = rng.uniform(-1, 1, size=(4, n))
            if trial % 3 == 0:
                # snap to a coarse grid so exact ties actually occur
                values = np.round(values * 4) / 4
            self._assert_same(values)


class TestOptimalAssignment:
    def test_greedy_suboptimality_counterexample(self):
        s = sim(MATRIX_CONFLICT)
        assignments, total = optimal_assignment(s)
        greedy_total = sum(constrained_max_pool(s).selected)
        assert total == pytest.approx(2.95, abs=1e-12)
        assert greedy_total == pytest.approx(2.3, abs=1e-12)
        assert assignments[0] == 1 and assignments[1] == 0
        assert total > greedy_total

    def test_identity_pattern_matches_greedy(self):
        s = sim(np.eye(4))
        _, total = optimal_assignment(s)
        assert total == 4.0 == sum(constrained_max_pool(s).selected)

    def test_never_below_greedy(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(4, 9))
            s = sim(rng.uniform(-1, 1, size=(4, n)))
            _, total = optimal_assignment(s)
            assert total >= sum(constrained_max_pool(s).selected) - 1e-12

    def test_combinatorial_guard(self):
        with pytest.raises(ValueError, match="exceeds"):
            optimal_assignment(sim(np.zeros((4, 17))))


class TestPoolingGradientSemantics:
    def test_gradient_flows_only_through_selected_entries(self):
        g = Graph()
        scores = Tensor(MATRIX_ONE.copy(), requires_grad=True)
        s = SimilarityMatrix(scores)
        align = constrained_max_pool(s)
        total = g.pick(s.scores, 0, align.assignments[0])
        for c in range(1, 4):
            total = g.add(total, g.pick(s.scores, c, align.assignments[c]))
        g.backward(total)
        expected = np.zeros((4, 4))
        for c in range(4):
            expected[c, align.assignments[c]] = 1.0
        np.testing.assert_array_equal(scores.grad, expected)
