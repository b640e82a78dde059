"""Operator matrices, norm bounds, inversion, diagonal-average witnesses."""

import numpy as np
import pytest

from haarfactor.dyadic import DyadicInterval, OmegaIndex, UNIT, enumerate_truncated
from haarfactor.operators import (
    DiagonalAverageWitness,
    DiagonalOperator,
    MatrixMap,
    OperatorMatrix,
    diagonal_average,
    max_column_sum,
    neumann_invert,
    opnorm_lower,
    opnorm_upper_unconditional,
)

TWO = tuple(enumerate_truncated({1: 0, 2: 0}))  # two root Haars, equal cell weights
ELEVEN = tuple(enumerate_truncated({1: 0, 2: 1, 3: 2}))


class TestOperatorMatrix:
    def test_column_convention(self):
        # column 2 holds the image of the second basis vector
        T = OperatorMatrix(2, TWO, [[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_array_equal(T.apply([0.0, 1.0]), [1.0, 0.0])
        np.testing.assert_array_equal(T.apply([1.0, 0.0]), [0.0, 0.0])

    def test_basis_order_enforced(self):
        with pytest.raises(ValueError):
            OperatorMatrix(2, (TWO[1], TWO[0]), np.eye(2))
        with pytest.raises(ValueError):
            OperatorMatrix(2, (TWO[0], TWO[0]), np.eye(2))

    def test_shape_and_finiteness(self):
        with pytest.raises(ValueError):
            OperatorMatrix(2, TWO, np.zeros((2, 3)))
        with pytest.raises(ValueError):
            OperatorMatrix(2, TWO, [[np.inf, 0], [0, 0]])

    def test_compose_mismatch(self):
        A = OperatorMatrix.identity(2, TWO)
        B = OperatorMatrix.identity(2, ELEVEN)
        with pytest.raises(ValueError):
            A @ B

    def test_compose_associative(self):
        rng = np.random.default_rng(3)
        A, B, C = (
            OperatorMatrix(4, ELEVEN, rng.standard_normal((11, 11))) for _ in range(3)
        )
        left = ((A @ B) @ C).entries
        right = (A @ (B @ C)).entries
        assert np.allclose(left, right, rtol=1e-10)

    def test_diagonal_helpers(self):
        T = OperatorMatrix.from_diagonal(2, TWO, [2.0, -3.0])
        assert T.is_diagonal()
        np.testing.assert_array_equal(T.diagonal(), [2.0, -3.0])
        assert T.diagonal_map()[TWO[1]] == -3.0


class TestDiagonalOperator:
    def test_apply_and_convert(self):
        D = DiagonalOperator(4, TWO, [0.5, 2.0])
        np.testing.assert_array_equal(D.apply([1.0, 1.0]), [0.5, 2.0])
        assert D.to_matrix().is_diagonal()

    def test_validation(self):
        with pytest.raises(ValueError):
            DiagonalOperator(4, TWO, [1.0])
        with pytest.raises(ValueError):
            DiagonalOperator(4, TWO, [1.0, np.nan])


class TestOpnorms:
    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_identity_is_exactly_one(self, p):
        assert opnorm_lower(OperatorMatrix.identity(p, ELEVEN)) == 1.0

    def test_zero_operator(self):
        assert opnorm_lower(OperatorMatrix.zero(2, TWO)) == 0.0

    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_diagonal_two_minus_three(self, p):
        T = OperatorMatrix.from_diagonal(p, TWO, [2.0, -3.0])
        assert opnorm_lower(T) == 3.0

    def test_deep_diagonal_shortcut(self):
        big = tuple(enumerate_truncated({8: 7}))
        D = DiagonalOperator(4, big, np.linspace(-2, 2, len(big)))
        assert opnorm_lower(D) == 2.0

    def test_ascent_close_to_spectral_norm_at_p2(self):
        # p = 2 realization is a weighted l2 space: exact norm via SVD oracle
        rng = np.random.default_rng(11)
        T = OperatorMatrix(2, ELEVEN, 0.3 * rng.standard_normal((11, 11)))
        w = np.sqrt(np.array([float(t.interval.measure) for t in ELEVEN]))
        oracle = np.linalg.norm((T.entries * w[:, None] / w[None, :]).T @ np.eye(11), 2)
        lower = opnorm_lower(T, restarts=6, iters=60, seed=5)
        assert lower <= oracle + 1e-9
        assert lower >= 0.9 * oracle

    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_lower_below_unconditional_upper(self, p):
        rng = np.random.default_rng(2)
        diag = rng.uniform(-2, 2, size=11)
        T = OperatorMatrix.from_diagonal(p, ELEVEN, diag)
        assert opnorm_lower(T) <= opnorm_upper_unconditional(T) + 1e-9

    def test_unconditional_upper_examples(self):
        lam = OperatorMatrix.from_diagonal(2, TWO, [0.7, 0.7])
        assert opnorm_upper_unconditional(lam) == pytest.approx(0.7)
        mixed = OperatorMatrix.from_diagonal(4, TWO, [1.0, -2.0])
        assert opnorm_upper_unconditional(mixed) == pytest.approx(18.0)

    def test_unconditional_upper_requires_diagonal(self):
        T = OperatorMatrix(2, TWO, [[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            opnorm_upper_unconditional(T)


class TestNeumannInvert:
    def test_recorded_bound(self):
        A = OperatorMatrix.from_diagonal(2, TWO, [1.1, 0.9])
        inv = neumann_invert(A, 0.1)
        assert inv.norm_bound == pytest.approx(1.0 / 0.9)
        assert inv.residual <= 1e-8
        product = (A @ inv.operator).entries
        assert max_column_sum(product - np.eye(2)) <= 1e-8

    def test_contraction_bound_required(self):
        A = OperatorMatrix.identity(2, TWO)
        with pytest.raises(ValueError):
            neumann_invert(A, 1.0)
        with pytest.raises(ValueError):
            neumann_invert(A, -0.2)

    def test_random_inverse_residual(self):
        rng = np.random.default_rng(9)
        E = OperatorMatrix(4, ELEVEN, np.eye(11) + 0.05 * rng.standard_normal((11, 11)))
        bound = max_column_sum(E.entries - np.eye(11))
        inv = neumann_invert(E, min(bound, 0.99))
        assert max_column_sum(E.entries @ inv.operator.entries - np.eye(11)) <= 1e-8


class TestAverages:
    def test_mean(self):
        assert diagonal_average([1.0, 2.0, 6.0]) == 3.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            diagonal_average([])

    def test_witness_verification(self):
        T = OperatorMatrix.from_diagonal(2, ELEVEN, np.arange(11.0))
        w = DiagonalAverageWitness(2.0, (ELEVEN[1], ELEVEN[3]))
        assert w.verify(T)  # (1 + 3) / 2
        assert not DiagonalAverageWitness(2.1, (ELEVEN[1], ELEVEN[3])).verify(T)

    def test_singleton_witness_exact(self):
        T = OperatorMatrix.from_diagonal(2, ELEVEN, np.arange(11.0) * 0.1)
        w = DiagonalAverageWitness(float(T.entries[4, 4]), (ELEVEN[4],))
        assert w.verify(T, tol=0.0)

    def test_unknown_position(self):
        T = OperatorMatrix.from_diagonal(2, TWO, [1.0, 2.0])
        w = DiagonalAverageWitness(1.0, (ELEVEN[5],))
        with pytest.raises(ValueError):
            w.verify(T)

    def test_empty_positions_rejected(self):
        with pytest.raises(ValueError):
            DiagonalAverageWitness(0.0, ())


class TestMatrixMap:
    def test_rectangular_compose(self):
        J = MatrixMap(2, ELEVEN, TWO, np.ones((11, 2)))
        P = MatrixMap(2, TWO, ELEVEN, np.ones((2, 11)) / 11)
        both = P @ J
        assert both.entries.shape == (2, 2)
        T = OperatorMatrix.identity(2, ELEVEN)
        assert (P @ T).entries.shape == (2, 11)
        assert (T @ J).entries.shape == (11, 2)

    def test_inner_basis_mismatch(self):
        J = MatrixMap(2, ELEVEN, TWO, np.ones((11, 2)))
        with pytest.raises(ValueError):
            J @ J
