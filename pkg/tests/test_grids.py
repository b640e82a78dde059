"""Product grids, norms, pairings, conditional expectations."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haarfactor.dyadic import DyadicInterval, UNIT
from haarfactor.errors import ResourceLimitError
from haarfactor.grids import (
    Exponent,
    GridFunction,
    ProductGrid,
    conditional_expectation,
    lp_norm,
    pairing,
)


def haar_on(grid, coord, interval):
    res = grid.resolution_of(coord)
    return GridFunction.from_summands(grid, [(coord, interval.haar_values(res))])


class TestExponent:
    def test_conjugates(self):
        e = Exponent(4.0)
        assert e.q == pytest.approx(4 / 3, abs=1e-15)
        assert e.p_star == 4.0
        assert Exponent(1.5).p_star == 3.0
        assert Exponent(2.0).p_star == 2.0

    def test_identity_holds(self):
        for p in (1.1, 1.5, 2.0, 3.7, 10.0):
            e = Exponent(p)
            assert abs(1 / e.p + 1 / e.q - 1) <= 1e-14

    def test_endpoints_rejected(self):
        with pytest.raises(ValueError):
            Exponent(1.0)
        with pytest.raises(ValueError):
            Exponent(0.5)
        with pytest.raises(ValueError):
            Exponent(float("inf"))
        with pytest.raises(ValueError):
            Exponent(float("nan"))


class TestProductGrid:
    def test_measure_is_exact(self):
        g = ProductGrid((1, 2), (1, 2))
        assert g.ncells == 8
        assert g.cell_measure == Fraction(1, 8)
        assert g.shape == (2, 4)

    def test_cap(self):
        with pytest.raises(ResourceLimitError):
            ProductGrid((1,), (23,))
        ProductGrid((1,), (23,), cell_cap=1 << 23)  # explicit raise is fine

    def test_validation(self):
        with pytest.raises(ValueError):
            ProductGrid((2, 1), (1, 1))  # unsorted
        with pytest.raises(ValueError):
            ProductGrid((1, 1), (1, 1))  # duplicate
        with pytest.raises(ValueError):
            ProductGrid((1,), (1, 2))  # misaligned


class TestGridFunction:
    def test_shape_checks(self):
        g = ProductGrid((1, 2), (1, 1))
        with pytest.raises(ValueError):
            GridFunction.from_dense(g, np.zeros(4))
        with pytest.raises(ValueError):
            GridFunction.from_summands(g, [(1, np.zeros(4))])
        with pytest.raises(ValueError):
            GridFunction.from_summands(g, [(5, np.zeros(2))])

    def test_factored_dense_expansion(self):
        g = ProductGrid((1, 2), (1, 1))
        f = GridFunction.from_summands(
            g, [(1, np.array([1, -1])), (2, np.array([1, -1]))]
        )
        np.testing.assert_array_equal(f.dense, [[2, 0], [0, -2]])

    def test_add_and_scale(self):
        g = ProductGrid((1,), (2,))
        f = GridFunction.from_dense(g, np.arange(4.0))
        h = (f + f.scaled(-1.0)).dense
        np.testing.assert_array_equal(h, np.zeros(4))


class TestLpNorm:
    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_constant_one(self, p):
        g = ProductGrid((1, 3), (1, 2))
        assert lp_norm(GridFunction.constant(g, 1.0), p) == 1.0

    @pytest.mark.parametrize("p", [1.5, 2.0, 4.0])
    def test_root_haar_norm_one(self, p):
        g = ProductGrid((1,), (1,))
        assert lp_norm(haar_on(g, 1, UNIT), p) == 1.0

    def test_half_haar_l2(self):
        g = ProductGrid((1,), (2,))
        f = haar_on(g, 1, DyadicInterval(1, 1))
        assert lp_norm(f, 2) == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_nonfinite_rejected(self):
        g = ProductGrid((1,), (1,))
        f = GridFunction.from_dense(g, np.array([1.0, float("nan")]))
        with pytest.raises(ValueError):
            lp_norm(f, 2)

    @given(st.integers(0, 2**12))
    @settings(max_examples=25, deadline=None)
    def test_triangle_and_homogeneity(self, seed):
        rng = np.random.default_rng(seed)
        g = ProductGrid((1, 2), (1, 2))
        f = GridFunction.from_dense(g, rng.standard_normal(g.shape))
        h = GridFunction.from_dense(g, rng.standard_normal(g.shape))
        for p in (1.5, 2.0, 4.0):
            assert lp_norm(f + h, p) <= lp_norm(f, p) + lp_norm(h, p) + 1e-10
            assert lp_norm(f.scaled(-2.5), p) == pytest.approx(
                2.5 * lp_norm(f, p), rel=1e-12
            )


class TestPairing:
    def test_haar_orthogonality_exact(self):
        g = ProductGrid((1,), (3,))
        h_root = haar_on(g, 1, UNIT)
        h_left = haar_on(g, 1, DyadicInterval(1, 1))
        h_deep = haar_on(g, 1, DyadicInterval(2, 4))
        assert pairing(h_root, h_left) == Fraction(0)
        assert pairing(h_root, h_deep) == Fraction(0)
        assert pairing(h_left, h_deep) == Fraction(0)
        assert pairing(h_root, h_root) == Fraction(1)
        assert pairing(h_left, h_left) == Fraction(1, 2)

    def test_cross_coordinate_is_zero(self):
        g = ProductGrid((1, 2), (1, 2))
        f = haar_on(g, 1, UNIT)
        h = haar_on(g, 2, DyadicInterval(1, 2))
        assert pairing(f, h) == Fraction(0)

    def test_grid_mismatch_rejected(self):
        f = haar_on(ProductGrid((1,), (1,)), 1, UNIT)
        h = haar_on(ProductGrid((1,), (2,)), 1, UNIT)
        with pytest.raises(ValueError):
            pairing(f, h)

    @given(st.integers(0, 2**12))
    @settings(max_examples=25, deadline=None)
    def test_dense_factored_agree(self, seed):
        rng = np.random.default_rng(seed)
        g = ProductGrid((1, 2, 3), (1, 2, 2))
        f = GridFunction.from_summands(
            g, [(c, rng.standard_normal(2 ** g.resolution_of(c))) for c in (1, 2, 3)]
        )
        h = GridFunction.from_summands(
            g, [(c, rng.standard_normal(2 ** g.resolution_of(c))) for c in (3, 1)]
        )
        direct = pairing(f, h)
        via_dense = pairing(
            GridFunction.from_dense(g, f.dense), GridFunction.from_dense(g, h.dense)
        )
        assert direct == pytest.approx(via_dense, rel=1e-12, abs=1e-12)
        assert lp_norm(f, 4) == pytest.approx(
            lp_norm(GridFunction.from_dense(g, f.dense), 4), rel=1e-12
        )

    @given(st.integers(0, 2**12))
    @settings(max_examples=25, deadline=None)
    def test_hoelder(self, seed):
        rng = np.random.default_rng(seed)
        g = ProductGrid((1, 2), (2, 2))
        f = GridFunction.from_dense(g, rng.standard_normal(g.shape))
        h = GridFunction.from_dense(g, rng.standard_normal(g.shape))
        for p in (1.5, 2.0, 4.0):
            e = Exponent(p)
            assert abs(pairing(f, h)) <= lp_norm(f, e.p) * lp_norm(h, e.q) + 1e-10


class TestConditionalExpectation:
    def _oracle(self, grid, f, family):
        """Independent grouping oracle: dict of value patterns -> mean."""
        flat = f.dense.reshape(-1)
        keys = [
            tuple(int(g.dense.reshape(-1)[c]) for g in family)
            for c in range(grid.ncells)
        ]
        sums, counts = {}, {}
        for c, k in enumerate(keys):
            sums[k] = sums.get(k, 0.0) + flat[c]
            counts[k] = counts.get(k, 0) + 1
        return np.array([sums[k] / counts[k] for k in keys])

    def test_quarter_haar_conditioned_on_coarser_is_zero(self):
        g = ProductGrid((3,), (3,))
        f = haar_on(g, 3, DyadicInterval(2, 1))
        family = [
            haar_on(g, 3, UNIT),
            haar_on(g, 3, DyadicInterval(1, 1)),
            haar_on(g, 3, DyadicInterval(1, 2)),
        ]
        oracle = self._oracle(g, f, family)
        np.testing.assert_array_equal(oracle, np.zeros(8))
        result = conditional_expectation(f, family)
        np.testing.assert_array_equal(result.dense.reshape(-1), oracle)

    def test_empty_family_gives_mean(self):
        g = ProductGrid((1,), (2,))
        f = GridFunction.from_dense(g, np.array([1.0, 2.0, 3.0, 6.0]))
        out = conditional_expectation(f, [])
        np.testing.assert_array_equal(out.dense, np.full(4, 3.0))

    def test_idempotence_is_bitwise(self):
        rng = np.random.default_rng(7)
        g = ProductGrid((2, 3), (2, 3))
        f = GridFunction.from_dense(g, rng.standard_normal(g.shape))
        family = [haar_on(g, 2, UNIT), haar_on(g, 3, DyadicInterval(1, 2))]
        once = conditional_expectation(f, family)
        twice = conditional_expectation(once, family)
        np.testing.assert_array_equal(once.dense, twice.dense)

    @given(st.integers(0, 2**12))
    @settings(max_examples=20, deadline=None)
    def test_contraction_in_lp(self, seed):
        rng = np.random.default_rng(seed)
        g = ProductGrid((2,), (2,))
        f = GridFunction.from_dense(g, rng.standard_normal(g.shape))
        family = [haar_on(g, 2, UNIT), haar_on(g, 2, DyadicInterval(1, 1))]
        out = conditional_expectation(f, family)
        for p in (1.5, 2.0, 4.0):
            assert lp_norm(out, p) <= lp_norm(f, p) + 1e-10

    def test_family_values_validated(self):
        g = ProductGrid((1,), (1,))
        f = GridFunction.from_dense(g, np.array([1.0, 2.0]))
        bad = GridFunction.from_dense(g, np.array([2, 0]))
        with pytest.raises(ValueError):
            conditional_expectation(f, [bad])
