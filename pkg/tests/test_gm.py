import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bgmd.core import ShapeError
from bgmd.gm import (GmConfig, brute_force_gm, coord_median, default_smoothing, fermat_residual,
                     gm_objective, median_pairwise_distance, weiszfeld)

coords = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def point_sets(max_b=7, max_d=5):
    return st.tuples(st.integers(1, max_b), st.integers(1, max_d)).flatmap(
        lambda s: arrays(np.float64, s, elements=coords))


class TestObjective:
    def test_examples(self):
        assert gm_objective([0.0, 0.0], [[3.0, 4.0]]) == 5.0
        assert gm_objective([1.5, -2.0], [[1.5, -2.0]]) == 0.0
        assert gm_objective([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]) == 2.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            gm_objective([0.0], [[1.0, 2.0]])

    @given(point_sets(), st.data())
    def test_matches_oracle(self, pts, data):
        y = data.draw(arrays(np.float64, pts.shape[1], elements=coords))
        assert gm_objective(y, pts) == pytest.approx(oracles.gm_objective(y, pts), rel=1e-12, abs=1e-12)


class TestCoordMedian:
    def test_examples(self):
        np.testing.assert_array_equal(coord_median([[1.0, 5.0], [2.0, 4.0], [3.0, 3.0]]), [2.0, 4.0])
        np.testing.assert_array_equal(coord_median([[7.0, -1.0]]), [7.0, -1.0])
        np.testing.assert_array_equal(coord_median([[0.0], [10.0], [1.0], [2.0]]), [1.0])

    @given(point_sets(max_b=9, max_d=40))
    def test_oracle_and_backends(self, pts):
        expect = oracles.lower_median_columns(pts)
        np.testing.assert_array_equal(coord_median(pts, "python"), expect)
        from bgmd._backend import compiled_available
        if compiled_available():
            np.testing.assert_array_equal(coord_median(pts, "compiled"), expect)


class TestWeiszfeld:
    def test_single_point(self):
        res = weiszfeld([[3.0, -4.0, 5.0]])
        np.testing.assert_array_equal(res.point, [3.0, -4.0, 5.0])
        assert res.objective == 0.0 and res.converged

    def test_two_identical_points(self):
        res = weiszfeld([[1.0, 2.0], [1.0, 2.0]])
        np.testing.assert_array_equal(res.point, [1.0, 2.0])
        assert res.objective == 0.0

    def test_collinear(self):
        pts = np.array([[1.0, 0.0], [2.0, 0.0], [100.0, 0.0]])
        res = weiszfeld(pts)
        assert res.point == pytest.approx([2.0, 0.0], abs=1e-9)
        grid = brute_force_gm(pts, 0.5)
        assert grid.objective == pytest.approx(99.0)
        assert res.objective <= grid.objective * (1 + 1e-8)

    def test_triangle_against_grid(self, backend):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        res = weiszfeld(pts, backend=backend)
        grid_obj, _ = oracles.grid_gm(pts, 1e-3, [(0.0, 1.0), (0.0, 1.0)])
        assert res.objective <= (1 + 1e-6) * grid_obj
        # the 120-degree point lies on the diagonal at t with 6t^2 - 6t + 1 = 0
        tight = weiszfeld(pts, GmConfig(rel_tol=1e-15, max_iters=100_000), backend=backend)
        t = (3 - np.sqrt(3)) / 6
        assert tight.point == pytest.approx([t, t], abs=1e-6)

    def test_anchor_at_input_point(self, backend):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        res = weiszfeld(pts, backend=backend)
        assert res.objective == pytest.approx(4.0, rel=1e-12)
        assert np.abs(res.point).max() < 1e-9

    def test_objective_is_recomputed_value(self):
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((9, 6))
        res = weiszfeld(pts)
        assert res.objective == pytest.approx(oracles.gm_objective(res.point, pts), rel=1e-9)

    def test_max_iters_respected(self):
        rng = np.random.default_rng(4)
        res = weiszfeld(rng.standard_normal((20, 5)), GmConfig(rel_tol=1e-15, max_iters=3))
        assert res.iterations <= 3

    @given(point_sets())
    def test_monotone_descent(self, pts):
        for be in ("python", "compiled"):
            from bgmd._backend import compiled_available
            if be == "compiled" and not compiled_available():
                continue
            trace = []
            weiszfeld(pts, backend=be, trace=trace)
            assert all(b <= a for a, b in zip(trace, trace[1:]))

    @given(point_sets(), st.lists(coords, min_size=5, max_size=5))
    def test_translation_equivariance(self, pts, shift):
        c = np.array(shift[: pts.shape[1]])
        a = weiszfeld(pts).point
        b = weiszfeld(pts + c).point
        scale = max(1.0, float(np.abs(pts).max()))
        assert np.abs(b - (a + c)).max() <= 1e-6 * scale

    @given(point_sets(max_b=9, max_d=12))
    def test_backends_agree(self, pts):
        from bgmd._backend import compiled_available
        if not compiled_available():
            pytest.skip("compiled kernels not built")
        a = weiszfeld(pts, backend="python")
        b = weiszfeld(pts, backend="compiled")
        assert b.objective == pytest.approx(a.objective, rel=1e-9, abs=1e-12)

    @given(st.integers(3, 12), st.integers(1, 6), st.data())
    def test_breakdown_bound(self, n_good, d, data):
        n_bad = data.draw(st.integers(0, n_good - 1))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        good = rng.standard_normal((n_good, d)) + rng.uniform(-5, 5, d)
        bad = 1e6 * rng.standard_normal((n_bad, d))
        pts = np.vstack([good, bad])
        mean = good.mean(axis=0)
        z = weiszfeld(pts).point - mean
        spread = float(np.sum((good - mean) ** 2))
        bound = 8 * n_good / (n_good - n_bad) ** 2 * spread
        assert float(z @ z) <= bound + 1e-6


class TestBruteForce:
    def test_single_point(self):
        res = brute_force_gm([[0.25, -0.5]], 0.1)
        np.testing.assert_allclose(res.point, [0.25, -0.5])
        assert res.objective == 0.0

    def test_two_points(self):
        res = brute_force_gm([[0.0, 0.0], [3.0, 4.0]], 0.05)
        assert res.objective == pytest.approx(5.0, abs=1e-9)

    def test_equilateral_fermat_point(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        res = brute_force_gm(pts, 1e-3)
        assert np.linalg.norm(fermat_residual(res.point, pts)) < 1e-2
        assert res.point == pytest.approx([0.5, np.sqrt(3) / 6], abs=2e-3)

    def test_matches_independent_grid(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, (5, 2))
        bounds = list(zip(pts.min(axis=0), pts.max(axis=0)))
        ours = brute_force_gm(pts, 5e-3, bounds)
        theirs, _ = oracles.grid_gm(pts, 5e-3, bounds)
        assert ours.objective == pytest.approx(theirs, rel=1e-9)

    def test_three_dims(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        res = brute_force_gm(pts, 0.02)
        assert weiszfeld(pts).objective <= res.objective * (1 + 1e-9)

    def test_rejects_high_dim(self):
        with pytest.raises(ValueError):
            brute_force_gm(np.zeros((2, 4)), 0.1)
        with pytest.raises(ValueError):
            brute_force_gm(np.zeros((2, 2)), 0.0)


class TestSmoothing:
    def test_median_pairwise(self):
        pts = np.array([[0.0], [1.0], [3.0]])
        # pairwise distances 1, 2, 3
        assert median_pairwise_distance(pts) == pytest.approx(2.0)

    def test_fallback_when_half_coincide(self):
        pts = np.array([[0.0, 0.0]] * 4 + [[2.0, 0.0]])
        assert default_smoothing(pts) == pytest.approx(2e-10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GmConfig(rel_tol=0.0)
        with pytest.raises(ValueError):
            GmConfig(max_iters=0)
        with pytest.raises(ValueError):
            GmConfig(smoothing=-1.0)
