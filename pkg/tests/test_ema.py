import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagesynth.ema import (
    EmaConfig,
    PixelErrorField,
    excess_error_bound,
    max_schedule_increment,
    optimal_weight,
    pixel_error,
    progressive_mask,
    zeta,
)
from stagesynth.grid import GridError, RngStream

W_GRID = np.linspace(0.0, 1.0, 1001)


def grid_search(dp, db, grid=W_GRID):
    e = (grid * dp + (1 - grid) * db) ** 2
    k = int(np.argmin(e))
    return grid[k], e[k]


class TestZeta:
    @pytest.mark.parametrize("t,expected", [(1000, 1.0), (600, 0.5), (200, 0.0), (100, 0.0),
                                            (0, 0.0)])
    def test_reference_defaults(self, ema1000, t, expected):
        assert zeta(ema1000, t) == expected

    def test_range(self, ema1000):
        with pytest.raises(GridError):
            zeta(ema1000, 1001)
        with pytest.raises(GridError):
            zeta(ema1000, -1)

    def test_config_requires_ts_below_T(self):
        with pytest.raises(GridError):
            EmaConfig(100, 100)
        with pytest.raises(GridError):
            EmaConfig(100, 0)

    @pytest.mark.parametrize("T,ts", [(1000, 200), (100, 20), (37, 5)])
    def test_per_step_increment(self, T, ts):
        cfg = EmaConfig(T, ts)
        for t in range(ts, T):
            assert zeta(cfg, t + 1) - zeta(cfg, t) == pytest.approx(1 / (T - ts), rel=1e-12)
        assert max_schedule_increment(cfg) == pytest.approx(1 / (T - ts), rel=1e-12)

    def test_increment_halves_when_T_doubles(self):
        a = max_schedule_increment(EmaConfig(400, 80))
        b = max_schedule_increment(EmaConfig(800, 160))
        assert a / b == pytest.approx(2.0, rel=1e-12)


class TestProgressiveMask:
    def test_endpoints(self, ema1000):
        m0 = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert np.array_equal(progressive_mask(ema1000, m0, 1000), np.ones((2, 2)))
        for t in (0, 1, 150, 200):
            assert np.array_equal(progressive_mask(ema1000, m0, t), m0)

    def test_midpoint(self, ema1000):
        assert np.array_equal(progressive_mask(ema1000, [[1.0, 0.0]], 600), [[1.0, 0.5]])

    def test_monotone_in_t(self, ema1000):
        m0 = (RngStream(0).normal((6, 6)) > 0).astype(float)
        prev = progressive_mask(ema1000, m0, 1000)
        for t in range(999, -1, -7):
            cur = progressive_mask(ema1000, m0, t)
            assert np.all(prev >= cur)
            assert np.all(cur[m0 == 1] == 1.0)
            prev = cur


class TestPixelError:
    def test_examples(self):
        f = PixelErrorField(np.array([[1.0, 3.0]]), np.array([[-1.0, 3.0]]))
        assert np.array_equal(pixel_error(f, np.ones((1, 2))), [[1.0, 9.0]])
        assert np.array_equal(pixel_error(f, np.full((1, 2), 0.5)), [[0.0, 9.0]])

    def test_same_error_ignores_weight(self):
        d = RngStream(1).normal((4, 4))
        f = PixelErrorField(d, d)
        w = np.abs(np.sin(RngStream(2).normal((4, 4))))
        np.testing.assert_allclose(pixel_error(f, w), d ** 2, rtol=1e-12)

    def test_mismatch(self):
        with pytest.raises(GridError):
            PixelErrorField(np.ones((2, 2)), np.ones((2, 3)))
        with pytest.raises(GridError):
            pixel_error(PixelErrorField(np.ones((2, 2)), np.ones((2, 2))), np.ones((3, 2)))


class TestOptimalWeight:
    def test_symmetric(self):
        assert optimal_weight(PixelErrorField([[1.0]], [[-1.0]]))[0, 0] == 0.5

    def test_interior_against_grid_search(self):
        w = optimal_weight(PixelErrorField([[2.0]], [[-1.0]]))[0, 0]
        w_grid, _ = grid_search(2.0, -1.0, np.arange(10001) / 1e4)
        assert w == pytest.approx(1 / 3, abs=1e-15)
        assert abs(w - w_grid) <= 1e-4

    def test_same_sign_clamps(self):
        w = optimal_weight(PixelErrorField([[1.0]], [[2.0]]))[0, 0]
        w_grid, _ = grid_search(1.0, 2.0, np.arange(10001) / 1e4)
        assert w == 1.0 == w_grid
        assert optimal_weight(PixelErrorField([[3.0]], [[1.0]]))[0, 0] == 0.0

    def test_degenerate_uses_fallback(self):
        f = PixelErrorField([[0.5, 0.5]], [[0.5, 0.5 + 1e-14]])
        assert np.array_equal(optimal_weight(f, fallback=[[0.3, 0.7]]), [[0.3, 0.7]])
        assert np.array_equal(optimal_weight(f), [[0.0, 0.0]])

    def test_interior_iff_opposite_signs(self):
        rng = RngStream(3)
        dp, db = rng.normal((50, 50)), rng.normal((50, 50))
        w = optimal_weight(PixelErrorField(dp, db))
        interior = (w > 0) & (w < 1)
        assert np.array_equal(interior, np.sign(dp) * np.sign(db) < 0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_never_worse_than_any_grid_weight(self, dp, db):
        f = PixelErrorField([[dp]], [[db]])
        w = optimal_weight(f)
        e_star = pixel_error(f, w)[0, 0]
        e_grid = (W_GRID * dp + (1 - W_GRID) * db) ** 2
        assert np.all(e_star <= e_grid + 1e-12 * (1 + e_grid))


class TestExcessBound:
    def test_zero_when_schedule_is_optimal(self, ema1000):
        t = 600
        m0 = np.array([[1.0, 0.0, 0.0]])
        w_sched = progressive_mask(ema1000, m0, t)
        gaps = np.array([[1.3, -0.7, 2.0]])
        db = -w_sched * gaps
        rep = excess_error_bound(PixelErrorField(db + gaps, db), ema1000, t, m0)
        assert rep.excess == pytest.approx(0.0, abs=1e-15)
        assert rep.bound == pytest.approx(0.0, abs=1e-15)

    def test_holds_on_random_fields(self, ema1000):
        root = RngStream(11)
        for k in range(20):
            rng = root.child(k)
            m0 = (rng.normal((16, 16)) > 0.5).astype(float)
            f = PixelErrorField(rng.normal((16, 16)), rng.normal((16, 16)))
            t = int(rng.integers(0, 1001))
            excess, bound = excess_error_bound(f, ema1000, t, m0)
            assert 0 <= excess <= bound * (1 + 1e-12)

    def test_matches_direct_definition(self, ema1000):
        rng = RngStream(5)
        m0 = (rng.normal((8, 8)) > 0).astype(float)
        dp, db = rng.normal((8, 8)), rng.normal((8, 8))
        t = 500
        w_sched = progressive_mask(ema1000, m0, t)
        # brute force: constrained optimum by fine grid, excess by definition
        fine = np.linspace(0, 1, 200_001)
        excess = 0.0
        for i in np.ndindex(8, 8):
            e = (fine * dp[i] + (1 - fine) * db[i]) ** 2
            excess += (w_sched[i] * dp[i] + (1 - w_sched[i]) * db[i]) ** 2 - e.min()
        rep = excess_error_bound(PixelErrorField(dp, db), ema1000, t, m0)
        assert rep.excess == pytest.approx(excess, rel=1e-6)

    def test_clamped_pixel_still_bounded(self, ema1000):
        # same-sign errors: constrained optimum at w=1 while the schedule sits at 0
        rep = excess_error_bound(PixelErrorField([[1.0]], [[2.0]]), ema1000, 100, [[0.0]])
        assert rep.excess == pytest.approx(3.0)
        assert rep.bound == pytest.approx(4.0)
