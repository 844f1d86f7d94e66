import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from marketripple.errors import (
    BadCovariance,
    EmptySchedule,
    EmptyUniverse,
    ZeroVolatility,
)
from marketripple.pricing import ReturnPanel
from marketripple.portfolio import (
    backtest,
    max_drawdown,
    project_simplex,
    ripple_weights,
    select_ripple,
    weights_equal,
    weights_markowitz,
    weights_minvar,
    weights_vol,
)


def grid_objective_oracle(mu, sigma, lam, step=0.01):
    """Best objective over a dense grid on the 3-simplex."""
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    best = -np.inf
    for a in ticks:
        for b in ticks[ticks <= 1.0 - a + 1e-12]:
            w = np.array([a, b, 1.0 - a - b])
            if w[2] < -1e-12:
                continue
            w = np.clip(w, 0.0, None)
            obj = mu @ w - 0.5 * lam * w @ sigma @ w
            best = max(best, obj)
    return best


class TestWeightFormulas:
    def test_equal_quarters(self):
        np.testing.assert_allclose(weights_equal(4), 0.25)

    def test_equal_single(self):
        np.testing.assert_allclose(weights_equal(1), [1.0])

    def test_equal_sums_to_one(self):
        assert weights_equal(7).sum() == pytest.approx(1.0, abs=1e-12)

    def test_equal_empty(self):
        with pytest.raises(EmptyUniverse):
            weights_equal(0)

    def test_vol_even(self):
        np.testing.assert_allclose(weights_vol([1.0, 1.0]), [0.5, 0.5])

    def test_vol_one_three(self):
        np.testing.assert_allclose(weights_vol([1.0, 3.0]), [0.75, 0.25])

    def test_vol_zero_rejected(self):
        with pytest.raises(ZeroVolatility):
            weights_vol([1.0, 0.0])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(0.01, 5.0)))
    @settings(max_examples=100)
    def test_vol_weights_on_simplex(self, sigmas):
        w = weights_vol(sigmas)
        assert w.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(w >= 0)


class TestMarkowitz:
    def test_identity_equal_mu_gives_equal_weights(self):
        w = weights_markowitz(np.full(4, 0.01), np.eye(4))
        np.testing.assert_allclose(w, 0.25, atol=1e-6)

    def test_three_asset_grid_oracle(self):
        mu = np.array([0.02, 0.01, 0.015])
        sigma = np.array([[0.04, 0.01, 0.0], [0.01, 0.09, 0.02], [0.0, 0.02, 0.0625]])
        w = weights_markowitz(mu, sigma, 1.0)
        obj = mu @ w - 0.5 * w @ sigma @ w
        oracle = grid_objective_oracle(mu, sigma, 1.0, step=0.01)
        assert obj >= oracle - 1e-3
        assert w.sum() == pytest.approx(1.0, abs=1e-8)
        assert np.all(w >= -1e-8)

    def test_large_risk_aversion_approaches_minvar(self):
        sigma = np.diag([0.01, 0.04, 0.09])
        mk = weights_markowitz(np.full(3, 0.01), sigma, lambda_risk=1e6)
        mv = weights_minvar(sigma)
        np.testing.assert_allclose(mk, mv, atol=1e-3)

    def test_non_symmetric_rejected(self):
        bad = np.array([[1.0, 0.2], [0.1, 1.0]])
        with pytest.raises(BadCovariance):
            weights_markowitz(np.zeros(2), bad)

    def test_beats_equal_weight_start(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            a = rng.normal(size=(n, n))
            sigma = a @ a.T / n
            mu = rng.normal(0.01, 0.01, n)
            w = weights_markowitz(mu, sigma, 1.0)
            eq = weights_equal(n)
            obj = lambda x: mu @ x - 0.5 * x @ sigma @ x
            assert obj(w) >= obj(eq) - 1e-8


class TestMinVariance:
    def test_diagonal_case(self):
        w = weights_minvar(np.diag([1.0, 4.0]))
        np.testing.assert_allclose(w, [0.8, 0.2], atol=1e-4)

    def test_identity_three_assets(self):
        np.testing.assert_allclose(weights_minvar(np.eye(3)), 1.0 / 3.0, atol=1e-6)

    def test_variance_no_worse_than_equal(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            a = rng.normal(size=(n, n))
            sigma = a @ a.T / n
            w = weights_minvar(sigma)
            eq = weights_equal(n)
            assert w @ sigma @ w <= eq @ sigma @ eq + 1e-8

    def test_feasibility(self):
        rng = np.random.default_rng(29)
        for _ in range(30):
            n = int(rng.integers(2, 10))
            a = rng.normal(size=(n, n))
            sigma = a @ a.T / n
            w = weights_minvar(sigma)
            assert abs(w.sum() - 1.0) < 1e-8
            assert np.all(w >= -1e-8)


class TestProjection:
    @given(arrays(np.float64, st.integers(1, 15), elements=st.floats(-5, 5)))
    @settings(max_examples=150)
    def test_projection_lands_on_simplex(self, v):
        w = project_simplex(v)
        assert w.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(w >= 0)

    def test_interior_point_fixed(self):
        v = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_simplex(v), v, atol=1e-12)


class TestSelectRipple:
    def test_distinct_scores_pick_extremes(self):
        firms = [f"F{i}" for i in range(10)]
        z = {f: float(i) for i, f in enumerate(firms)}
        long_leg, short_leg = select_ripple(z, firms)
        assert long_leg == ["F9"]
        assert short_leg == ["F0"]

    def test_all_zero_lexicographic(self):
        firms = ["DD", "AA", "CC", "BB", "EE", "FF", "GG", "HH", "II", "JJ"]
        long_leg, short_leg = select_ripple({}, firms)
        assert long_leg == ["AA"]
        assert short_leg == ["JJ"]

    def test_ceiling_rule(self):
        firms = [f"F{i:02d}" for i in range(25)]
        z = {f: float(i) for i, f in enumerate(firms)}
        long_leg, short_leg = select_ripple(z, firms, decile=0.10)
        assert len(long_leg) == 3 and len(short_leg) == 3

    def test_legs_disjoint_and_neutral(self):
        rng = np.random.default_rng(4)
        firms = [f"F{i:02d}" for i in range(17)]
        z = {f: float(rng.normal()) for f in firms}
        long_leg, short_leg = select_ripple(z, firms)
        assert not set(long_leg) & set(short_leg)
        w = ripple_weights(long_leg, short_leg)
        assert sum(v for v in w.values() if v > 0) == pytest.approx(1.0, abs=1e-12)
        assert sum(v for v in w.values() if v < 0) == pytest.approx(-1.0, abs=1e-12)
        assert sum(abs(v) for v in w.values()) == pytest.approx(2.0, abs=1e-12)


def panel_from_rows(dates, firms, rows):
    return ReturnPanel(dates, firms, np.array(rows, dtype=float))


class TestBacktest:
    def test_constant_returns(self):
        dates = [f"2020-01-{d:02d}" for d in range(1, 6)]
        panel = panel_from_rows(dates, ["AAA"], [[0.01]] * 5)
        schedule = [(d, {"AAA": 1.0}) for d in dates]
        rep = backtest(schedule, panel)
        assert rep.mean_daily == pytest.approx(0.01)
        assert rep.max_drawdown == 0.0
        assert rep.win_rate == 1.0

    def test_half_loss_drawdown(self):
        panel = panel_from_rows(["2020-01-01"], ["AAA"], [[-0.5]])
        rep = backtest([("2020-01-01", {"AAA": 1.0})], panel)
        assert rep.max_drawdown == pytest.approx(0.5)

    def test_win_rate(self):
        dates = [f"2020-01-{d:02d}" for d in range(1, 5)]
        panel = panel_from_rows(dates, ["AAA"], [[0.01], [-0.02], [0.03], [0.005]])
        rep = backtest([(d, {"AAA": 1.0}) for d in dates], panel)
        assert rep.win_rate == pytest.approx(0.75)

    def test_hand_computed_metrics(self):
        dates = [f"2020-01-{d:02d}" for d in range(1, 6)]
        rets = [0.01, -0.02, 0.015, 0.0, 0.005]
        panel = panel_from_rows(dates, ["AAA"], [[r] for r in rets])
        rep = backtest([(d, {"AAA": 1.0}) for d in dates], panel)
        arr = np.array(rets)
        assert rep.mean_daily == pytest.approx(arr.mean(), abs=1e-15)
        assert rep.sharpe == pytest.approx(arr.mean() / arr.std(ddof=1), abs=1e-12)
        equity = np.cumprod(1 + arr)
        peak = np.maximum.accumulate(equity)
        assert rep.max_drawdown == pytest.approx(np.max((peak - equity) / peak), abs=1e-15)
        assert rep.win_rate == pytest.approx(np.mean(arr > 0), abs=1e-15)

    def test_missing_return_renormalizes_leg(self):
        panel = panel_from_rows(
            ["2020-01-01"], ["AAA", "BBB", "CCC"], [[0.02, np.nan, -0.01]]
        )
        schedule = [("2020-01-01", {"AAA": 0.5, "BBB": 0.5, "CCC": -1.0})]
        rep = backtest(schedule, panel)
        # long leg renormalizes to AAA alone at +1; short stays on CCC
        assert rep.daily_returns[0] == pytest.approx(0.02 + 0.01)

    def test_empty_schedule(self):
        panel = panel_from_rows(["2020-01-01"], ["AAA"], [[0.01]])
        with pytest.raises(EmptySchedule):
            backtest([], panel)

    def test_mdd_zero_iff_non_decreasing(self):
        assert max_drawdown(np.array([1.0, 1.01, 1.02, 1.02])) == 0.0
        assert max_drawdown(np.array([1.0, 0.99, 1.5])) > 0.0

    @given(
        arrays(np.float64, st.integers(1, 40), elements=st.floats(-0.2, 0.2)).filter(
            lambda a: np.all(np.isfinite(a))
        )
    )
    @settings(max_examples=100)
    def test_mdd_bounds(self, rets):
        equity = np.cumprod(1.0 + rets)
        mdd = max_drawdown(equity)
        assert 0.0 <= mdd <= 1.0
