"""Daily-rebalance strategies: decile long-short plus four benchmark
allocators, with the usual performance metrics.

Benchmark weights live on the probability simplex. The mean-variance and
minimum-variance problems are solved by projected gradient on the simplex
with a Lipschitz step, which is monotone from the equal-weight start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import (
    BadCovariance,
    DataError,
    EmptySchedule,
    EmptyUniverse,
    ZeroVolatility,
)
from .pricing import ReturnPanel

QP_MAX_ITER = 10_000
QP_TOL = 1e-10
VOL_WINDOW = 30


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum w = 1} (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, len(v) + 1) > 0)[0][-1]
    theta = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + theta, 0.0)


def weights_equal(n: int) -> np.ndarray:
    if n < 1:
        raise EmptyUniverse("cannot weight an empty universe")
    return np.full(n, 1.0 / n)


def weights_vol(sigmas: Sequence[float]) -> np.ndarray:
    """Weights inversely proportional to trailing volatility."""
    s = np.asarray(sigmas, dtype=float)
    if s.size == 0:
        raise EmptyUniverse("cannot weight an empty universe")
    if np.any(s <= 0.0):
        raise ZeroVolatility("all volatilities must be positive")
    inv = 1.0 / s
    return inv / inv.sum()


def _check_covariance(sigma: np.ndarray, n: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (n, n):
        raise BadCovariance(f"covariance shape {sigma.shape} does not match {n} assets")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise BadCovariance("covariance matrix is not symmetric")
    return 0.5 * (sigma + sigma.T)


def _solve_simplex_qp(mu: np.ndarray, sigma: np.ndarray, lam: float) -> np.ndarray:
    """Maximize mu.w - lam/2 w'Sw over the simplex by projected gradient."""
    n = mu.size
    w = weights_equal(n)
    eigmax = float(np.linalg.eigvalsh(sigma)[-1]) if n > 1 else float(sigma[0, 0])
    lip = lam * max(eigmax, 0.0)
    step = 1.0 / lip if lip > 0 else 1.0

    def objective(x: np.ndarray) -> float:
        return float(mu @ x - 0.5 * lam * x @ sigma @ x)

    best_w, best_obj = w, objective(w)
    obj = best_obj
    for _ in range(QP_MAX_ITER):
        grad = mu - lam * (sigma @ w)
        w = project_simplex(w + step * grad)
        new_obj = objective(w)
        if new_obj > best_obj:
            best_w, best_obj = w, new_obj
        if abs(new_obj - obj) < QP_TOL:
            break
        obj = new_obj
    return best_w


def weights_markowitz(
    mu: Sequence[float], sigma: np.ndarray, lambda_risk: float = 1.0
) -> np.ndarray:
    """Long-only mean-variance weights at the given risk aversion."""
    mu = np.asarray(mu, dtype=float)
    if mu.size == 0:
        raise EmptyUniverse("cannot weight an empty universe")
    sigma = _check_covariance(sigma, mu.size)
    return _solve_simplex_qp(mu, sigma, lambda_risk)


def weights_minvar(sigma: np.ndarray) -> np.ndarray:
    """Long-only minimum-variance weights."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0:
        raise EmptyUniverse("cannot weight an empty universe")
    n = sigma.shape[0]
    sigma = _check_covariance(sigma, n)
    return _solve_simplex_qp(np.zeros(n), sigma, 2.0)


def select_ripple(
    predictions: Mapping[str, float],
    universe: Sequence[str],
    decile: float = 0.10,
) -> Tuple[List[str], List[str]]:
    """Decile membership by predicted shock; ties break lexicographically.

    Firms without a prediction rank at zero. When every score ties, the legs
    fall back to the lexicographic extremes of the universe.
    """
    firms = list(universe)
    if not firms:
        raise EmptyUniverse("universe is empty")
    leg = math.ceil(decile * len(firms))
    ranking = sorted(firms, key=lambda f: (-predictions.get(f, 0.0), f))
    long_leg = ranking[:leg]
    taken = set(long_leg)
    short_leg: List[str] = []
    for f in reversed(ranking):
        if len(short_leg) == leg:
            break
        if f not in taken:
            short_leg.append(f)
    return sorted(long_leg), sorted(short_leg)


def ripple_weights(long_leg: Sequence[str], short_leg: Sequence[str]) -> Dict[str, float]:
    """Dollar-neutral weights: long leg sums to +1, short leg to -1."""
    weights: Dict[str, float] = {}
    for f in long_leg:
        weights[f] = 1.0 / len(long_leg)
    for f in short_leg:
        weights[f] = -1.0 / len(short_leg)
    return weights


@dataclass(frozen=True)
class BacktestReport:
    strategy: str
    dates: List[str]
    daily_returns: np.ndarray
    equity: np.ndarray
    mean_daily: float
    sharpe: float
    sharpe_annualized: float
    max_drawdown: float
    win_rate: float

    def as_row(self) -> Dict[str, float]:
        return {
            "strategy": self.strategy,
            "daily_return": self.mean_daily,
            "sharpe": self.sharpe,
            "mdd": self.max_drawdown,
            "win_rate": self.win_rate,
        }


def max_drawdown(equity: np.ndarray) -> float:
    """Largest peak-to-trough fractional loss, peak seeded at the start."""
    peak = np.maximum.accumulate(equity)
    return float(np.max((peak - equity) / peak)) if equity.size else 0.0


def backtest(
    schedule: Sequence[Tuple[str, Mapping[str, float]]],
    returns: ReturnPanel,
    strategy: str = "strategy",
    risk_free: float = 0.0,
) -> BacktestReport:
    """Apply one weight vector per day and collect the performance metrics.

    A firm without a return on its scheduled day is dropped and the rest of
    its leg is rescaled so the leg's total exposure is preserved. Sharpe is
    per-period; the annualized figure (sqrt(252)) is carried alongside.
    """
    if not schedule:
        raise EmptySchedule("no scheduled days")
    daily: List[float] = []
    dates: List[str] = []
    for date, weights in schedule:
        t = returns.date_index.get(date)
        if t is None:
            raise DataError(f"scheduled day {date} has no returns")
        row = returns.values[t]
        live: Dict[str, float] = {}
        for firm, w in weights.items():
            j = returns.firm_index.get(firm)
            if j is not None and not np.isnan(row[j]):
                live[firm] = w
        rescaled: Dict[str, float] = {}
        for sign in (1.0, -1.0):
            leg = {f: w for f, w in weights.items() if (w > 0) == (sign > 0) and w != 0}
            leg_live = {f: w for f, w in live.items() if f in leg}
            if not leg_live:
                continue
            target = sum(leg.values())
            actual = sum(leg_live.values())
            scale = target / actual if actual != 0 else 0.0
            for f, w in leg_live.items():
                rescaled[f] = w * scale
        r = sum(w * row[returns.firm_index[f]] for f, w in rescaled.items())
        daily.append(float(r))
        dates.append(date)
    arr = np.array(daily)
    equity = np.cumprod(1.0 + arr)
    curve = np.concatenate([[1.0], equity])  # drawdowns measure from the start
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    sharpe = (mean - risk_free) / std if std > 0 else float("nan")
    return BacktestReport(
        strategy=strategy,
        dates=dates,
        daily_returns=arr,
        equity=equity,
        mean_daily=mean,
        sharpe=sharpe,
        sharpe_annualized=sharpe * math.sqrt(252.0) if std > 0 else float("nan"),
        max_drawdown=max_drawdown(curve),
        win_rate=float(np.mean(arr > 0)),
    )


# --- daily strategy schedules ---

def trailing_window_stats(
    returns: ReturnPanel, t: int, window: int = VOL_WINDOW
) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """Universe with full trailing history plus its mean vector and covariance."""
    lo = t - window
    if lo < 0:
        return [], np.empty(0), np.empty((0, 0))
    block = returns.values[lo:t]
    full = ~np.any(np.isnan(block), axis=0)
    firms = [f for f, keep in zip(returns.firms, full) if keep]
    if not firms:
        return [], np.empty(0), np.empty((0, 0))
    data = block[:, full]
    mu = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return firms, mu, cov


def benchmark_schedules(
    returns: ReturnPanel,
    dates: Sequence[str],
    window: int = VOL_WINDOW,
    lambda_risk: float = 1.0,
) -> Dict[str, List[Tuple[str, Dict[str, float]]]]:
    """Equal, volatility, mean-variance, and min-variance weights per day."""
    schedules: Dict[str, List[Tuple[str, Dict[str, float]]]] = {
        "equal": [],
        "volatility": [],
        "markowitz": [],
        "min_variance": [],
    }
    for date in dates:
        t = returns.date_index.get(date)
        if t is None:
            continue
        firms, mu, cov = trailing_window_stats(returns, t, window)
        if len(firms) < 2:
            continue
        sig = np.sqrt(np.diag(cov))
        eq = weights_equal(len(firms))
        schedules["equal"].append((date, dict(zip(firms, eq))))
        if np.all(sig > 0):
            schedules["volatility"].append((date, dict(zip(firms, weights_vol(sig)))))
        mk = weights_markowitz(mu, cov, lambda_risk)
        schedules["markowitz"].append((date, dict(zip(firms, mk))))
        mv = weights_minvar(cov)
        schedules["min_variance"].append((date, dict(zip(firms, mv))))
    return schedules


def ripple_schedule(
    shocks_by_date: Mapping[str, Mapping[str, float]],
    returns: ReturnPanel,
    dates: Sequence[str],
    decile: float = 0.10,
) -> List[Tuple[str, Dict[str, float]]]:
    """Long-short schedule from per-morning aggregated shock predictions."""
    schedule = []
    for date in dates:
        t = returns.date_index.get(date)
        if t is None:
            continue
        row = returns.values[t]
        universe = [f for f, v in zip(returns.firms, row) if not np.isnan(v)]
        if len(universe) < 2:
            continue
        z = shocks_by_date.get(date, {})
        long_leg, short_leg = select_ripple(z, universe, decile)
        if not long_leg or not short_leg:
            continue
        schedule.append((date, ripple_weights(long_leg, short_leg)))
    return schedule
