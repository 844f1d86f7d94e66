"""Return/factor panels, rolling factor loadings, and pricing residuals.

Betas come from a rolling window ending the day before each evaluation date.
The single-factor model uses the closed-form covariance-over-variance beta on
excess returns; the three- and five-factor models fit OLS with an intercept.
Expected returns follow the factor-model equations (no intercept term), so
residuals absorb any estimated alpha.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DataError,
    DegenerateMarket,
    InsufficientHistory,
    MissingFactor,
)

DEFAULT_WINDOW = 252
DEFAULT_MIN_OBS = 60


class PricingModel(Enum):
    CAPM = "capm"
    FF3 = "ff3"
    FF5 = "ff5"

    @property
    def factor_columns(self) -> Tuple[str, ...]:
        if self is PricingModel.CAPM:
            return ("mkt_rf",)
        if self is PricingModel.FF3:
            return ("mkt_rf", "smb", "hml")
        return ("mkt_rf", "smb", "hml", "rmw", "cma")


@dataclass(frozen=True)
class Loadings:
    """Factor sensitivities; unused factors stay at zero."""

    beta: float
    s: float = 0.0
    h: float = 0.0
    r: float = 0.0
    c: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.s, self.h, self.r, self.c])


@dataclass(frozen=True)
class BetaEstimate:
    firm: str
    as_of: str
    model: PricingModel
    loadings: Loadings
    window_used: int


class FactorPanel:
    """Per-date factor returns. mkt_rf is required; the rest default to 0."""

    COLUMNS = ("mkt_rf", "smb", "hml", "rmw", "cma", "rf")

    def __init__(self, dates: Sequence[str], columns: Mapping[str, Sequence[float]]) -> None:
        self.dates = list(dates)
        if sorted(set(self.dates)) != self.dates:
            raise DataError("factor dates must be strictly increasing and unique")
        if "mkt_rf" not in columns:
            raise MissingFactor("factor panel requires mkt_rf")
        n = len(self.dates)
        self.values: Dict[str, np.ndarray] = {}
        for name in self.COLUMNS:
            if name in columns:
                arr = np.asarray(columns[name], dtype=float)
                if arr.shape != (n,):
                    raise DataError(f"factor column {name} length mismatch")
                if not np.all(np.isfinite(arr)):
                    raise DataError(f"factor column {name} has non-finite values")
                self.values[name] = arr
        self.present = frozenset(self.values)
        self.index = {d: i for i, d in enumerate(self.dates)}

    def column(self, name: str) -> np.ndarray:
        if name in self.values:
            return self.values[name]
        if name == "rf" or name in ("smb", "hml", "rmw", "cma"):
            return np.zeros(len(self.dates))
        raise MissingFactor(f"factor {name} not available")

    def require(self, model: PricingModel) -> None:
        missing = [c for c in model.factor_columns if c not in self.present]
        if missing:
            raise MissingFactor(f"{model.value} needs factor columns {missing}")

    def row(self, date: str) -> Dict[str, float]:
        i = self.index.get(date)
        if i is None:
            raise DataError(f"no factor row for {date}")
        out = {name: float(self.column(name)[i]) for name in self.COLUMNS}
        return out


class ReturnPanel:
    """Per (date, firm) simple returns on the grid of panel dates.

    Missing cells are NaN and stay missing; nothing is imputed.
    """

    def __init__(self, dates: Sequence[str], firms: Sequence[str], values: np.ndarray) -> None:
        self.dates = list(dates)
        self.firms = list(firms)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.dates), len(self.firms)):
            raise DataError("return panel shape mismatch")
        finite = self.values[~np.isnan(self.values)]
        if finite.size and not np.all(np.isfinite(finite)):
            raise DataError("returns must be finite")
        self.date_index = {d: i for i, d in enumerate(self.dates)}
        self.firm_index = {f: i for i, f in enumerate(self.firms)}

    @classmethod
    def from_records(cls, records: Iterable[Tuple[str, str, float]]) -> "ReturnPanel":
        cells: Dict[Tuple[str, str], float] = {}
        for date, ticker, ret in records:
            key = (date, ticker)
            if key in cells:
                raise DataError(f"duplicate return for {ticker} on {date}")
            cells[key] = float(ret)
        dates = sorted({d for d, _ in cells})
        firms = sorted({t for _, t in cells})
        values = np.full((len(dates), len(firms)), np.nan)
        di = {d: i for i, d in enumerate(dates)}
        fi = {t: i for i, t in enumerate(firms)}
        for (d, t), r in cells.items():
            values[di[d], fi[t]] = r
        return cls(dates, firms, values)

    def series(self, firm: str) -> np.ndarray:
        if firm not in self.firm_index:
            raise DataError(f"no returns for firm {firm}")
        return self.values[:, self.firm_index[firm]]


def _design(excess_mkt, smb, hml, rmw, cma, model: PricingModel, drop: Sequence[str]):
    cols = [excess_mkt]
    names = ["mkt_rf"]
    if model in (PricingModel.FF3, PricingModel.FF5):
        cols += [smb, hml]
        names += ["smb", "hml"]
    if model is PricingModel.FF5:
        cols += [rmw, cma]
        names += ["rmw", "cma"]
    keep = [i for i, n in enumerate(names) if n not in drop]
    return np.column_stack([cols[i] for i in keep]), [names[i] for i in keep]


def _loadings_from(coefs: Mapping[str, float]) -> Loadings:
    return Loadings(
        beta=coefs.get("mkt_rf", 0.0),
        s=coefs.get("smb", 0.0),
        h=coefs.get("hml", 0.0),
        r=coefs.get("rmw", 0.0),
        c=coefs.get("cma", 0.0),
    )


def estimate_beta(
    returns: ReturnPanel,
    factors: FactorPanel,
    firm: str,
    as_of: str,
    model: PricingModel = PricingModel.CAPM,
    window: int = DEFAULT_WINDOW,
    min_obs: int = DEFAULT_MIN_OBS,
    drop_factors: Sequence[str] = (),
) -> BetaEstimate:
    """Loadings from the window of observations strictly before ``as_of``."""
    factors.require(model)
    if as_of not in factors.index:
        raise DataError(f"as-of date {as_of} not in factor panel")
    if firm not in returns.firm_index:
        raise DataError(f"no returns for firm {firm}")
    cut = factors.index[as_of]
    y_all = _aligned_returns(returns, factors)[:, returns.firm_index[firm]]
    mask = ~np.isnan(y_all[:cut])
    idx = np.nonzero(mask)[0][-window:]
    if idx.size < min_obs:
        raise InsufficientHistory(
            f"{firm}@{as_of}: {idx.size} observations < min_obs={min_obs}"
        )
    rf = factors.column("rf")
    y = y_all[idx] - rf[idx]
    drop = () if model is PricingModel.CAPM else tuple(drop_factors)
    X, names = _design(
        factors.column("mkt_rf")[idx],
        factors.column("smb")[idx],
        factors.column("hml")[idx],
        factors.column("rmw")[idx],
        factors.column("cma")[idx],
        model,
        drop,
    )
    if model is PricingModel.CAPM:
        m = X[:, 0]
        dm = m - m.mean()
        var = float(dm @ dm)
        if var == 0.0 or np.ptp(m) == 0.0:
            raise DegenerateMarket(f"market variance is zero in window before {as_of}")
        beta = float(dm @ (y - y.mean())) / var
        coefs = {"mkt_rf": beta}
    else:
        Xi = np.column_stack([np.ones(len(y)), X])
        gram = Xi.T @ Xi
        if np.linalg.matrix_rank(gram) < Xi.shape[1]:
            raise DegenerateMarket(f"factor design singular in window before {as_of}")
        sol = np.linalg.solve(gram, Xi.T @ y)
        coefs = dict(zip(names, sol[1:]))
    return BetaEstimate(firm, as_of, model, _loadings_from(coefs), int(idx.size))


def expected_return(
    model: PricingModel, loadings: Loadings, factor_row: Mapping[str, float]
) -> float:
    """Model-implied return for one date given loadings and that date's factors."""
    for col in model.factor_columns:
        if col not in factor_row:
            raise MissingFactor(f"{model.value} needs factor {col}")
    rf = factor_row.get("rf", 0.0)
    out = rf + loadings.beta * factor_row["mkt_rf"]
    if model in (PricingModel.FF3, PricingModel.FF5):
        out += loadings.s * factor_row["smb"] + loadings.h * factor_row["hml"]
    if model is PricingModel.FF5:
        out += loadings.r * factor_row["rmw"] + loadings.c * factor_row["cma"]
    return float(out)


class ResidualPanel:
    """Realized-minus-expected returns with per-date cross-sectional volatility."""

    def __init__(
        self,
        dates: Sequence[str],
        firms: Sequence[str],
        eps: np.ndarray,
        loadings: np.ndarray,
    ) -> None:
        self.dates = list(dates)
        self.firms = list(firms)
        self.eps = eps
        self.loadings = loadings  # (n_dates, n_firms, 5), NaN where missing
        self.date_index = {d: i for i, d in enumerate(self.dates)}
        self.firm_index = {f: i for i, f in enumerate(self.firms)}
        self.sigma = np.zeros(len(self.dates))
        for t in range(len(self.dates)):
            row = eps[t]
            vals = row[~np.isnan(row)]
            # sample std of the date's cross-section; degenerate sections -> 0
            self.sigma[t] = float(np.std(vals, ddof=1)) if vals.size >= 2 else 0.0

    def cross_section(self, date: str) -> Tuple[List[str], np.ndarray, float]:
        """Firms with residuals on a date, their residuals, and sigma."""
        if date not in self.date_index:
            raise DataError(f"no residuals for date {date}")
        t = self.date_index[date]
        mask = ~np.isnan(self.eps[t])
        firms = [f for f, keep in zip(self.firms, mask) if keep]
        return firms, self.eps[t][mask], float(self.sigma[t])

    def loadings_at(self, date: str, firm: str) -> Optional[Loadings]:
        t = self.date_index.get(date)
        j = self.firm_index.get(firm)
        if t is None or j is None:
            return None
        row = self.loadings[t, j]
        if np.any(np.isnan(row)):
            return None
        return Loadings(*row)


def _aligned_returns(returns: ReturnPanel, factors: FactorPanel) -> np.ndarray:
    """Return matrix on the factor-date grid; dates without factors are dropped."""
    out = np.full((len(factors.dates), len(returns.firms)), np.nan)
    for d, i in returns.date_index.items():
        t = factors.index.get(d)
        if t is not None:
            out[t] = returns.values[i]
    return out


def residual_panel(
    returns: ReturnPanel,
    factors: FactorPanel,
    model: PricingModel = PricingModel.CAPM,
    window: int = DEFAULT_WINDOW,
    min_obs: int = DEFAULT_MIN_OBS,
    drop_factors: Sequence[str] = (),
    known_loadings: Optional[Mapping[str, Loadings]] = None,
) -> ResidualPanel:
    """Residuals for every (date, firm) cell with enough history.

    Cells without min_obs prior observations are left missing rather than
    failing the panel. ``known_loadings`` bypasses estimation entirely (used
    when true betas are available, e.g. on generated data).
    """
    factors.require(model)
    n_dates = len(factors.dates)
    firms = list(returns.firms)
    aligned = _aligned_returns(returns, factors)
    eps = np.full((n_dates, len(firms)), np.nan)
    loads = np.full((n_dates, len(firms), 5), np.nan)

    rf = factors.column("rf")
    fcols = {name: factors.column(name) for name in ("mkt_rf", "smb", "hml", "rmw", "cma")}
    drop = () if model is PricingModel.CAPM else tuple(drop_factors)
    X_full, names = _design(
        fcols["mkt_rf"], fcols["smb"], fcols["hml"], fcols["rmw"], fcols["cma"],
        model, drop,
    )
    k = X_full.shape[1]

    for j, firm in enumerate(firms):
        y_all = aligned[:, j]
        obs = np.nonzero(~np.isnan(y_all))[0]
        if obs.size == 0:
            continue
        if known_loadings is not None:
            lv = known_loadings.get(firm)
            if lv is None:
                continue
            exp = rf[obs] + _factor_component(lv, fcols, obs, model)
            eps[obs, j] = y_all[obs] - exp
            loads[obs, j] = lv.as_array()
            continue

        y = y_all[obs] - rf[obs]
        X = X_full[obs]
        # prefix sums over the firm's own observation sequence make every
        # trailing window an O(k^2) difference
        Xi = np.column_stack([np.ones(obs.size), X])
        G = np.einsum("ti,tj->tij", Xi, Xi)
        G_cum = np.concatenate([np.zeros((1, k + 1, k + 1)), np.cumsum(G, axis=0)])
        b_cum = np.concatenate([np.zeros((1, k + 1)), np.cumsum(Xi * y[:, None], axis=0)])

        for p in range(obs.size):
            lo = max(0, p - window)
            n_obs = p - lo
            if n_obs < min_obs:
                continue
            Gw = G_cum[p] - G_cum[lo]
            bw = b_cum[p] - b_cum[lo]
            if model is PricingModel.CAPM:
                n = Gw[0, 0]
                sxx = Gw[1, 1] - Gw[0, 1] * Gw[0, 1] / n
                if sxx <= 0.0:
                    continue
                sxy = bw[1] - Gw[0, 1] * bw[0] / n
                lv = Loadings(beta=float(sxy / sxx))
            else:
                try:
                    sol = np.linalg.solve(Gw, bw)
                except np.linalg.LinAlgError:
                    continue
                lv = _loadings_from(dict(zip(names, sol[1:])))
            t = obs[p]
            exp_t = rf[t] + _factor_component(lv, fcols, np.array([t]), model)[0]
            eps[t, j] = y_all[t] - exp_t
            loads[t, j] = lv.as_array()

    return ResidualPanel(factors.dates, firms, eps, loads)


def _factor_component(
    lv: Loadings, fcols: Mapping[str, np.ndarray], idx: np.ndarray, model: PricingModel
) -> np.ndarray:
    out = lv.beta * fcols["mkt_rf"][idx]
    if model in (PricingModel.FF3, PricingModel.FF5):
        out = out + lv.s * fcols["smb"][idx] + lv.h * fcols["hml"][idx]
    if model is PricingModel.FF5:
        out = out + lv.r * fcols["rmw"][idx] + lv.c * fcols["cma"][idx]
    return out


# --- file formats ---

def read_returns_csv(path: str) -> ReturnPanel:
    """Load returns.csv (date,ticker,ret)."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != [
            "date", "ticker", "ret",
        ]:
            raise DataError(f"{path}: expected header date,ticker,ret")
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append((row["date"], row["ticker"], float(row["ret"])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad return {row['ret']!r}") from None
    return ReturnPanel.from_records(records)


def read_factors_csv(path: str) -> FactorPanel:
    """Load factors.csv; FF columns beyond mkt_rf are optional."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "date" not in reader.fieldnames:
            raise DataError(f"{path}: expected a date column")
        names = [c for c in reader.fieldnames if c != "date"]
        unknown = [c for c in names if c not in FactorPanel.COLUMNS]
        if unknown:
            raise DataError(f"{path}: unknown factor columns {unknown}")
        dates: List[str] = []
        cols: Dict[str, List[float]] = {c: [] for c in names}
        for lineno, row in enumerate(reader, start=2):
            dates.append(row["date"])
            for c in names:
                try:
                    cols[c].append(float(row[c]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad value {row[c]!r} in {c}") from None
    return FactorPanel(dates, cols)


def write_returns_csv(panel: ReturnPanel, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ticker", "ret"])
        for i, d in enumerate(panel.dates):
            for j, f in enumerate(panel.firms):
                v = panel.values[i, j]
                if not np.isnan(v):
                    writer.writerow([d, f, repr(float(v))])


def write_factors_csv(panel: FactorPanel, path: str) -> None:
    names = [c for c in FactorPanel.COLUMNS if c in panel.present]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + names)
        for i, d in enumerate(panel.dates):
            writer.writerow([d] + [repr(float(panel.values[c][i])) for c in names])
