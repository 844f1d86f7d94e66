"""Cross-sectional evaluation statistics for propagator predictions.

Standardized pricing errors are regressed on the propagator score plus
optional risk controls with HC1 robust standard errors. The propagator fit
share is reported exactly as defined (only the propagator term enters the
numerator), so it can be negative; the plain regression R-squared is reported
alongside under its own name.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .diffusion import (
    Event,
    ImpactClaim,
    PredictionSet,
    Refusal,
    aggregate_shocks,
    claims_to_channels,
)
from .errors import (
    DataError,
    DegenerateCrossSection,
    SingularDesign,
    TooFewObservations,
)
from .graph import GraphSeries, GraphSnapshot
from .pricing import ResidualPanel

@dataclass(frozen=True)
class OlsResult:
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    n: int
    k: int


def ols_robust(X: np.ndarray, y: np.ndarray) -> OlsResult:
    """OLS coefficients with HC1 heteroskedasticity-robust standard errors.

    Two-sided p-values use the t distribution with n - k degrees of freedom.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError("design/response shape mismatch")
    n, k = X.shape
    if n <= k:
        raise SingularDesign(f"need more rows ({n}) than regressors ({k})")
    if np.linalg.matrix_rank(X) < k:
        raise SingularDesign("design matrix is rank deficient")
    gram = X.T @ X
    coef = np.linalg.solve(gram, X.T @ y)
    resid = y - X @ coef
    bread = np.linalg.inv(gram)
    meat = X.T @ (X * (resid ** 2)[:, None])
    cov = (n / (n - k)) * bread @ meat @ bread
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.inf * np.sign(coef))
    p = 2.0 * stats.t.sf(np.abs(t), df=n - k)
    ybar = y.mean()
    sst = float((y - ybar) @ (y - ybar))
    ssr = float(resid @ resid)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return OlsResult(coef=coef, se=se, t=t, p=p, r2=r2, n=n, k=k)


@dataclass(frozen=True)
class RegressionResult:
    """Propagator-constrained regression on one (or a pooled) cross-section."""

    gamma0: float
    gamma1: float
    controls: Tuple[float, ...]
    se: Tuple[float, ...]
    t_gamma1: float
    p_gamma1: float
    r2_phi: float
    r2_plain: float
    n: int


def pricing_regression(
    eps: np.ndarray,
    sigma_eps: float,
    phi: np.ndarray,
    controls: Optional[np.ndarray] = None,
) -> RegressionResult:
    """Regress standardized residuals on [1, phi, controls].

    The propagator fit share is 1 - E[(eps/sigma - g1*phi)^2] / Var(eps/sigma)
    with population moments over the cross-section; controls are excluded
    from the numerator by construction, so the share may be negative.
    """
    eps = np.asarray(eps, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if sigma_eps <= 0:
        raise DegenerateCrossSection("cross-sectional residual volatility is zero")
    if eps.shape != phi.shape:
        raise DataError("residual/propagator shape mismatch")
    y = eps / sigma_eps
    cols = [np.ones_like(y), phi]
    if controls is not None:
        controls = np.asarray(controls, dtype=float)
        if controls.shape[0] != y.shape[0]:
            raise DataError("controls row count mismatch")
        cols.extend(controls.T)
    X = np.column_stack(cols)
    if X.shape[0] < X.shape[1] + 1:
        raise SingularDesign(
            f"need at least {X.shape[1] + 1} firms, got {X.shape[0]}"
        )
    res = ols_robust(X, y)
    gamma1 = float(res.coef[1])
    resid_phi = y - gamma1 * phi
    var_y = float(np.var(y))
    r2_phi = 1.0 - float(np.mean(resid_phi ** 2)) / var_y if var_y > 0 else 1.0
    return RegressionResult(
        gamma0=float(res.coef[0]),
        gamma1=gamma1,
        controls=tuple(float(c) for c in res.coef[2:]),
        se=tuple(float(s) for s in res.se),
        t_gamma1=float(res.t[1]),
        p_gamma1=float(res.p[1]),
        r2_phi=r2_phi,
        r2_plain=res.r2,
        n=res.n,
    )


@dataclass(frozen=True)
class AnovaResult:
    f: float
    p: float
    eta_squared: float
    df_between: int
    df_within: int


def anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way analysis of variance across the given groups."""
    if len(groups) < 2:
        raise DataError("need at least two groups")
    arrays = [np.asarray(g, dtype=float) for g in groups]
    for g in arrays:
        if g.size < 2:
            raise TooFewObservations("each group needs at least two observations")
    total = np.concatenate(arrays)
    grand = total.mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in arrays)
    ss_within = sum(float((g - g.mean()) @ (g - g.mean())) for g in arrays)
    df_between = len(arrays) - 1
    df_within = total.size - len(arrays)
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    if ms_within == 0.0:
        f = 0.0 if ms_between == 0.0 else np.inf
    else:
        f = ms_between / ms_within
    ss_total = ss_between + ss_within
    return AnovaResult(
        f=float(f),
        p=float(stats.f.sf(f, df_between, df_within)) if np.isfinite(f) else 0.0,
        eta_squared=float(ss_between / ss_total) if ss_total > 0 else 0.0,
        df_between=df_between,
        df_within=df_within,
    )


@dataclass(frozen=True)
class RefusalStats:
    total: int
    by_reason: Dict[str, int]
    rate: float


def refusal_stats(outcomes: Iterable[Union[PredictionSet, Refusal]]) -> RefusalStats:
    """Tally parse outcomes into a refusal rate and per-reason counts."""
    total = 0
    by_reason: Dict[str, int] = {}
    for out in outcomes:
        total += 1
        if isinstance(out, Refusal):
            by_reason[out.reason] = by_reason.get(out.reason, 0) + 1
    refused = sum(by_reason.values())
    return RefusalStats(
        total=total,
        by_reason=dict(sorted(by_reason.items())),
        rate=refused / total if total else 0.0,
    )


# --- event-batch evaluation ---

Propagator = Callable[[Event, GraphSnapshot], Union[PredictionSet, Refusal]]


def null_propagator(seed: int, claims_per_event: int = 10) -> Propagator:
    """Placebo predictor: deterministic pseudo-random claims per event.

    Scores are independent of realized residuals, so its regression slope
    should be statistically indistinguishable from zero.
    """

    def predict(event: Event, snapshot: GraphSnapshot) -> PredictionSet:
        digest = hashlib.sha256(event.id.encode("utf-8")).digest()
        rng = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
        firms = snapshot.firm_list
        m = min(claims_per_event, len(firms))
        picks = rng.choice(len(firms), size=m, replace=False)
        claims = []
        for i in picks:
            score = int(rng.integers(1, 11)) * int(rng.choice([-1, 1]))
            claims.append(
                ImpactClaim(firms[i], "positive" if score > 0 else "negative", score)
            )
        return PredictionSet(
            event_id=event.id,
            claims=claims,
            analysis="placebo",
            channels=claims_to_channels(claims),
        )

    return predict


@dataclass
class EvalReport:
    pooled: Optional[RegressionResult]
    per_event: List[Tuple[str, RegressionResult]]
    anova: Optional[AnovaResult]
    refusals: RefusalStats
    skipped: Dict[str, int]
    pooled_phi: Optional[np.ndarray] = None
    pooled_y: Optional[np.ndarray] = None


def evaluate_events(
    events: Sequence[Event],
    series: GraphSeries,
    residuals: ResidualPanel,
    propagator: Propagator,
    controls_panel: Optional[ResidualPanel] = None,
    min_cross_section: int = 10,
) -> EvalReport:
    """Score every event's prediction against next-day standardized residuals.

    Each event contributes one row per firm that has both a residual on the
    next trading day and membership in the event month's snapshot. Events in
    months without a snapshot, without a next trading day, or with a
    degenerate cross-section are skipped and tallied.
    """
    outcomes: List[Union[PredictionSet, Refusal]] = []
    skipped: Dict[str, int] = {}
    rows_y: List[float] = []
    rows_phi: List[float] = []
    rows_ctrl: List[Tuple[float, ...]] = []
    per_event: List[Tuple[str, RegressionResult]] = []

    def skip(reason: str) -> None:
        skipped[reason] = skipped.get(reason, 0) + 1

    for event in sorted(events, key=lambda e: e.id):
        month = event.date[:7]
        if not series.has(month):
            skip("no_snapshot")
            continue
        snapshot = series.get(month)
        pos = bisect_right(residuals.dates, event.date)
        if pos >= len(residuals.dates):
            skip("no_next_day")
            continue
        next_date = residuals.dates[pos]
        firms, eps, sigma = residuals.cross_section(next_date)
        if sigma <= 0.0 or len(firms) < 2:
            skip("degenerate_cross_section")
            continue
        outcome = propagator(event, snapshot)
        outcomes.append(outcome)
        if isinstance(outcome, Refusal):
            continue
        z = aggregate_shocks(snapshot, outcome)
        fpos = {f: i for i, f in enumerate(firms)}
        keep_firms = [f for f in firms if f in snapshot.firms]
        if len(keep_firms) < 2:
            skip("no_overlap")
            continue
        idx = [fpos[f] for f in keep_firms]
        phi = z.aligned(keep_firms)
        y_eps = eps[idx]
        ctrl_rows: Optional[List[Tuple[float, ...]]] = None
        if controls_panel is not None:
            ctrl_rows = []
            for f in keep_firms:
                lv = controls_panel.loadings_at(next_date, f)
                ctrl_rows.append((lv.s, lv.h, lv.r, lv.c) if lv is not None else None)
        kept = range(len(keep_firms))
        if ctrl_rows is not None:
            kept = [i for i in kept if ctrl_rows[i] is not None]
            if len(kept) < 2:
                skip("no_controls")
                continue
        for i in kept:
            rows_y.append(float(y_eps[i] / sigma))
            rows_phi.append(float(phi[i]))
            if ctrl_rows is not None:
                rows_ctrl.append(ctrl_rows[i])
        if len(kept) >= (6 if ctrl_rows is not None else 3):
            try:
                sub_controls = (
                    np.array([ctrl_rows[i] for i in kept]) if ctrl_rows is not None else None
                )
                per_event.append(
                    (
                        event.id,
                        pricing_regression(
                            y_eps[list(kept)], sigma, phi[list(kept)], sub_controls
                        ),
                    )
                )
            except (SingularDesign, DegenerateCrossSection):
                skip("per_event_regression_failed")

    pooled = None
    anova_result = None
    phi_all = np.array(rows_phi)
    y = np.array(rows_y)
    if len(rows_y) >= min_cross_section:
        ctrl = np.array(rows_ctrl) if rows_ctrl else None
        try:
            # rows are already standardized per date; sigma folds to 1 here
            pooled = pricing_regression(y, 1.0, phi_all, ctrl)
        except (SingularDesign, DegenerateCrossSection):
            skip("pooled_regression_failed")
        groups = [
            y[phi_all < -1e-12],
            y[np.abs(phi_all) <= 1e-12],
            y[phi_all > 1e-12],
        ]
        groups = [g for g in groups if g.size >= 2]
        if len(groups) >= 2:
            anova_result = anova(groups)
    return EvalReport(
        pooled=pooled,
        per_event=per_event,
        anova=anova_result,
        refusals=refusal_stats(outcomes),
        skipped=skipped,
        pooled_phi=phi_all,
        pooled_y=y,
    )
