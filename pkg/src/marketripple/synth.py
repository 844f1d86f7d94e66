"""Synthetic markets with known ground-truth impacts.

Generation is fully determined by one integer seed. Independent substreams
(spawned from a single seed sequence, one per concern and one per month for
graphs) keep graph, event, market, and noise draws decoupled, so the output
is byte-reproducible across platforms.

True impacts are the built-in diffusion under the chosen true parameters,
truncated to the event-sparsity bound per event and the firm-sparsity bound
per firm. Returns add the scaled impacts on the next trading day after each
event, on top of single-factor systematic returns and idiosyncratic noise.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .alignment import RewardConfig, RewardReport, reward
from .diffusion import (
    DiffusionParams,
    Event,
    diffusion_values,
    write_events_jsonl,
)
from .errors import InfeasibleConfig, ZeroVector
from .graph import (
    EDGE_HEADER,
    EdgeRecord,
    GraphSeries,
    RelationKind,
    build_series,
)
from .pricing import (
    FactorPanel,
    Loadings,
    ResidualPanel,
    ReturnPanel,
    residual_panel,
    write_factors_csv,
    write_returns_csv,
)

import csv


def ticker(i: int) -> str:
    """Deterministic three-letter ticker for firm index i."""
    s = ""
    for _ in range(3):
        s = chr(65 + i % 26) + s
        i //= 26
    return s


@dataclass(frozen=True)
class SynthConfig:
    firms: int = 100
    events: int = 500
    months: int = 24
    event_sparsity: int = 12  # max firms hit per event
    firm_sparsity: int = 125  # max events hitting one firm
    beta_low: float = 0.5
    beta_high: float = 1.5
    market_drift: float = 0.0002
    market_vol: float = 0.01
    risk_free: float = 0.0
    noise_vol: float = 0.0005
    impact_scale: float = 0.01  # return units per unit of shock
    true_params: DiffusionParams = field(
        default_factory=lambda: DiffusionParams.uniform(0.7, hops=2)
    )
    seed_score: int = 8
    warmup_months: int = 6  # event-free head for beta estimation
    start: str = "2019-01-01"
    edges_per_layer: int = 0  # 0 -> firms count per layer
    negative_edge_share: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.firms < 1 or self.events < 1 or self.months < 1:
            raise InfeasibleConfig("firms, events, and months must be positive")
        k, l = self.event_sparsity, self.firm_sparsity
        if k < 1 or l < 1:
            raise InfeasibleConfig("sparsity bounds must be at least 1")
        if k > self.firms:
            raise InfeasibleConfig(f"event sparsity {k} exceeds {self.firms} firms")
        if l > self.events:
            raise InfeasibleConfig(f"firm sparsity {l} exceeds {self.events} events")
        if l * self.firms < self.events:
            raise InfeasibleConfig(
                f"{self.events} events cannot fit {self.firms} firms at {l} per firm"
            )
        if self.warmup_months >= self.months:
            raise InfeasibleConfig("warmup must leave at least one event month")


@dataclass
class GroundTruth:
    """Sparse true impact matrix plus the parameters that produced it."""

    firms: List[str]
    event_ids: List[str]
    impacts: np.ndarray  # (n_firms, n_events), shock units
    betas: Dict[str, float]
    true_params: DiffusionParams
    impact_scale: float

    def event_column(self, event_id: str) -> np.ndarray:
        return self.impacts[:, self.event_ids.index(event_id)]

    def max_nonzero_per_event(self) -> int:
        return int(np.max(np.count_nonzero(self.impacts, axis=0), initial=0))

    def max_nonzero_per_firm(self) -> int:
        return int(np.max(np.count_nonzero(self.impacts, axis=1), initial=0))


@dataclass
class SynthDataset:
    config: SynthConfig
    series: GraphSeries
    events: List[Event]
    returns: ReturnPanel
    factors: FactorPanel
    truth: GroundTruth
    edge_records: List[EdgeRecord]

    def true_residuals(self) -> ResidualPanel:
        """Residual panel using the true betas (no estimation error)."""
        known = {f: Loadings(beta=b) for f, b in self.truth.betas.items()}
        return residual_panel(self.returns, self.factors, known_loadings=known)


def trading_calendar(start: str, months: int) -> List[str]:
    """Weekday dates covering the requested number of calendar months."""
    day = dt.date.fromisoformat(start)
    seen_months: List[str] = []
    dates: List[str] = []
    while True:
        if day.weekday() < 5:
            month = day.strftime("%Y-%m")
            if month not in seen_months:
                if len(seen_months) == months:
                    return dates
                seen_months.append(month)
            dates.append(day.isoformat())
        day += dt.timedelta(days=1)


def _month_edges(
    rng: np.random.Generator, month: str, firms: List[str], cfg: SynthConfig
) -> List[EdgeRecord]:
    n = len(firms)
    per_layer = cfg.edges_per_layer or n
    records: List[EdgeRecord] = []
    for kind in RelationKind:
        for _ in range(per_layer):
            i, j = rng.choice(n, size=2, replace=False)
            sign = -1 if rng.random() < cfg.negative_edge_share else 1
            records.append(
                EdgeRecord(
                    month=month,
                    src=firms[int(i)],
                    dst=firms[int(j)],
                    kind=kind,
                    weight=float(rng.uniform(0.2, 2.0)),
                    sign=sign,
                )
            )
    return records


def generate(cfg: SynthConfig) -> SynthDataset:
    """Build the full synthetic market for one seed."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    graph_ss, event_ss, market_ss, noise_ss, beta_ss = root.spawn(5)

    firms = [ticker(i) for i in range(cfg.firms)]
    dates = trading_calendar(cfg.start, cfg.months)
    months = sorted({d[:7] for d in dates})

    # one substream per month keeps graph draws order-independent
    records: List[EdgeRecord] = []
    for month, child in zip(months, graph_ss.spawn(len(months))):
        records.extend(_month_edges(np.random.default_rng(child), month, firms, cfg))
    series = build_series(records)

    # events land on trading days after the warmup, never on the last day
    event_rng = np.random.default_rng(event_ss)
    eligible = [
        d for d in dates[:-1] if d[:7] in months[cfg.warmup_months :]
    ]
    if cfg.events <= len(eligible):
        picks = event_rng.choice(len(eligible), size=cfg.events, replace=False)
    else:
        picks = event_rng.integers(0, len(eligible), size=cfg.events)
    event_dates = sorted(eligible[int(p)] for p in picks)
    events: List[Event] = []
    for i, date in enumerate(event_dates):
        n_seeds = int(event_rng.integers(1, 3))
        seeds = sorted(
            firms[int(j)] for j in event_rng.choice(cfg.firms, size=n_seeds, replace=False)
        )
        events.append(
            Event(
                id=f"ev{i:05d}",
                datetime=f"{date}T08:00:00",
                company_codes=tuple(seeds),
                title=f"Scheduled market event for {', '.join(seeds)}",
                body=f"Synthetic release {i} naming {', '.join(seeds)}.",
                action="add" if i % 2 == 0 else "rep",
            )
        )

    # true impacts: diffusion under the true parameters, then sparsified
    impacts = np.zeros((cfg.firms, cfg.events))
    for col, event in enumerate(events):
        snapshot = series.get(event.date[:7])
        totals = diffusion_values(snapshot, event, cfg.true_params, cfg.seed_score)
        by_firm = dict(zip(snapshot.firm_list, totals))
        impacts[:, col] = np.array([by_firm.get(f, 0.0) for f in firms])
    impacts = _truncate_event_sparsity(impacts, cfg.event_sparsity)
    impacts = _truncate_firm_sparsity(impacts, cfg.firm_sparsity)

    # returns: systematic part plus scaled impacts on the next trading day
    market_rng = np.random.default_rng(market_ss)
    noise_rng = np.random.default_rng(noise_ss)
    beta_rng = np.random.default_rng(beta_ss)
    n_days = len(dates)
    mkt_rf = market_rng.normal(cfg.market_drift, cfg.market_vol, size=n_days)
    style = market_rng.normal(0.0, 0.3 * cfg.market_vol, size=(4, n_days))
    betas = beta_rng.uniform(cfg.beta_low, cfg.beta_high, size=cfg.firms)
    rf = np.full(n_days, cfg.risk_free)

    values = rf[:, None] + np.outer(mkt_rf, betas)
    if cfg.noise_vol > 0:
        values = values + noise_rng.normal(0.0, cfg.noise_vol, size=values.shape)
    date_pos = {d: t for t, d in enumerate(dates)}
    for col, event in enumerate(events):
        t_next = date_pos[event.date] + 1
        values[t_next] += cfg.impact_scale * impacts[:, col]

    returns = ReturnPanel(dates, firms, values)
    factors = FactorPanel(
        dates,
        {
            "mkt_rf": mkt_rf,
            "smb": style[0],
            "hml": style[1],
            "rmw": style[2],
            "cma": style[3],
            "rf": rf,
        },
    )
    truth = GroundTruth(
        firms=firms,
        event_ids=[e.id for e in events],
        impacts=impacts,
        betas=dict(zip(firms, betas.tolist())),
        true_params=cfg.true_params,
        impact_scale=cfg.impact_scale,
    )
    return SynthDataset(
        config=cfg,
        series=series,
        events=events,
        returns=returns,
        factors=factors,
        truth=truth,
        edge_records=records,
    )


def _truncate_event_sparsity(impacts: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude impacts per event; ties by firm order."""
    out = impacts.copy()
    n = impacts.shape[0]
    for col in range(impacts.shape[1]):
        vec = np.abs(out[:, col])
        nz = np.count_nonzero(vec)
        if nz <= k:
            continue
        order = np.lexsort((np.arange(n), -vec))
        out[order[k:], col] = 0.0
    return out


def _truncate_firm_sparsity(impacts: np.ndarray, l: int) -> np.ndarray:
    """Keep the l largest-magnitude impacts per firm; ties by event order."""
    out = impacts.copy()
    m = impacts.shape[1]
    for row in range(impacts.shape[0]):
        vec = np.abs(out[row])
        nz = np.count_nonzero(vec)
        if nz <= l:
            continue
        order = np.lexsort((np.arange(m), -vec))
        out[row, order[l:]] = 0.0
    return out


def oracle_reward(
    dataset: SynthDataset, cfg: RewardConfig = RewardConfig(), events: Optional[Sequence[Event]] = None
) -> RewardReport:
    """Reward of the true shock vectors against realized true-beta residuals."""
    residuals = dataset.true_residuals()
    chosen = list(events) if events is not None else list(dataset.events)
    date_pos = {d: t for t, d in enumerate(residuals.dates)}
    totals, directions, coverages = [], [], []
    excluded = 0
    for event in sorted(chosen, key=lambda e: e.id):
        t_next = date_pos[event.date] + 1
        if t_next >= len(residuals.dates):
            excluded += 1
            continue
        next_date = residuals.dates[t_next]
        firms, eps, _sigma = residuals.cross_section(next_date)
        col = dataset.truth.event_column(event.id)
        by_firm = dict(zip(dataset.truth.firms, col))
        z = np.array([by_firm.get(f, 0.0) for f in firms])
        try:
            rep = reward(z, eps, cfg)
        except ZeroVector:
            excluded += 1
            continue
        totals.append(rep.total)
        directions.append(rep.direction)
        coverages.append(rep.coverage)
    return RewardReport(
        direction=float(np.mean(directions)) if totals else 0.0,
        coverage=float(np.mean(coverages)) if totals else 0.0,
        total=float(np.mean(totals)) if totals else 0.0,
        events=len(totals),
        excluded=excluded,
    )


# --- dataset export ---

def write_dataset(dataset: SynthDataset, out_dir: str) -> List[str]:
    """Emit the ingestion files plus the ground truth; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    truth_dir = os.path.join(out_dir, "truth")
    os.makedirs(truth_dir, exist_ok=True)
    paths = []

    edges_path = os.path.join(out_dir, "edges.csv")
    rows = sorted(
        dataset.edge_records, key=lambda r: (r.month, r.src, r.dst, r.kind.value)
    )
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EDGE_HEADER)
        for r in rows:
            writer.writerow([r.month, r.src, r.dst, r.kind.value, repr(r.weight), r.sign])
    paths.append(edges_path)

    returns_path = os.path.join(out_dir, "returns.csv")
    write_returns_csv(dataset.returns, returns_path)
    paths.append(returns_path)

    factors_path = os.path.join(out_dir, "factors.csv")
    write_factors_csv(dataset.factors, factors_path)
    paths.append(factors_path)

    events_path = os.path.join(out_dir, "events.jsonl")
    write_events_jsonl(dataset.events, events_path)
    paths.append(events_path)

    impacts_path = os.path.join(truth_dir, "impacts.csv")
    with open(impacts_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "ticker", "shock"])
        for col, event_id in enumerate(dataset.truth.event_ids):
            for row, firm in enumerate(dataset.truth.firms):
                v = dataset.truth.impacts[row, col]
                if v != 0.0:
                    writer.writerow([event_id, firm, repr(float(v))])
    paths.append(impacts_path)

    betas_path = os.path.join(truth_dir, "betas.csv")
    with open(betas_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ticker", "beta"])
        for firm in dataset.truth.firms:
            writer.writerow([firm, repr(dataset.truth.betas[firm])])
    paths.append(betas_path)

    params_path = os.path.join(truth_dir, "params.json")
    with open(params_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "decays": {
                    k.value: dataset.truth.true_params.decays.get(k, 0.0)
                    for k in RelationKind
                },
                "hops": dataset.truth.true_params.hops,
                "seed_scale": dataset.truth.true_params.seed_scale,
                "impact_scale": dataset.truth.impact_scale,
                "event_sparsity": dataset.config.event_sparsity,
                "firm_sparsity": dataset.config.firm_sparsity,
                "seed": dataset.config.seed,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    paths.append(params_path)
    return paths
