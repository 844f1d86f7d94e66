"""Reward-aligned tuning of the diffusion propagator.

The reward couples a cosine direction-match term with a magnitude-coverage
term weighted by lambda. A diagonal Gaussian policy over the diffusion
parameters is improved by a clipped, baseline-centered score-function update
once per month of events; the baseline is an exponential moving average of
realized rewards.
"""

from __future__ import annotations

import csv
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diffusion import DiffusionParams, Event, diffusion_values
from .errors import DataError, EmptyStream, ZeroVector
from .graph import GraphSeries, RelationKind
from .pricing import ResidualPanel

log = logging.getLogger(__name__)

# policy parameter order: one decay per relation kind, hop limit, seed scale
THETA_NAMES = tuple(f"decay_{k.value}" for k in RelationKind) + ("hops", "seed_scale")
N_THETA = len(THETA_NAMES)
_HOP_IDX = 4
_SCALE_IDX = 5
_MIN_SEED_SCALE = 1e-6


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 0.1
    absolute_coverage: bool = True  # element-wise |Z| vs |eps|; the literal
    # signed form is available for comparison runs

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise DataError(f"lambda must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class RewardReport:
    direction: float
    coverage: float
    total: float
    events: int = 1
    excluded: int = 0


def reward(z: np.ndarray, eps: np.ndarray, cfg: RewardConfig = RewardConfig()) -> RewardReport:
    """Direction match plus lambda-weighted magnitude coverage.

    Both vectors must already be aligned on the same firm set. Zero-norm
    inputs raise ZeroVector so the caller can exclude the event and count it.
    """
    z = np.asarray(z, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if z.shape != eps.shape:
        raise DataError("shock/residual shape mismatch")
    nz = float(np.linalg.norm(z))
    ne = float(np.linalg.norm(eps))
    if nz == 0.0 or ne == 0.0:
        raise ZeroVector("zero-norm shock or residual vector")
    direction = float(z @ eps) / (nz * ne)
    l1 = float(np.sum(np.abs(eps)))
    if cfg.absolute_coverage:
        coverage = float(np.sum(np.minimum(np.abs(z), np.abs(eps)))) / l1
    else:
        coverage = float(np.sum(np.minimum(z, eps))) / l1
    return RewardReport(
        direction=direction,
        coverage=coverage,
        total=direction + cfg.lam * coverage,
    )


def theta_vector(params: DiffusionParams) -> np.ndarray:
    return np.array(
        [params.decays.get(k, 0.0) for k in RelationKind]
        + [float(params.hops), params.seed_scale]
    )


def project_theta(theta: np.ndarray) -> np.ndarray:
    """Clip decays and seed scale to their domains; snap hops to 0..4."""
    out = np.array(theta, dtype=float)
    out[:_HOP_IDX] = np.clip(out[:_HOP_IDX], 0.0, 1.0)
    out[_HOP_IDX] = float(np.clip(round(float(out[_HOP_IDX])), 0, 4))
    out[_SCALE_IDX] = float(np.clip(out[_SCALE_IDX], _MIN_SEED_SCALE, 1.0))
    return out


def theta_params(theta: np.ndarray) -> DiffusionParams:
    t = project_theta(theta)
    return DiffusionParams(
        decays={k: float(t[i]) for i, k in enumerate(RelationKind)},
        hops=int(t[_HOP_IDX]),
        seed_scale=float(t[_SCALE_IDX]),
    )


@dataclass
class PolicyState:
    """Diagonal Gaussian policy over the diffusion parameters."""

    theta_mean: np.ndarray
    sigma_explore: np.ndarray
    learning_rate: float = 0.05
    clip_epsilon: float = 0.2
    baseline_decay: float = 0.1
    baseline: Optional[float] = None
    step: int = 0

    def __post_init__(self) -> None:
        self.theta_mean = project_theta(np.asarray(self.theta_mean, dtype=float))
        self.sigma_explore = np.broadcast_to(
            np.asarray(self.sigma_explore, dtype=float), (N_THETA,)
        ).copy()
        if np.any(self.sigma_explore < 0):
            raise DataError("exploration stddev must be non-negative")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise DataError("clip width must be in (0,1)")

    @classmethod
    def initial(
        cls,
        params: Optional[DiffusionParams] = None,
        sigma_explore: float = 0.1,
        learning_rate: float = 0.05,
        clip_epsilon: float = 0.2,
        baseline_decay: float = 0.1,
    ) -> "PolicyState":
        if params is None:
            params = DiffusionParams.uniform(0.5, hops=2, seed_scale=1.0)
        return cls(
            theta_mean=theta_vector(params),
            sigma_explore=np.full(N_THETA, sigma_explore),
            learning_rate=learning_rate,
            clip_epsilon=clip_epsilon,
            baseline_decay=baseline_decay,
        )


def advantage(r: float, state: PolicyState) -> float:
    """Reward minus the running baseline; the baseline then absorbs r."""
    if state.baseline is None:
        state.baseline = r
    adv = r - state.baseline
    state.baseline = (1.0 - state.baseline_decay) * state.baseline + state.baseline_decay * r
    return adv


@dataclass(frozen=True)
class PolicySample:
    theta: np.ndarray
    ratio: float
    advantage: float


def policy_update(state: PolicyState, batch: Sequence[PolicySample]) -> PolicyState:
    """One clipped score-function step on the policy mean.

    The gradient of the Gaussian log density w.r.t. the mean is
    (sample - mean) / sigma^2; each sample is weighted by its clipped
    importance ratio times its advantage. Non-finite gradients abort the
    step and leave the state unchanged.
    """
    if not batch:
        raise DataError("policy update needs a non-empty batch")
    lo, hi = 1.0 - state.clip_epsilon, 1.0 + state.clip_epsilon
    grad = np.zeros(N_THETA)
    var = state.sigma_explore ** 2
    live = var > 0
    for sample in batch:
        if not np.isfinite(sample.ratio):
            raise DataError(f"non-finite importance ratio {sample.ratio}")
        score = np.zeros(N_THETA)
        score[live] = (sample.theta[live] - state.theta_mean[live]) / var[live]
        grad += np.clip(sample.ratio, lo, hi) * sample.advantage * score
    grad /= len(batch)
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite policy gradient at step %d; state unchanged", state.step)
        return state
    state.theta_mean = project_theta(state.theta_mean + state.learning_rate * grad)
    state.step += 1
    return state


@dataclass(frozen=True)
class TraceStep:
    step: int
    month: str
    event_id: str
    reward: float
    advantage: float
    baseline: float
    theta: Tuple[float, ...]


@dataclass
class AlignmentTrace:
    steps: List[TraceStep] = field(default_factory=list)
    updates: int = 0
    excluded: int = 0
    final_theta: Optional[np.ndarray] = None

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "reward", "advantage", "baseline"]
                + list(THETA_NAMES)
                + ["month", "event_id"]
            )
            for s in self.steps:
                writer.writerow(
                    [s.step, repr(s.reward), repr(s.advantage), repr(s.baseline)]
                    + [repr(t) for t in s.theta]
                    + [s.month, s.event_id]
                )


@dataclass
class AlignmentEnv:
    """Everything the loop needs: events, graphs, and realized residuals."""

    events: Sequence[Event]
    series: GraphSeries
    residuals: ResidualPanel


@dataclass
class AlignConfig:
    seed: int
    epochs: int = 1
    reward: RewardConfig = field(default_factory=RewardConfig)
    seed_score: int = 8


def event_shock_and_residual(
    env: AlignmentEnv, event: Event, params: DiffusionParams, seed_score: int = 8
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Aligned (Z, eps) on the next trading day's priced firms, or None."""
    month = event.date[:7]
    if not env.series.has(month):
        return None
    snapshot = env.series.get(month)
    if not any(c in snapshot.firms for c in event.company_codes):
        return None
    pos = bisect_right(env.residuals.dates, event.date)
    if pos >= len(env.residuals.dates):
        return None
    firms, eps, _sigma = env.residuals.cross_section(env.residuals.dates[pos])
    if len(firms) < 2:
        return None
    totals = diffusion_values(snapshot, event, params, seed_score)
    by_firm = dict(zip(snapshot.firm_list, totals))
    z = np.array([by_firm.get(f, 0.0) for f in firms])
    return z, eps


def evaluate_policy(
    env: AlignmentEnv,
    params: DiffusionParams,
    cfg: RewardConfig = RewardConfig(),
    seed_score: int = 8,
) -> RewardReport:
    """Mean reward of fixed parameters over the environment's events."""
    totals, directions, coverages = [], [], []
    excluded = 0
    for event in sorted(env.events, key=lambda e: e.id):
        pair = event_shock_and_residual(env, event, params, seed_score)
        if pair is None:
            excluded += 1
            continue
        z, eps = pair
        try:
            rep = reward(z, eps, cfg)
        except ZeroVector:
            excluded += 1
            continue
        totals.append(rep.total)
        directions.append(rep.direction)
        coverages.append(rep.coverage)
    if not totals:
        raise EmptyStream("no scoreable events")
    return RewardReport(
        direction=float(np.mean(directions)),
        coverage=float(np.mean(coverages)),
        total=float(np.mean(totals)),
        events=len(totals),
        excluded=excluded,
    )


def align(env: AlignmentEnv, state: PolicyState, cfg: AlignConfig) -> AlignmentTrace:
    """Monthly policy-gradient loop over the event stream.

    Per event: sample parameters, diffuse, score against next-day residuals,
    and bank the advantage; per month: one policy update. Fixed seeds make
    the whole trace bit-reproducible.
    """
    if not env.events:
        raise EmptyStream("alignment needs at least one event")
    rng = np.random.default_rng(cfg.seed)
    by_month: Dict[str, List[Event]] = {}
    for event in env.events:
        by_month.setdefault(event.date[:7], []).append(event)
    months = sorted(by_month)
    trace = AlignmentTrace()
    step = 0
    for _epoch in range(cfg.epochs):
        for month in months:
            batch: List[PolicySample] = []
            sampling_mean = state.theta_mean.copy()
            sampling_sigma = state.sigma_explore.copy()
            for event in sorted(by_month[month], key=lambda e: e.id):
                noise = rng.standard_normal(N_THETA)
                theta_s = project_theta(sampling_mean + sampling_sigma * noise)
                params = theta_params(theta_s)
                pair = event_shock_and_residual(env, event, params, cfg.seed_score)
                if pair is None:
                    trace.excluded += 1
                    continue
                z, eps = pair
                try:
                    rep = reward(z, eps, cfg.reward)
                except ZeroVector:
                    trace.excluded += 1
                    continue
                adv = advantage(rep.total, state)
                # on-policy within the month: density ratio against the
                # sampling-time mean is exactly one
                batch.append(PolicySample(theta=theta_s, ratio=1.0, advantage=adv))
                trace.steps.append(
                    TraceStep(
                        step=step,
                        month=month,
                        event_id=event.id,
                        reward=rep.total,
                        advantage=adv,
                        baseline=float(state.baseline),
                        theta=tuple(float(t) for t in theta_s),
                    )
                )
                step += 1
            if batch:
                policy_update(state, batch)
                trace.updates += 1
    trace.final_theta = state.theta_mean.copy()
    return trace
