"""Event-impact predictions: built-in signed diffusion and the wire schema.

The built-in propagator seeds an event's firms and pushes value outward along
nonzero interaction entries, decaying per relation kind, for a bounded number
of hops. External predictors speak a line-delimited JSON protocol whose
response payload is parsed here; anything that fails the strict schema check
becomes a Refusal value, never an exception.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, NoSeedInGraph
from .graph import FirmId, GraphSnapshot, Pair, RelationKind

log = logging.getLogger(__name__)

SCORE_MIN, SCORE_MAX = -10, 10
IMPACT_TYPES = ("positive", "negative", "neutral")

# refusal reasons
EMPTY_OUTPUT = "empty_output"
PARSE_ERROR = "parse_error"
MISSING_KEY = "missing_key"
BAD_IMPACT_TYPE = "bad_impact_type"
SCORE_OUT_OF_RANGE = "score_out_of_range"
SIGN_MISMATCH = "sign_mismatch"
TIMEOUT = "timeout"
CLIENT_DIED = "client_died"


@dataclass(frozen=True)
class Event:
    id: str
    datetime: str
    company_codes: Tuple[str, ...]
    title: str = ""
    body: str = ""
    action: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("event requires an id")
        try:
            _dt.datetime.fromisoformat(self.datetime)
        except ValueError:
            raise DataError(f"event {self.id}: unparseable datetime {self.datetime!r}") from None

    @property
    def date(self) -> str:
        return self.datetime[:10]


@dataclass(frozen=True)
class ImpactClaim:
    name: FirmId
    impact_type: str
    impact_score: int

    def __post_init__(self) -> None:
        if self.impact_type not in IMPACT_TYPES:
            raise DataError(f"bad impact type {self.impact_type!r}")
        if not SCORE_MIN <= self.impact_score <= SCORE_MAX:
            raise DataError(f"impact score {self.impact_score} out of range")
        ok = (
            (self.impact_type == "positive" and self.impact_score > 0)
            or (self.impact_type == "negative" and self.impact_score < 0)
            or (self.impact_type == "neutral" and self.impact_score == 0)
        )
        if not ok:
            raise DataError(
                f"score {self.impact_score} inconsistent with type {self.impact_type}"
            )


@dataclass(frozen=True)
class Refusal:
    """A response that could not be post-processed into a valid prediction."""

    reason: str
    detail: str = ""


@dataclass
class PredictionSet:
    """Per-firm impact claims plus the sparse source->target channel matrix.

    Direct claims live on the diagonal of Y; propagated channel flows are the
    off-diagonal entries.
    """

    event_id: str
    claims: List[ImpactClaim] = field(default_factory=list)
    analysis: str = ""
    channels: Dict[Pair, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for v in self.channels.values():
            if not np.isfinite(v):
                raise DataError("channel matrix has non-finite entries")


@dataclass(frozen=True)
class DiffusionParams:
    """Decay per relation kind, hop limit, and seed scale."""

    decays: Mapping[RelationKind, float]
    hops: int = 2
    seed_scale: float = 1.0

    def __post_init__(self) -> None:
        for kind in RelationKind:
            g = self.decays.get(kind, 0.0)
            if not 0.0 <= g <= 1.0:
                raise DataError(f"decay for {kind.value} must be in [0,1], got {g}")
        if self.hops not in (0, 1, 2, 3, 4):
            raise DataError(f"hop limit must be 0..4, got {self.hops}")
        if not 0.0 < self.seed_scale <= 1.0:
            raise DataError(f"seed scale must be in (0,1], got {self.seed_scale}")

    @classmethod
    def uniform(cls, decay: float, hops: int = 2, seed_scale: float = 1.0) -> "DiffusionParams":
        return cls({k: decay for k in RelationKind}, hops=hops, seed_scale=seed_scale)


@dataclass
class ShockVector:
    """Aggregated shock magnitude per firm."""

    values: Dict[FirmId, float]

    def aligned(self, firms: Sequence[FirmId]) -> np.ndarray:
        return np.array([self.values.get(f, 0.0) for f in firms])

    def norm(self) -> float:
        return float(np.linalg.norm(list(self.values.values())))


def decay_matrix(s: GraphSnapshot, params: DiffusionParams) -> np.ndarray:
    """Dense [src, dst] one-hop transfer operator for the snapshot.

    Entry (i, j) is the sum over relation kinds of decay times that kind's
    contribution to mu, masked to pairs whose combined mu is nonzero.
    """
    mu = s.contribution_matrix(None)
    D = np.zeros_like(mu)
    for kind in s.kinds:
        D += params.decays.get(kind, 0.0) * s.contribution_matrix(kind)
    D[mu == 0.0] = 0.0
    return D


def seed_vector(
    s: GraphSnapshot, e: Event, params: DiffusionParams, seed_score: int = 8
) -> Tuple[np.ndarray, List[FirmId]]:
    firms = s.firm_list
    index = {f: i for i, f in enumerate(firms)}
    seeds = [c for c in dict.fromkeys(e.company_codes) if c in index]
    if not seeds:
        raise NoSeedInGraph(f"event {e.id}: none of {list(e.company_codes)} in snapshot")
    v0 = np.zeros(len(firms))
    for c in seeds:
        v0[index[c]] = params.seed_scale * (seed_score / 10.0)
    return v0, seeds


def diffusion_values(
    s: GraphSnapshot, e: Event, params: DiffusionParams, seed_score: int = 8
) -> np.ndarray:
    """Node totals of the hop recurrence, indexed by ``s.firm_list``."""
    v0, _ = seed_vector(s, e, params, seed_score)
    D = decay_matrix(s, params)
    total = v0.copy()
    frontier = v0
    for _ in range(params.hops):
        frontier = frontier @ D
        if not frontier.any():
            break
        total += frontier
    return total


def propagate_diffusion(
    s: GraphSnapshot, e: Event, params: DiffusionParams, seed_score: int = 8
) -> PredictionSet:
    """Run the hop recurrence and record every traversed channel in Y.

    Seeds land on the diagonal; each hop contribution from firm i to firm j
    is stored so that re-aggregating Y against mu reproduces the node totals.
    """
    firms = s.firm_list
    v0, seeds = seed_vector(s, e, params, seed_score)
    D = decay_matrix(s, params)
    mu = s.contribution_matrix(None)

    channels: Dict[Pair, float] = {}
    for c in seeds:
        channels[(c, c)] = v0[firms.index(c)]

    total = v0.copy()
    frontier = v0
    for _ in range(params.hops):
        nz_src = np.nonzero(frontier)[0]
        if nz_src.size == 0:
            break
        nxt = frontier @ D
        for i in nz_src:
            row = D[i]
            for j in np.nonzero(row)[0]:
                pair = (firms[i], firms[j])
                # flow recorded per unit of mu so that mu * Y re-yields it
                channels[pair] = channels.get(pair, 0.0) + row[j] * frontier[i] / mu[i, j]
        frontier = nxt
        total += frontier

    claims = []
    for i, firm in enumerate(firms):
        score = int(np.clip(round(total[i] * 10.0), SCORE_MIN, SCORE_MAX))
        if total[i] != 0.0 and score != 0:
            kind = "positive" if score > 0 else "negative"
            claims.append(ImpactClaim(firm, kind, score))
    analysis = (
        f"Diffusion from {', '.join(seeds)} over {params.hops} hops "
        f"touched {int(np.count_nonzero(total))} firms."
    )
    return PredictionSet(event_id=e.id, claims=claims, analysis=analysis, channels=channels)


def aggregate_shocks(s: GraphSnapshot, pred: PredictionSet) -> ShockVector:
    """Z_j as the mu-weighted sum of channel flows into j plus direct claims.

    Diagonal entries count at full weight. Channel endpoints missing from the
    snapshot are logged and skipped; they never fail the batch.
    """
    z: Dict[FirmId, float] = {f: 0.0 for f in s.firm_list}
    for (src, dst), y in pred.channels.items():
        if src not in s.firms or dst not in s.firms:
            log.warning("event %s: unresolved channel %s->%s", pred.event_id, src, dst)
            continue
        if src == dst:
            z[dst] += y
        else:
            z[dst] += s.interaction(src, dst) * y
    return ShockVector(z)


# --- wire schema ---

def claims_to_channels(claims: Sequence[ImpactClaim]) -> Dict[Pair, float]:
    """Direct per-firm claims become diagonal shocks at score/10."""
    out: Dict[Pair, float] = {}
    for c in claims:
        key = (c.name, c.name)
        out[key] = out.get(key, 0.0) + c.impact_score / 10.0
    return out


def parse_prediction(text: str, event_id: str = "") -> Union[PredictionSet, Refusal]:
    """Strictly parse one response line into a prediction or a refusal.

    Refusals are values: empty output, malformed JSON, missing schema keys,
    non-integer or out-of-range scores, and type/score sign mismatches.
    """
    if not text or not text.strip():
        return Refusal(EMPTY_OUTPUT)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        return Refusal(PARSE_ERROR, str(exc))
    if not isinstance(obj, dict):
        return Refusal(PARSE_ERROR, "response is not an object")
    rid = obj.get("id", event_id)
    body = obj.get("impact_analysis")
    if not isinstance(body, dict):
        return Refusal(MISSING_KEY, "impact_analysis")
    companies = body.get("affected_companies")
    if not isinstance(companies, list):
        return Refusal(MISSING_KEY, "affected_companies")
    analysis = body.get("analysis")
    if not isinstance(analysis, str):
        return Refusal(MISSING_KEY, "analysis")
    claims: List[ImpactClaim] = []
    for entry in companies:
        if not isinstance(entry, dict):
            return Refusal(PARSE_ERROR, "company entry is not an object")
        name = entry.get("name")
        itype = entry.get("impact_type")
        score = entry.get("impact_score")
        if not isinstance(name, str) or not name:
            return Refusal(MISSING_KEY, "name")
        if itype not in IMPACT_TYPES:
            return Refusal(BAD_IMPACT_TYPE, repr(itype))
        if isinstance(score, bool) or not isinstance(score, int):
            return Refusal(SCORE_OUT_OF_RANGE, repr(score))
        if not SCORE_MIN <= score <= SCORE_MAX:
            return Refusal(SCORE_OUT_OF_RANGE, str(score))
        sign_ok = (
            (itype == "positive" and score > 0)
            or (itype == "negative" and score < 0)
            or (itype == "neutral" and score == 0)
        )
        if not sign_ok:
            return Refusal(SIGN_MISMATCH, f"{itype}:{score}")
        claims.append(ImpactClaim(name, itype, score))
    return PredictionSet(
        event_id=str(rid),
        claims=claims,
        analysis=analysis,
        channels=claims_to_channels(claims),
    )


def serialize_response(pred: PredictionSet) -> str:
    """One compact response line in the wire schema (claims only)."""
    payload = {
        "id": pred.event_id,
        "impact_analysis": {
            "affected_companies": [
                {
                    "name": c.name,
                    "impact_type": c.impact_type,
                    "impact_score": c.impact_score,
                }
                for c in pred.claims
            ],
            "analysis": pred.analysis,
        },
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def serialize_request(e: Event, firms: Sequence[FirmId], edges: Sequence[Tuple]) -> str:
    payload = {
        "id": e.id,
        "event": {
            "datetime": e.datetime,
            "company_codes": list(e.company_codes),
            "title": e.title,
            "body": e.body,
        },
        "context": {
            "firms": list(firms),
            "edges": [list(edge) for edge in edges],
        },
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


# --- events file format ---

def read_events_jsonl(path: str) -> List[Event]:
    events: List[Event] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                events.append(
                    Event(
                        id=str(obj["id"]),
                        datetime=str(obj["datetime"]),
                        company_codes=tuple(obj["company_codes"]),
                        title=obj.get("title", ""),
                        body=obj.get("body", ""),
                        action=obj.get("action"),
                    )
                )
            except (KeyError, json.JSONDecodeError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad event record ({exc})") from None
    ids = [e.id for e in events]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate event ids")
    return events


def write_events_jsonl(events: Sequence[Event], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            rec = {
                "id": e.id,
                "datetime": e.datetime,
                "company_codes": list(e.company_codes),
                "title": e.title,
                "body": e.body,
            }
            if e.action is not None:
                rec["action"] = e.action
            fh.write(json.dumps(rec, separators=(",", ":"), ensure_ascii=False) + "\n")
