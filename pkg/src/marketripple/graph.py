"""Monthly snapshots of the signed multi-relation firm graph.

A snapshot holds four relation layers (technical, supply chain, shared
leadership, mutual fund holding). Each layer is normalized to [0, 1] by its
month-max absolute weight and the layers are combined into a single signed
interaction measure per ordered firm pair via configurable convex weights.
Supply-chain edges are directed; the other three layers are symmetric and
stored as two directed entries.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import (
    BadConfig,
    DataError,
    DegenerateProfile,
    EmptySeries,
    MixedMonth,
    UnknownFirm,
)

FirmId = str
Pair = Tuple[FirmId, FirmId]

_MONTH_RE = re.compile(r"^\d{4}-\d{2}$")


class RelationKind(Enum):
    TECHNICAL = "technical"
    SUPPLY_CHAIN = "supply_chain"
    LEADERSHIP = "leadership"
    FUND_HOLDING = "fund_holding"

    @classmethod
    def from_name(cls, name: str) -> "RelationKind":
        try:
            return cls(name)
        except ValueError:
            raise DataError(f"unknown relation kind: {name!r}") from None


# Supply chain keeps its input-output direction; the rest are symmetric.
SYMMETRIC_KINDS = frozenset(
    {RelationKind.TECHNICAL, RelationKind.LEADERSHIP, RelationKind.FUND_HOLDING}
)

DEFAULT_LAYER_WEIGHTS: Dict[RelationKind, float] = {k: 0.25 for k in RelationKind}


@dataclass(frozen=True)
class CpcProfile:
    """Patent-class count distribution for one firm."""

    firm: FirmId
    counts: Mapping[str, int]

    def __post_init__(self) -> None:
        if not self.firm:
            raise DataError("CpcProfile requires a firm id")
        if any(c < 0 for c in self.counts.values()):
            raise DataError(f"negative patent count for {self.firm}")
        if not any(c > 0 for c in self.counts.values()):
            raise DataError(f"profile for {self.firm} has no positive count")


def technical_closeness(a: CpcProfile, b: CpcProfile) -> float:
    """Pearson correlation of two patent-class count vectors.

    Vectors are taken over the union vocabulary with missing codes as 0.
    Raises DegenerateProfile when either vector has zero variance or the
    union vocabulary has fewer than two codes.
    """
    vocab = sorted(set(a.counts) | set(b.counts))
    if len(vocab) < 2:
        raise DegenerateProfile(
            f"profiles {a.firm}/{b.firm} share fewer than two patent codes"
        )
    va = np.array([a.counts.get(c, 0) for c in vocab], dtype=float)
    vb = np.array([b.counts.get(c, 0) for c in vocab], dtype=float)
    da = va - va.mean()
    db = vb - vb.mean()
    na = math.sqrt(float(da @ da))
    nb = math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        raise DegenerateProfile(
            f"zero-variance patent profile for {a.firm if na == 0 else b.firm}"
        )
    return float(da @ db) / (na * nb)


@dataclass(frozen=True)
class EdgeRecord:
    """One raw relation observation for one month."""

    month: str
    src: FirmId
    dst: FirmId
    kind: RelationKind
    weight: float
    sign: int = 1

    def __post_init__(self) -> None:
        if not _MONTH_RE.match(self.month):
            raise DataError(f"month must be YYYY-MM, got {self.month!r}")
        if self.src == self.dst:
            raise DataError(f"self edge on {self.src} ({self.month})")
        if self.weight < 0:
            raise DataError(f"negative weight {self.weight} on {self.src}->{self.dst}")
        if self.sign not in (-1, 1):
            raise DataError(f"sign must be -1 or +1, got {self.sign}")


def _validate_layer_weights(weights: Mapping[RelationKind, float]) -> Dict[RelationKind, float]:
    out = dict(DEFAULT_LAYER_WEIGHTS)
    for kind, w in weights.items():
        if w < 0:
            raise BadConfig(f"negative layer weight for {kind.value}: {w}")
        out[kind] = float(w)
    return out


class GraphSnapshot:
    """Immutable one-month view of the firm graph.

    ``raw`` holds the per-layer aggregated signed weights, ``normalized`` the
    same values scaled by the layer's month-max magnitude, and ``mu`` the
    weighted combination. Construction is single-writer; reads are free.
    """

    def __init__(
        self,
        month: str,
        firms: Iterable[FirmId],
        raw: Mapping[RelationKind, Mapping[Pair, float]],
        layer_weights: Optional[Mapping[RelationKind, float]] = None,
    ) -> None:
        self._month = month
        self._firms = frozenset(firms)
        self._weights = _validate_layer_weights(layer_weights or {})
        self._raw: Dict[RelationKind, Dict[Pair, float]] = {
            kind: {p: float(v) for p, v in layer.items() if v != 0.0}
            for kind, layer in raw.items()
        }
        self._raw = {k: v for k, v in self._raw.items() if v}
        for kind, layer in self._raw.items():
            for src, dst in layer:
                if src not in self._firms or dst not in self._firms:
                    raise UnknownFirm(f"edge endpoint {src}->{dst} outside firm set")
        self._normalized: Dict[RelationKind, Dict[Pair, float]] = {}
        for kind, layer in self._raw.items():
            scale = max(abs(v) for v in layer.values())
            self._normalized[kind] = {p: v / scale for p, v in layer.items()}
        mu: Dict[Pair, float] = {}
        for kind, layer in self._normalized.items():
            w = self._weights[kind]
            if w == 0.0:
                continue
            for pair, v in layer.items():
                mu[pair] = mu.get(pair, 0.0) + w * v
        self._mu = {p: v for p, v in mu.items() if v != 0.0}
        self._firm_list = sorted(self._firms)
        self._firm_index = {f: i for i, f in enumerate(self._firm_list)}
        self._dense_cache: Dict[Optional[RelationKind], np.ndarray] = {}

    @property
    def month(self) -> str:
        return self._month

    @property
    def firms(self) -> frozenset:
        return self._firms

    @property
    def firm_list(self) -> List[FirmId]:
        """Firms in sorted order; the row/column order of dense matrices."""
        return list(self._firm_list)

    @property
    def layer_weights(self) -> Dict[RelationKind, float]:
        return dict(self._weights)

    @property
    def kinds(self) -> Set[RelationKind]:
        return set(self._raw)

    def raw_layer(self, kind: RelationKind) -> Dict[Pair, float]:
        return dict(self._raw.get(kind, {}))

    def layer_contribution(self, kind: RelationKind) -> Dict[Pair, float]:
        """Signed contribution of one layer to mu (weight times normalized)."""
        w = self._weights[kind]
        return {p: w * v for p, v in self._normalized.get(kind, {}).items()}

    @property
    def mu(self) -> Dict[Pair, float]:
        return dict(self._mu)

    def interaction(self, i: FirmId, j: FirmId) -> float:
        """Signed interaction measure for the ordered pair (i, j)."""
        if i not in self._firms:
            raise UnknownFirm(f"unknown firm {i!r} in {self._month}")
        if j not in self._firms:
            raise UnknownFirm(f"unknown firm {j!r} in {self._month}")
        return self._mu.get((i, j), 0.0)

    def contribution_matrix(self, kind: Optional[RelationKind] = None) -> np.ndarray:
        """Dense [src, dst] matrix of one layer's contribution (or of mu).

        Indexed by ``firm_list`` order. Cached; treat as read-only.
        """
        if kind not in self._dense_cache:
            n = len(self._firm_list)
            m = np.zeros((n, n))
            entries = self._mu if kind is None else self.layer_contribution(kind)
            for (src, dst), v in entries.items():
                m[self._firm_index[src], self._firm_index[dst]] = v
            m.setflags(write=False)
            self._dense_cache[kind] = m
        return self._dense_cache[kind]

    def connected_pairs(self) -> Dict[Tuple[FirmId, FirmId], int]:
        """Unordered connected pairs mapped to their relation-layer count."""
        multiplicity: Dict[Tuple[FirmId, FirmId], Set[RelationKind]] = {}
        for kind, layer in self._raw.items():
            for src, dst in layer:
                key = (src, dst) if src < dst else (dst, src)
                multiplicity.setdefault(key, set()).add(kind)
        return {pair: len(kinds) for pair, kinds in multiplicity.items()}

    def edge_count(self) -> int:
        """Number of (unordered pair, relation) edges with nonzero weight."""
        seen = set()
        for kind, layer in self._raw.items():
            for src, dst in layer:
                key = (src, dst) if src < dst else (dst, src)
                seen.add((key, kind))
        return len(seen)


class GraphSeries:
    """Ordered month -> snapshot map with exact-match lookup."""

    def __init__(self, snapshots: Iterable[GraphSnapshot]) -> None:
        self._by_month: Dict[str, GraphSnapshot] = {}
        last = None
        for snap in snapshots:
            if last is not None and snap.month <= last:
                raise DataError(f"months out of order: {snap.month} after {last}")
            self._by_month[snap.month] = snap
            last = snap.month

    def __len__(self) -> int:
        return len(self._by_month)

    def __iter__(self):
        return iter(self._by_month.values())

    @property
    def months(self) -> List[str]:
        return list(self._by_month)

    def get(self, month: str) -> GraphSnapshot:
        if month not in self._by_month:
            raise DataError(f"no snapshot for month {month}")
        return self._by_month[month]

    def has(self, month: str) -> bool:
        return month in self._by_month


def build_snapshot(
    edges: Sequence[EdgeRecord],
    cpc: Optional[Sequence[CpcProfile]] = None,
    layer_weights: Optional[Mapping[RelationKind, float]] = None,
    month: Optional[str] = None,
) -> GraphSnapshot:
    """Aggregate one month of edge records into a snapshot.

    Duplicate (src, dst, kind) records are summed as signed weights.
    Symmetric kinds are mirrored into both directions. Patent profiles, when
    given, add technical edges weighted by pairwise closeness; pairs whose
    closeness is undefined (degenerate profiles) or zero are skipped.
    """
    months = {e.month for e in edges}
    if len(months) > 1:
        raise MixedMonth(f"records span months {sorted(months)}")
    if month is None:
        month = months.pop() if months else ""
    elif months and month not in months:
        raise MixedMonth(f"records are for {months.pop()}, not {month}")

    weights = _validate_layer_weights(layer_weights or {})

    acc: Dict[RelationKind, Dict[Pair, float]] = {}
    firms: Set[FirmId] = set()

    def add(kind: RelationKind, src: FirmId, dst: FirmId, signed: float) -> None:
        layer = acc.setdefault(kind, {})
        layer[(src, dst)] = layer.get((src, dst), 0.0) + signed
        if kind in SYMMETRIC_KINDS:
            layer[(dst, src)] = layer.get((dst, src), 0.0) + signed

    for rec in edges:
        firms.add(rec.src)
        firms.add(rec.dst)
        add(rec.kind, rec.src, rec.dst, rec.sign * rec.weight)

    if cpc:
        profiles = sorted(cpc, key=lambda p: p.firm)
        for p in profiles:
            firms.add(p.firm)
        for i, a in enumerate(profiles):
            for b in profiles[i + 1 :]:
                try:
                    r = technical_closeness(a, b)
                except DegenerateProfile:
                    continue
                if r != 0.0:
                    # mirrored once: add() handles the reverse direction
                    add(RelationKind.TECHNICAL, a.firm, b.firm, r)

    # one mirrored add per symmetric input record doubles nothing, but the
    # accumulator may now hold exact zeros from cancelling signs; drop them
    cleaned = {
        kind: {p: v for p, v in layer.items() if v != 0.0} for kind, layer in acc.items()
    }
    return GraphSnapshot(month, firms, cleaned, weights)


def build_series(
    edges: Sequence[EdgeRecord],
    cpc: Optional[Sequence[CpcProfile]] = None,
    layer_weights: Optional[Mapping[RelationKind, float]] = None,
) -> GraphSeries:
    """Group records by month and build one snapshot per month."""
    by_month: Dict[str, List[EdgeRecord]] = {}
    for rec in edges:
        by_month.setdefault(rec.month, []).append(rec)
    snaps = [
        build_snapshot(by_month[m], cpc=cpc, layer_weights=layer_weights, month=m)
        for m in sorted(by_month)
    ]
    return GraphSeries(snaps)


def interaction(s: GraphSnapshot, i: FirmId, j: FirmId) -> float:
    return s.interaction(i, j)


def k_hop_neighborhood(s: GraphSnapshot, seeds: Iterable[FirmId], k: int) -> Set[FirmId]:
    """Firms reachable from the seeds within k undirected hops over nonzero mu."""
    seed_set = set(seeds)
    for f in seed_set:
        if f not in s.firms:
            raise UnknownFirm(f"unknown seed firm {f!r}")
    if k < 0:
        raise BadConfig(f"hop count must be >= 0, got {k}")
    adjacency: Dict[FirmId, Set[FirmId]] = {}
    for (src, dst), v in s.mu.items():
        adjacency.setdefault(src, set()).add(dst)
        adjacency.setdefault(dst, set()).add(src)
    reached = set(seed_set)
    frontier = set(seed_set)
    for _ in range(k):
        nxt: Set[FirmId] = set()
        for f in frontier:
            nxt |= adjacency.get(f, set())
        nxt -= reached
        if not nxt:
            break
        reached |= nxt
        frontier = nxt
    return reached


@dataclass(frozen=True)
class SeriesStats:
    """Shape of a snapshot series: sizes and relation multiplicity mix."""

    graphs: int
    avg_nodes: float
    avg_edges: float
    pct_single: float
    pct_dual: float
    pct_triple: float
    pct_quad: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "graphs": self.graphs,
            "avg_nodes": self.avg_nodes,
            "avg_edges": self.avg_edges,
            "pct_single": self.pct_single,
            "pct_dual": self.pct_dual,
            "pct_triple": self.pct_triple,
            "pct_quad": self.pct_quad,
        }


def snapshot_stats(series: GraphSeries) -> SeriesStats:
    """Per-series averages plus the multiplicity split of connected pairs.

    Percentages are over all connected pairs pooled across snapshots and sum
    to 100 (a pair connected in two layers counts once, under dual).
    """
    if len(series) == 0:
        raise EmptySeries("series has no snapshots")
    nodes = []
    edges = []
    counts = [0, 0, 0, 0]  # single, dual, triple, quad
    for snap in series:
        nodes.append(len(snap.firms))
        edges.append(snap.edge_count())
        for mult in snap.connected_pairs().values():
            counts[mult - 1] += 1
    total_pairs = sum(counts)
    if total_pairs:
        pct = [100.0 * c / total_pairs for c in counts]
    else:
        pct = [0.0, 0.0, 0.0, 0.0]
    return SeriesStats(
        graphs=len(series),
        avg_nodes=float(np.mean(nodes)),
        avg_edges=float(np.mean(edges)),
        pct_single=pct[0],
        pct_dual=pct[1],
        pct_triple=pct[2],
        pct_quad=pct[3],
    )


def ablate_relation(s: GraphSnapshot, kind: RelationKind) -> GraphSnapshot:
    """New snapshot with one relation layer removed and mu recombined.

    Remaining layers keep their own normalization and configured weights;
    the original snapshot and its firm set are unchanged.
    """
    raw = {k: s.raw_layer(k) for k in s.kinds if k is not kind}
    return GraphSnapshot(s.month, s.firms, raw, s.layer_weights)


# --- file formats ---

EDGE_HEADER = ["month", "src", "dst", "relation", "weight", "sign"]
CPC_HEADER = ["ticker", "cpc", "count"]


def read_edge_records(path: str) -> List[EdgeRecord]:
    """Load edges.csv (month,src,dst,relation,weight,sign)."""
    records: List[EdgeRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != EDGE_HEADER:
            raise DataError(f"{path}: expected header {','.join(EDGE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(
                    EdgeRecord(
                        month=row["month"],
                        src=row["src"],
                        dst=row["dst"],
                        kind=RelationKind.from_name(row["relation"]),
                        weight=float(row["weight"]),
                        sign=int(row["sign"]),
                    )
                )
            except (DataError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return records


def read_cpc_profiles(path: str) -> List[CpcProfile]:
    """Load cpc.csv (ticker,cpc,count) into one profile per ticker."""
    counts: Dict[str, Dict[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != CPC_HEADER:
            raise DataError(f"{path}: expected header {','.join(CPC_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                n = int(row["count"])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad count {row['count']!r}") from None
            counts.setdefault(row["ticker"], {})
            code = row["cpc"]
            counts[row["ticker"]][code] = counts[row["ticker"]].get(code, 0) + n
    return [CpcProfile(firm=t, counts=c) for t, c in sorted(counts.items())]


def write_snapshot(s: GraphSnapshot, path: str) -> None:
    """Export one snapshot's aggregated layers in edges.csv format.

    Rows are sorted by (src, dst, relation) so exports are byte-reproducible.
    Symmetric layers are written once per unordered pair (src < dst);
    build_snapshot mirrors them on ingest, so export/ingest round-trips the
    aggregated weights exactly.
    """
    rows = []
    for kind in RelationKind:
        for (src, dst), v in s.raw_layer(kind).items():
            if kind in SYMMETRIC_KINDS and src > dst:
                continue
            rows.append((src, dst, kind.value, abs(v), 1 if v > 0 else -1))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EDGE_HEADER)
        for src, dst, rel, weight, sign in rows:
            writer.writerow([s.month, src, dst, rel, repr(weight), sign])
