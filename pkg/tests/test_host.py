import json
import sys

import pytest

from marketripple.diffusion import (
    CLIENT_DIED,
    EMPTY_OUTPUT,
    TIMEOUT,
    Event,
    PredictionSet,
    Refusal,
)
from marketripple.errors import ClientDead
from marketripple.evaluation import refusal_stats
from marketripple.graph import EdgeRecord, RelationKind, build_snapshot
from marketripple.host import ExternalClient, run_external, trim_context

M = "2020-01"


def edge(src, dst, kind=RelationKind.SUPPLY_CHAIN, weight=1.0, sign=1):
    return EdgeRecord(month=M, src=src, dst=dst, kind=kind, weight=weight, sign=sign)


def snapshot():
    return build_snapshot(
        [
            edge("AAA", "BBB", weight=1.0),
            edge("BBB", "CCC", weight=0.5),
            edge("CCC", "DDD", weight=0.25),
            edge("DDD", "EEE", weight=0.25),  # three hops out, beyond context
        ],
        layer_weights={RelationKind.SUPPLY_CHAIN: 1.0},
    )


def event(*codes, id="e1"):
    return Event(id=id, datetime="2020-01-10T08:00:00", company_codes=tuple(codes))


def mock_cmd(*args):
    return [sys.executable, "-m", "marketripple.mockclient", *args]


class TestTrimContext:
    def test_two_hop_neighborhood(self):
        firms, edges = trim_context(snapshot(), ["AAA"])
        assert firms == ["AAA", "BBB", "CCC"]
        assert all(src in firms and dst in firms for src, dst, _, _ in edges)

    def test_edge_budget_keeps_strongest(self):
        firms, edges = trim_context(snapshot(), ["AAA"], edge_budget=1)
        assert len(edges) == 1
        assert edges[0][:2] == ("AAA", "BBB")

    def test_rows_sorted_for_determinism(self):
        _, edges = trim_context(snapshot(), ["AAA"])
        assert edges == sorted(edges, key=lambda r: (r[0], r[1], r[2]))


class TestExternalRoundTrip:
    def test_heuristic_claims_seed_and_neighbor(self):
        with ExternalClient(mock_cmd("--mode", "heuristic", "--decay", "0.5")) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            result = run_external(client, event("AAA"), ctx, timeout=10.0)
        assert isinstance(result, PredictionSet)
        names = {c.name: c.impact_score for c in result.claims}
        assert names["AAA"] == 8
        # neighbor BBB gets round(8 * 0.5 * 1.0) = 4
        assert names["BBB"] == 4

    def test_zero_edges_context_claims_only_seeds(self):
        s = build_snapshot([edge("AAA", "BBB")], layer_weights={RelationKind.SUPPLY_CHAIN: 0.0})
        with ExternalClient(mock_cmd()) as client:
            ctx = trim_context(s, ["AAA"])
            result = run_external(client, event("AAA"), ctx, timeout=10.0)
        assert isinstance(result, PredictionSet)
        assert [c.name for c in result.claims] == ["AAA"]

    def test_timeout_refusal(self):
        with ExternalClient(mock_cmd("--delay-ms", "3000")) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            result = run_external(client, event("AAA"), ctx, timeout=0.3)
        assert isinstance(result, Refusal) and result.reason == TIMEOUT

    def test_chaos_full_rate_all_refused(self):
        with ExternalClient(mock_cmd("--mode", "chaos", "--chaos-rate", "1.0")) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            outcomes = [
                run_external(client, event("AAA", id=f"e{i}"), ctx, timeout=10.0)
                for i in range(20)
            ]
        stats = refusal_stats(outcomes)
        assert stats.rate == 1.0

    def test_chaos_partial_rate(self):
        with ExternalClient(mock_cmd("--mode", "chaos", "--chaos-rate", "0.3")) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            outcomes = [
                run_external(client, event("AAA", id=f"e{i}"), ctx, timeout=10.0)
                for i in range(100)
            ]
        stats = refusal_stats(outcomes)
        assert stats.rate == pytest.approx(0.3, abs=0.05)

    def test_malformed_request_gets_empty_line_refusal(self):
        with ExternalClient(mock_cmd()) as client:
            client.send("this is not json")
            line = client.next_line(__import__("time").monotonic() + 5.0)
        assert line == ""
        from marketripple.diffusion import parse_prediction

        refusal = parse_prediction(line)
        assert isinstance(refusal, Refusal) and refusal.reason == EMPTY_OUTPUT

    def test_dead_client_raises_on_send(self):
        client = ExternalClient([sys.executable, "-c", "pass"])
        import time

        time.sleep(0.5)
        with pytest.raises(ClientDead):
            client.send("x")
            client.send("y")  # first write may land in the pipe buffer
            time.sleep(0.5)
            client.send("z")
        client.close()

    def test_client_exit_mid_request_refuses(self):
        with ExternalClient(
            [sys.executable, "-c", "import sys; sys.stdin.readline(); sys.exit(0)"]
        ) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            result = run_external(client, event("AAA"), ctx, timeout=5.0)
        assert isinstance(result, Refusal) and result.reason == CLIENT_DIED

    def test_stale_response_discarded_after_timeout(self):
        # the first request times out; its late response must not be matched
        # to the second request
        with ExternalClient(mock_cmd("--delay-ms", "700")) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            first = run_external(client, event("AAA", id="early"), ctx, timeout=0.1)
            assert isinstance(first, Refusal) and first.reason == TIMEOUT
            second = run_external(client, event("BBB", id="late"), ctx, timeout=10.0)
        assert isinstance(second, PredictionSet)
        assert second.event_id == "late"

    def test_golden_echo_replays_fixture(self, tmp_path):
        fixture = {
            "id": "e1",
            "impact_analysis": {
                "affected_companies": [
                    {"name": "AAA", "impact_type": "positive", "impact_score": 8}
                ],
                "analysis": "fixed",
            },
        }
        path = tmp_path / "fixtures.jsonl"
        path.write_text(json.dumps(fixture, separators=(",", ":")) + "\n")
        with ExternalClient(
            mock_cmd("--mode", "golden-echo", "--fixtures", str(path))
        ) as client:
            ctx = trim_context(snapshot(), ["AAA"])
            result = run_external(client, event("AAA"), ctx, timeout=10.0)
        assert isinstance(result, PredictionSet)
        assert result.analysis == "fixed"
