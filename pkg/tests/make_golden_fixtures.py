"""Regenerate the wire-protocol golden fixtures under frontend/test/golden/.

Run as ``python3 -m tests.make_golden_fixtures`` from the repository root.
The requests come from the host's own context trimming and serialization;
the responses are the Python reference client's heuristic output at decay
0.5. Both client implementations must reproduce responses.jsonl byte for
byte, so regenerate only when the protocol itself changes.
"""

import json
import os

from marketripple.diffusion import Event, serialize_request
from marketripple.graph import EdgeRecord, RelationKind, build_snapshot
from marketripple.host import trim_context
from marketripple.mockclient import heuristic_response

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "..", "frontend", "test", "golden")
DECAY = 0.5


def fixture_snapshot():
    month = "2021-03"

    def e(src, dst, kind, weight, sign=1):
        return EdgeRecord(month=month, src=src, dst=dst, kind=kind, weight=weight, sign=sign)

    return build_snapshot(
        [
            e("ACME", "BOLT", RelationKind.SUPPLY_CHAIN, 10.0),
            e("ACME", "CORE", RelationKind.SUPPLY_CHAIN, 5.0),
            e("BOLT", "DYNE", RelationKind.SUPPLY_CHAIN, 2.5),
            e("ACME", "DYNE", RelationKind.LEADERSHIP, 3.0),
            e("CORE", "EDGE", RelationKind.LEADERSHIP, 1.0, sign=-1),
            e("BOLT", "EDGE", RelationKind.FUND_HOLDING, 4.0),
            e("ACME", "FUSE", RelationKind.TECHNICAL, 0.8),
            e("DYNE", "FUSE", RelationKind.TECHNICAL, 0.4, sign=-1),
            e("GRID", "HALO", RelationKind.SUPPLY_CHAIN, 7.0),
        ]
    )


def fixture_events():
    return [
        Event("g0001", "2021-03-05T08:30:00", ("ACME",), "Supply agreement", "ACME signs."),
        Event("g0002", "2021-03-09T10:00:00", ("BOLT", "CORE"), "Joint venture", "Two firms."),
        Event("g0003", "2021-03-12T07:45:00", ("GRID",), "Outage", "GRID plant halt."),
        Event("g0004", "2021-03-18T12:00:00", ("FUSE",), "Patent grant", "FUSE wins."),
        Event("g0005", "2021-03-23T09:15:00", ("EDGE", "ACME"), "Board change", "Names."),
        Event("g0006", "2021-03-29T16:20:00", ("HALO",), "Recall", "HALO recalls."),
    ]


def main() -> None:
    snapshot = fixture_snapshot()
    os.makedirs(GOLDEN_DIR, exist_ok=True)
    requests = []
    responses = []
    for event in fixture_events():
        context = trim_context(snapshot, list(event.company_codes))
        request_line = serialize_request(event, context[0], context[1])
        requests.append(request_line)
        responses.append(heuristic_response(json.loads(request_line), DECAY))
    with open(os.path.join(GOLDEN_DIR, "requests.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(requests) + "\n")
    with open(os.path.join(GOLDEN_DIR, "responses.jsonl"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(responses) + "\n")
    print(f"wrote {len(requests)} request/response pairs to {os.path.abspath(GOLDEN_DIR)}")


if __name__ == "__main__":
    main()
