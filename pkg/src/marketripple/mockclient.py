"""Reference client for the external-propagator protocol, in Python.

Runs as ``python -m marketripple.mockclient``. Three modes:

* ``heuristic``  - seeds claim +8; one-hop context neighbors claim a decayed,
  rounded share of the seed score.
* ``golden-echo`` - replays fixture responses by request id, byte for byte.
* ``chaos``      - corrupts a fixed fraction of otherwise-heuristic
  responses (truncation, out-of-range score, wrong top-level key, in
  rotation) for refusal-rate testing.

The host treats any malformed request as our problem, so we reply with an
empty line (which the host refuses) and keep serving. The heuristic output
is the golden reference the TypeScript client must match byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from typing import Dict, List, Optional


def round_half_away(x: float) -> int:
    """Deterministic rounding shared with the TypeScript client."""
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def heuristic_response(request: dict, decay: float) -> str:
    event = request["event"]
    seeds = list(dict.fromkeys(event.get("company_codes", [])))
    context = request.get("context", {})
    edges = context.get("edges", [])

    flow: Dict[str, float] = {}
    for edge in edges:
        src, dst, _rel, mu = edge[0], edge[1], edge[2], float(edge[3])
        if src in seeds and dst not in seeds:
            flow[dst] = flow.get(dst, 0.0) + mu

    companies: List[dict] = []
    for seed in seeds:
        companies.append({"name": seed, "impact_type": "positive", "impact_score": 8})
    for name in sorted(flow):
        score = round_half_away(8.0 * decay * flow[name])
        score = max(-10, min(10, score))
        if score == 0:
            continue
        companies.append(
            {
                "name": name,
                "impact_type": "positive" if score > 0 else "negative",
                "impact_score": score,
            }
        )
    payload = {
        "id": request["id"],
        "impact_analysis": {
            "affected_companies": companies,
            "analysis": f"Heuristic propagation from {len(seeds)} seed firms "
            f"to {len(companies) - len(seeds)} neighbors.",
        },
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def corrupt(line: str, kind: int) -> str:
    if kind == 1:
        out = line.replace('"impact_score":8', '"impact_score":15', 1)
        if out != line:
            return out
    elif kind == 2:
        return line.replace('"impact_analysis"', '"impactAnalysis"', 1)
    return line[: len(line) // 2]


def serve(args: argparse.Namespace) -> int:
    fixtures: Dict[str, str] = {}
    if args.mode == "golden-echo":
        if not args.fixtures:
            print("golden-echo mode needs --fixtures", file=sys.stderr)
            return 2
        with open(args.fixtures, encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                fixtures[str(json.loads(raw)["id"])] = raw

    served = 0
    corrupted = 0
    for raw in sys.stdin:
        raw = raw.strip()
        if args.delay_ms > 0:
            time.sleep(args.delay_ms / 1000.0)
        try:
            request = json.loads(raw)
            rid = request["id"]
        except (json.JSONDecodeError, KeyError, TypeError):
            sys.stdout.write("\n")
            sys.stdout.flush()
            continue
        if args.mode == "golden-echo":
            line = fixtures.get(str(rid), "")
        else:
            line = heuristic_response(request, args.decay)
            if args.mode == "chaos":
                before = math.floor(served * args.chaos_rate)
                after = math.floor((served + 1) * args.chaos_rate)
                if after > before:
                    line = corrupt(line, corrupted % 3)
                    corrupted += 1
        served += 1
        sys.stdout.write(line + "\n")
        sys.stdout.flush()
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="marketripple-mockclient", description=__doc__.splitlines()[0]
    )
    parser.add_argument(
        "--mode", choices=["heuristic", "golden-echo", "chaos"], default="heuristic"
    )
    parser.add_argument("--decay", type=float, default=0.5)
    parser.add_argument("--chaos-rate", type=float, default=0.0, dest="chaos_rate")
    parser.add_argument("--delay-ms", type=int, default=0, dest="delay_ms")
    parser.add_argument("--fixtures", default=None)
    args = parser.parse_args(argv)
    if not 0.0 <= args.chaos_rate <= 1.0:
        parser.error("--chaos-rate must be in [0,1]")
    return serve(args)


if __name__ == "__main__":
    sys.exit(main())
