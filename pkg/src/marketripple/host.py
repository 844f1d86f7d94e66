"""Subprocess host for external propagator clients.

Clients speak a line-delimited JSON protocol over stdin/stdout: one request
line in, one response line out, matched by id. Requests to one child process
are serialized. A late or malformed response becomes a Refusal for that
request; a dead pipe raises ClientDead and aborts the batch.
"""

from __future__ import annotations

import logging
import queue
import shlex
import subprocess
import threading
import time
from typing import List, Optional, Sequence, Tuple, Union

from .diffusion import (
    CLIENT_DIED,
    TIMEOUT,
    Event,
    PredictionSet,
    Refusal,
    parse_prediction,
    serialize_request,
)
from .errors import ClientDead
from .graph import FirmId, GraphSnapshot, k_hop_neighborhood

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_EDGE_BUDGET = 500
CONTEXT_HOPS = 2


def trim_context(
    snapshot: GraphSnapshot,
    seeds: Sequence[FirmId],
    hops: int = CONTEXT_HOPS,
    edge_budget: int = DEFAULT_EDGE_BUDGET,
) -> Tuple[List[FirmId], List[Tuple[str, str, str, float]]]:
    """Two-hop neighborhood view around the seeds, capped by an edge budget.

    Edges are ranked by contribution magnitude for the cut, then listed in
    (src, dst, relation) order so the request payload is deterministic.
    """
    present = [s for s in seeds if s in snapshot.firms]
    neighborhood = k_hop_neighborhood(snapshot, present, hops)
    rows: List[Tuple[str, str, str, float]] = []
    for kind in snapshot.kinds:
        for (src, dst), v in snapshot.layer_contribution(kind).items():
            if src in neighborhood and dst in neighborhood:
                rows.append((src, dst, kind.value, v))
    rows.sort(key=lambda r: (-abs(r[3]), r[0], r[1], r[2]))
    rows = rows[:edge_budget]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return sorted(neighborhood), rows


class ExternalClient:
    """One child process plus a reader thread feeding a line queue."""

    _EOF = object()

    def __init__(self, command: Union[str, Sequence[str]], timeout: float = DEFAULT_TIMEOUT):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        self.timeout = timeout
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines: "queue.Queue" = queue.Queue()
        self._dead = False
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(self._EOF)

    @property
    def alive(self) -> bool:
        return not self._dead and self._proc.poll() is None

    def send(self, line: str) -> None:
        if self._dead:
            raise ClientDead(f"client {self.command[0]} is gone")
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._dead = True
            raise ClientDead(f"client {self.command[0]}: {exc}") from None

    def next_line(self, deadline: float) -> Optional[str]:
        """Next stdout line before the deadline; None on timeout."""
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return None
        try:
            item = self._lines.get(timeout=remaining)
        except queue.Empty:
            return None
        if item is self._EOF:
            self._dead = True
            return None
        return item

    def close(self) -> None:
        self._dead = True
        if self._proc.poll() is None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ExternalClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_external(
    client: ExternalClient,
    event: Event,
    context: Tuple[List[FirmId], List[Tuple[str, str, str, float]]],
    timeout: Optional[float] = None,
) -> Union[PredictionSet, Refusal]:
    """One request/response round trip for one event.

    Responses carrying a stale id (left over from an earlier timeout) are
    discarded. A line that fails to parse at all is treated as this event's
    response and refused by the schema parser.
    """
    firms, edges = context
    request = serialize_request(event, firms, edges)
    client.send(request)
    deadline = time.monotonic() + (timeout if timeout is not None else client.timeout)
    while True:
        line = client.next_line(deadline)
        if line is None:
            if not client.alive:
                return Refusal(CLIENT_DIED, "client exited mid-request")
            return Refusal(TIMEOUT, f"{event.id} exceeded {timeout or client.timeout}s")
        result = parse_prediction(line, event_id=event.id)
        if isinstance(result, PredictionSet) and result.event_id != event.id:
            log.warning("discarding stale response id=%s (want %s)", result.event_id, event.id)
            continue
        if isinstance(result, PredictionSet):
            return result
        return result


def external_propagator(
    client: ExternalClient,
    hops: int = CONTEXT_HOPS,
    edge_budget: int = DEFAULT_EDGE_BUDGET,
    timeout: Optional[float] = None,
):
    """Adapter giving the evaluation loop a (event, snapshot) callable."""

    def predict(event: Event, snapshot: GraphSnapshot) -> Union[PredictionSet, Refusal]:
        context = trim_context(snapshot, list(event.company_codes), hops, edge_budget)
        return run_external(client, event, context, timeout)

    return predict
