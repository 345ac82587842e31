"""Newline-delimited JSON query service over standard streams or a local TCP socket."""

from __future__ import annotations

import json
import socketserver
import sys
import time
from typing import IO

from .errors import DataError, EmptyQuery
from .pipeline import Retriever


def handle_request(retriever: Retriever, line: str) -> dict:
    """One request line -> one response object. Never raises on bad input."""
    t0 = time.perf_counter()
    try:
        req = json.loads(line)
    except json.JSONDecodeError as e:
        return {"error": f"invalid JSON: {e.msg}"}
    if not isinstance(req, dict):
        return {"error": "request must be a JSON object"}
    query = req.get("query")
    if not isinstance(query, str):
        return {"error": "field 'query' must be a string"}
    k = req.get("k", 10)
    beam = req.get("beam")
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        return {"error": "field 'k' must be a positive integer"}
    if beam is not None and (isinstance(beam, bool) or not isinstance(beam, int) or beam < 1):
        return {"error": "field 'beam' must be a positive integer"}
    try:
        result = retriever.search(query, k=k, beam=beam)
    except (EmptyQuery, DataError) as e:
        return {"error": str(e)}
    vocab = retriever.vocab
    items = [
        {
            "item_id": it.item_id,
            "score": it.score,
            "spans": [vocab.decode(result.spans[j].tokens) for j in it.support],
        }
        for it in result.items
    ]
    return {"items": items, "latency_ms": (time.perf_counter() - t0) * 1000.0}


def serve_stream(retriever: Retriever, inp: IO[str] = sys.stdin, out: IO[str] = sys.stdout) -> int:
    n = 0
    for line in inp:
        if not line.strip():
            continue
        out.write(json.dumps(handle_request(retriever, line)) + "\n")
        out.flush()
        n += 1
    return n


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        retriever = self.server.retriever  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            self.wfile.write((json.dumps(handle_request(retriever, line)) + "\n").encode())
            self.wfile.flush()


class QueryServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, retriever: Retriever, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.retriever = retriever
