"""The golden lifecycle transcript: request list, prologue, and replay.

The journal snapshot taken after the prologue is the replay baseline; the
transcript itself runs commission -> discover -> realize -> reserve ->
materialize -> status -> dematerialize against a service restored from
that journal, and every response must come back byte-identical.
"""

from __future__ import annotations

from fedcore.model import canonical_dumps

from .conftest import IOT_POOL
from .fixtures import IOT_PAIR

PROLOGUE_POOL = {
    "role": "resource",
    "nodes": [
        {"id": "store0", "props": {"cores": 8, "image": ["alpine"]}, "alloc": "exclusive"},
        {"id": "store1", "props": {"cores": 8, "image": ["alpine"]}, "alloc": "exclusive"},
    ],
    "links": [
        {"id": "trunk", "endpoints": ["store0", "store1"], "props": {"latency": 400}, "capacity_bps": 10**9}
    ],
}


def run_prologue(core) -> None:
    core.call("commission", {"site": "base", "network": PROLOGUE_POOL})


REQUESTS = [
    ("commission", {"site": "edge", "network": IOT_POOL}),
    ("discover", {"experiment": IOT_PAIR}),
    ("realize", {"id": "demo", "experiment": IOT_PAIR, "engine": "complete"}),
    ("reserve", {"id": "demo"}),
    ("materialize", {"id": "demo"}),
    ("agents.run", {}),
    ("status", {"id": "demo"}),
    ("sites.list", {}),
    ("experiments.list", {}),
    ("dematerialize", {"id": "demo"}),
    ("agents.run", {}),
    ("status", {"id": "demo"}),
]


def request_lines() -> list:
    return [
        canonical_dumps({"id": i + 1, "method": method, "params": params})
        for i, (method, params) in enumerate(REQUESTS)
    ]


def replay(http_client, lines: list) -> bytes:
    """POST each raw request line to /rpc and concatenate response bytes."""
    out = []
    for line in lines:
        resp = http_client.post("/rpc", content=line)
        assert resp.status_code == 200
        out.append(resp.content)
    return b"\n".join(out) + b"\n"
