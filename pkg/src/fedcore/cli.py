"""Thin command-line client for the core service.

Exit codes: 0 ok, 2 usage, 3 unrealizable, 4 conflict, 5 transport
failure, 1 anything else.  ``--json`` prints the raw result in canonical
form for scripting.
"""

from __future__ import annotations

import json
import sys
import time

import click
import httpx

from .model import canonical_dumps

EXIT_UNREALIZABLE = 3
EXIT_CONFLICT = 4
EXIT_TRANSPORT = 5

TERMINAL_STATES = ("materialized", "degraded", "dematerialized")


class RemoteError(Exception):
    def __init__(self, code: int, message: str, data=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data


class Client:
    def __init__(self, server: str):
        self.server = server.rstrip("/")
        self._http = httpx.Client(timeout=60.0)
        self._next_id = 0

    def call(self, method: str, params: dict | None = None):
        self._next_id += 1
        req = {"id": self._next_id, "method": method, "params": params or {}}
        try:
            resp = self._http.post(f"{self.server}/rpc", content=canonical_dumps(req))
            body = resp.json()
        except (httpx.TransportError, ValueError) as e:
            click.echo(f"transport failure: {e}", err=True)
            sys.exit(EXIT_TRANSPORT)
        if "error" in body:
            err = body["error"]
            raise RemoteError(err.get("code", 500), err.get("message", ""), err.get("data"))
        return body["result"]


def _fail(e: RemoteError):
    click.echo(f"error ({e.code}): {e.message}", err=True)
    if e.code == 422:
        data = e.data or {}
        counts = data.get("candidates") if isinstance(data, dict) else None
        if counts:
            click.echo("candidates per node:", err=True)
            for node, count in sorted(counts.items()):
                marker = " <-- no match" if count == 0 else ""
                click.echo(f"  {node}: {count}{marker}", err=True)
        sys.exit(EXIT_UNREALIZABLE)
    if e.code == 409:
        sys.exit(EXIT_CONFLICT)
    sys.exit(1)


def _emit(ctx, result, human: str | None = None):
    if ctx.obj["json"]:
        click.echo(canonical_dumps(result))
    else:
        click.echo(human if human is not None else canonical_dumps(result))


def _load_doc(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@click.group()
@click.option("--server", "-S", envvar="FEDCORE_SERVER", default="http://127.0.0.1:4747")
@click.option("--json", "json_out", is_flag=True, help="machine-readable output")
@click.pass_context
def main(ctx, server, json_out):
    """Client for the testbed federation core."""
    ctx.ensure_object(dict)
    ctx.obj["client"] = Client(server)
    ctx.obj["json"] = json_out


@main.command()
@click.option("-f", "--file", "path", required=True, type=click.Path(exists=True))
@click.pass_context
def discover(ctx, path):
    """Candidate resources for each node of an experiment."""
    try:
        result = ctx.obj["client"].call("discover", {"experiment": _load_doc(path)})
    except RemoteError as e:
        _fail(e)
    lines = [f"watermark {result['watermark']}"]
    for node, uuids in sorted(result["entries"].items()):
        lines.append(f"  {node}: {len(uuids)} candidate(s)")
    _emit(ctx, result, "\n".join(lines))


@main.command()
@click.option("-f", "--file", "path", required=True, type=click.Path(exists=True))
@click.option("-n", "--name", default=None, help="experiment id (default: file stem)")
@click.option("--engine", type=click.Choice(["greedy", "complete"]), default=None)
@click.option("--seed", type=int, default=0)
@click.pass_context
def realize(ctx, path, name, engine, seed):
    """Embed an experiment onto the resource pool."""
    import pathlib

    name = name or pathlib.Path(path).stem
    params = {"id": name, "experiment": _load_doc(path), "seed": seed}
    if engine:
        params["engine"] = engine
    try:
        result = ctx.obj["client"].call("realize", params)
    except RemoteError as e:
        _fail(e)
    human = [f"realized {result['experiment']} at watermark {result['watermark']}"]
    for node, uuid in sorted(result["node_map"].items()):
        human.append(f"  {node} -> {uuid}")
    for link, segs in sorted(result["link_map"].items()):
        human.append(f"  {link} -> {len(segs)} segment(s)")
    _emit(ctx, result, "\n".join(human))


@main.command()
@click.argument("rid")
@click.pass_context
def reserve(ctx, rid):
    """Reserve the resources of a computed realization."""
    try:
        result = ctx.obj["client"].call("reserve", {"id": rid})
    except RemoteError as e:
        _fail(e)
    _emit(ctx, result, f"{rid}: reserved")


@main.command()
@click.argument("rid")
@click.pass_context
def materialize(ctx, rid):
    """Start provisioning a reserved realization."""
    try:
        result = ctx.obj["client"].call("materialize", {"id": rid})
    except RemoteError as e:
        _fail(e)
    _emit(ctx, result, f"{rid}: materializing {result['entries']} resource(s)")


@main.command()
@click.argument("eid")
@click.option("--watch", is_flag=True, help="poll until a terminal state")
@click.option("--interval", type=float, default=0.5)
@click.pass_context
def status(ctx, eid, watch, interval):
    """Experiment lifecycle state."""
    client = ctx.obj["client"]
    while True:
        try:
            result = client.call("status", {"id": eid})
        except RemoteError as e:
            _fail(e)
        progress = result.get("progress")
        human = f"{eid}: {result['state']}"
        if progress:
            human += f" ({progress['configured']}/{progress['total']} configured)"
        _emit(ctx, result, human)
        if not watch or result["state"] in TERMINAL_STATES:
            return
        time.sleep(interval)


@main.command()
@click.argument("eid")
@click.pass_context
def demat(ctx, eid):
    """Dematerialize an experiment and free its resources."""
    try:
        result = ctx.obj["client"].call("dematerialize", {"id": eid})
    except RemoteError as e:
        _fail(e)
    _emit(ctx, result, f"{eid}: {result['status']}")


@main.command()
@click.option("-s", "--site", required=True)
@click.option("-f", "--file", "path", required=True, type=click.Path(exists=True))
@click.option("--endpoint", default=None)
@click.option("--mechanisms", default=None, help="comma-separated isolation mechanisms")
@click.pass_context
def commission(ctx, site, path, endpoint, mechanisms):
    """Add a resource network to a site."""
    params = {"site": site, "network": _load_doc(path)}
    if endpoint:
        params["endpoint"] = endpoint
    if mechanisms:
        params["mechanisms"] = [m.strip() for m in mechanisms.split(",") if m.strip()]
    try:
        result = ctx.obj["client"].call("commission", params)
    except RemoteError as e:
        _fail(e)
    _emit(ctx, result, f"commissioned {len(result['uuids'])} resource(s) at {site}")


@main.command()
@click.option("-s", "--site", required=True)
@click.option("--nodes", default="", help="comma-separated node ids to remove")
@click.option("--mode", type=click.Choice(["simple", "fragmented"]), default="simple")
@click.option("--replacement", type=click.Path(exists=True), default=None)
@click.option("--force", is_flag=True)
@click.pass_context
def decommission(ctx, site, nodes, mode, replacement, force):
    """Remove resources from a site."""
    params = {
        "site": site,
        "mode": mode,
        "nodes": [n.strip() for n in nodes.split(",") if n.strip()],
        "force": force,
    }
    if replacement:
        params["replacement"] = _load_doc(replacement)
    try:
        result = ctx.obj["client"].call("decommission", params)
    except RemoteError as e:
        _fail(e)
    _emit(ctx, result, f"decommissioned at {site}")


@main.command()
@click.pass_context
def sites(ctx):
    """List commissioned sites."""
    try:
        result = ctx.obj["client"].call("sites.list", {})
    except RemoteError as e:
        _fail(e)
    human = [
        f"{s['id']}: {s['nodes']} node(s), {s['links']} link(s) via {s['endpoint']}"
        for s in result["sites"]
    ]
    _emit(ctx, result, "\n".join(human) if human else "no sites")


@main.command()
@click.pass_context
def experiments(ctx):
    """List known experiments."""
    try:
        result = ctx.obj["client"].call("experiments.list", {})
    except RemoteError as e:
        _fail(e)
    human = [f"{e['id']}: {e['phase']}" for e in result["experiments"]]
    _emit(ctx, result, "\n".join(human) if human else "no experiments")


if __name__ == "__main__":
    main()
