"""Authoring bindings for constraint-network topology documents.

Build an experiment model in Python and emit it as a canonical JSON
document for the federation core::

    import xir
    from xir import Topology, select, choice, eq, lt, gt

    topo = Topology()
    breaker = topo.node({
        'name': 'breaker',
        'image': select('riot'),
        'memory': {'capacity': gt(xir.mB(256))},
    })
    hub = topo.node({'name': 'hub', 'image': choice([select('debian-9'), select('ubuntu-snap')])})
    topo.connect([breaker, hub], {'stack': eq('zigbee'), 'bandwidth': lt(xir.kbps(100))})
    print(topo.finalize())

The bindings are a pure document generator: no network calls, no core
dependency.  Output is canonical (sorted keys, no whitespace, integers in
base units, string-sets as sorted arrays) and byte-stable across runs.
"""

from __future__ import annotations

import json
from fractions import Fraction

__all__ = [
    "Topology",
    "eq", "lt", "gt", "le", "ge", "select", "choice",
    "mB", "gB", "kbps", "mbps", "gbps", "percent", "ms",
]


class BuildError(ValueError):
    """Invalid model construction (duplicate name, bad operand, ...)."""


# -- unit helpers (magnitudes become integers in base units) --------------------


def _scale(magnitude, factor: int, what: str) -> int:
    if isinstance(magnitude, bool) or not isinstance(magnitude, (int, float)):
        raise BuildError(f"{what} takes a number, not {type(magnitude).__name__}")
    if magnitude < 0:
        raise BuildError(f"{what} must be non-negative")
    exact = Fraction(str(magnitude)) * factor
    if exact.denominator != 1:
        raise BuildError(f"{magnitude} is not a whole number of {what} base units")
    return int(exact)


def mB(n) -> int:
    """Mebibytes to bytes."""
    return _scale(n, 2**20, "mB")


def gB(n) -> int:
    """Gibibytes to bytes."""
    return _scale(n, 2**30, "gB")


def kbps(n) -> int:
    return _scale(n, 10**3, "kbps")


def mbps(n) -> int:
    return _scale(n, 10**6, "mbps")


def gbps(n) -> int:
    return _scale(n, 10**9, "gbps")


def percent(n) -> int:
    """Percentage to parts per million."""
    return _scale(n, 10**4, "percent")


def ms(n) -> int:
    """Milliseconds to microseconds."""
    return _scale(n, 10**3, "ms")


# -- constraint helpers ----------------------------------------------------------


def _int_operand(op: str, value) -> dict:
    if isinstance(value, bool) or not isinstance(value, int):
        raise BuildError(f"{op} takes an integer operand")
    return {"op": op, "value": value}


def eq(value) -> dict:
    return {"op": "eq", "value": _encode(value, "eq operand")}


def lt(value) -> dict:
    return _int_operand("lt", value)


def gt(value) -> dict:
    return _int_operand("gt", value)


def le(value) -> dict:
    return _int_operand("le", value)


def ge(value) -> dict:
    return _int_operand("ge", value)


def select(value) -> dict:
    if not isinstance(value, str) or not value:
        raise BuildError("select takes a non-empty string")
    return {"op": "select", "value": value}


def choice(alternatives) -> dict:
    alts = list(alternatives)
    if not alts:
        raise BuildError("choice needs at least one alternative")
    for alt in alts:
        if not (isinstance(alt, dict) and "op" in alt):
            raise BuildError("choice alternatives must be constraints")
        if alt["op"] == "choice":
            raise BuildError("choice alternatives may not nest choice")
    return {"op": "choice", "value": alts}


# -- value encoding -----------------------------------------------------------------


def _encode(value, where: str):
    if isinstance(value, bool):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise BuildError(f"{where}: floats are not allowed; use the unit helpers")
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple, set, frozenset)):
        members = list(value)
        if not members or not all(isinstance(m, str) for m in members):
            raise BuildError(f"{where}: string-sets must be non-empty strings")
        if len(set(members)) != len(members):
            raise BuildError(f"{where}: string-set members must be unique")
        return sorted(members)
    if isinstance(value, dict):
        if "op" in value:
            return value  # already an encoded constraint
        return {k: _encode(v, f"{where}.{k}") for k, v in value.items()}
    raise BuildError(f"{where}: unsupported value {type(value).__name__}")


class _Handle:
    def __init__(self, name: str, topo: "Topology"):
        self.name = name
        self._topo = topo

    def __repr__(self):
        return f"<node {self.name}>"


class Topology:
    """Accumulates nodes and links, then emits the canonical document."""

    def __init__(self):
        self._nodes: dict[str, dict] = {}
        self._links: list[dict] = []
        self._link_ids: set = set()

    def node(self, props: dict) -> _Handle:
        """Register a node; its id is the required ``name`` property."""
        if not isinstance(props, dict) or "name" not in props:
            raise BuildError("node props must include a 'name'")
        name = props["name"]
        if not isinstance(name, str) or not name:
            raise BuildError("node name must be a non-empty string")
        if name in self._nodes:
            raise BuildError(f"duplicate node name {name!r}")
        rest = {k: _encode(v, f"{name}.{k}") for k, v in props.items() if k != "name"}
        self._nodes[name] = {"id": name, "props": rest}
        return _Handle(name, self)

    def connect(self, nodes, props: dict | None = None) -> str:
        """Join exactly two registered nodes; the link id is ``a~b``."""
        ends = list(nodes)
        if len(ends) != 2:
            raise BuildError(f"connect takes exactly two nodes, got {len(ends)}")
        names = []
        for h in ends:
            name = h.name if isinstance(h, _Handle) else h
            if name not in self._nodes:
                raise BuildError(f"connect: {name!r} is not a registered node")
            names.append(name)
        if names[0] == names[1]:
            raise BuildError("connect: a link needs two distinct nodes")
        link_id = f"{names[0]}~{names[1]}"
        if link_id in self._link_ids:
            raise BuildError(f"duplicate link {link_id!r}")
        self._link_ids.add(link_id)
        encoded = {k: _encode(v, f"{link_id}.{k}") for k, v in (props or {}).items()}
        self._links.append({"id": link_id, "endpoints": names, "props": encoded})
        return link_id

    def document(self) -> dict:
        return {
            "role": "experiment",
            "nodes": list(self._nodes.values()),
            "links": list(self._links),
        }

    def finalize(self) -> str:
        """Canonical single-line JSON; byte-stable for identical models."""
        return json.dumps(
            self.document(), sort_keys=True, separators=(",", ":"), ensure_ascii=True
        )

    def write(self, path: str | None = None) -> None:
        """Write the document (plus newline) to a file, or stdout."""
        text = self.finalize() + "\n"
        if path is None:
            import sys

            sys.stdout.write(text)
        else:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
