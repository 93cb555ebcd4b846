"""Schema-less constraint-network model shared by all core services.

A topology document is a graph whose node/link properties are either
concrete values (resource role: what a provider offers) or constraints
(experiment role: what an experimenter requires).  The JSON form is
canonical: object keys sorted, no insignificant whitespace, integers only
(unit-bearing values are stored in base units: bytes, bits/s, ppm,
microseconds), string-sets encoded as sorted arrays, constraint leaves as
``{"op": ..., "value": ...}``.  ``op`` is a reserved property key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterator, Union

from .errors import ValidationError

CONSTRAINT_OPS = ("eq", "lt", "gt", "le", "ge", "select", "choice")
ORDER_OPS = ("lt", "gt", "le", "ge")

ROLE_EXPERIMENT = "experiment"
ROLE_RESOURCE = "resource"

ALLOC_EXCLUSIVE = "exclusive"
ALLOC_SHARED = "shared"

# Base-unit multipliers per quantity kind.  Memory is binary (mB = 2^20
# bytes), bandwidth/latency/loss are decimal.
UNIT_MULTIPLIERS: dict[str, dict[str, int]] = {
    "memory": {"B": 1, "mB": 2**20, "gB": 2**30},
    "bandwidth": {"bps": 1, "kbps": 10**3, "mbps": 10**6, "gbps": 10**9},
    "loss": {"ppm": 1, "percent": 10**4},
    "latency": {"us": 1, "ms": 10**3, "s": 10**6},
}

# A concrete value: int, str, bool, string-set, or a nested property map.
ConcreteValue = Union[int, str, bool, frozenset, dict]

_MISSING = object()


@dataclass(frozen=True)
class Constraint:
    """A typed requirement over one property.

    ``value`` is a concrete operand for eq/lt/gt/le/ge/select and a tuple
    of alternatives for choice (one level of disjunction only).
    """

    op: str
    value: Any

    def __post_init__(self):
        if self.op not in CONSTRAINT_OPS:
            raise ValidationError(f"unknown constraint op {self.op!r}")
        if self.op in ORDER_OPS:
            if not _is_plain_int(self.value):
                raise ValidationError(f"{self.op} operand must be an integer")
        elif self.op == "choice":
            alts = self.value
            if not isinstance(alts, tuple) or len(alts) < 1:
                raise ValidationError("choice requires at least one alternative")
            for alt in alts:
                if not isinstance(alt, Constraint):
                    raise ValidationError("choice alternatives must be constraints")
                if alt.op == "choice":
                    raise ValidationError("choice alternatives may not nest choice")


@dataclass(frozen=True)
class Node:
    id: str
    props: dict = field(default_factory=dict)
    uuid: str | None = None
    site: str | None = None
    alloc: str | None = None


@dataclass(frozen=True)
class Link:
    id: str
    endpoints: tuple[str, str] = ("", "")
    props: dict = field(default_factory=dict)
    uuid: str | None = None
    capacity_bps: int | None = None


@dataclass(frozen=True)
class Network:
    role: str
    nodes: tuple[Node, ...] = ()
    links: tuple[Link, ...] = ()

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise ValidationError(f"unknown node {node_id!r}")

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise ValidationError(f"unknown link {link_id!r}")


def _is_plain_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def canonical_dumps(obj: Any) -> str:
    """Serialize to the canonical single-line JSON form."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def normalize_unit(kind: str, magnitude, unit: str) -> int:
    """Convert a magnitude in ``unit`` to the base unit of ``kind``.

    Exact integer arithmetic only: fractional inputs are accepted as long
    as the base-unit result is integral (0.5 percent -> 5000 ppm).
    """
    try:
        table = UNIT_MULTIPLIERS[kind]
    except KeyError:
        raise ValidationError(f"unknown quantity kind {kind!r}") from None
    try:
        mult = table[unit]
    except KeyError:
        raise ValidationError(f"unknown {kind} unit {unit!r}") from None
    if isinstance(magnitude, bool) or not isinstance(magnitude, (int, float)):
        raise ValidationError("magnitude must be a number")
    if magnitude < 0:
        raise ValidationError("magnitude must be non-negative")
    exact = Fraction(str(magnitude)) * mult
    if exact.denominator != 1:
        raise ValidationError(
            f"{magnitude} {unit} is not a whole number of base units"
        )
    return int(exact)


# ---------------------------------------------------------------------------
# Constraint satisfaction


def _same_scalar_kind(a: Any, b: Any) -> bool:
    # bool is an int subclass in Python; keep them distinct kinds.
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool)
    return type(a) is type(b)


def _structural_eq(a: Any, b: Any) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        if a.keys() != b.keys():
            return False
        return all(_structural_eq(a[k], b[k]) for k in a)
    if isinstance(a, frozenset) or isinstance(b, frozenset):
        return isinstance(a, frozenset) and isinstance(b, frozenset) and a == b
    if isinstance(a, (dict,)) or isinstance(b, (dict,)):
        return False
    if not _same_scalar_kind(a, b):
        return False
    return a == b


def satisfies(c: Constraint, v: ConcreteValue) -> bool:
    """Whether concrete value ``v`` meets constraint ``c``.

    Total: a type mismatch is False, never an error.
    """
    if isinstance(v, Constraint):
        return False
    if c.op == "eq":
        return _structural_eq(c.value, v)
    if c.op in ORDER_OPS:
        if not _is_plain_int(v):
            return False
        k = c.value
        if c.op == "lt":
            return v < k
        if c.op == "gt":
            return v > k
        if c.op == "le":
            return v <= k
        return v >= k
    if c.op == "select":
        s = c.value
        if not isinstance(s, str):
            return False
        if isinstance(v, frozenset):
            return s in v
        return isinstance(v, str) and v == s
    # choice
    return any(satisfies(alt, v) for alt in c.value)


def iter_requirements(props: dict) -> Iterator[tuple[tuple[str, ...], Any]]:
    """Yield (path, leaf) for every constraint or concrete leaf in ``props``.

    Nested maps are traversed; a concrete leaf stands for an eq constraint.
    """
    for key in sorted(props):
        val = props[key]
        if isinstance(val, dict):
            for path, leaf in iter_requirements(val):
                yield (key, *path), leaf
        else:
            yield (key,), val


def lookup_path(props: dict, path: tuple[str, ...]) -> Any:
    """Value at ``path`` in a property map, or the _MISSING sentinel."""
    cur: Any = props
    for part in path:
        if not isinstance(cur, dict) or part not in cur:
            return _MISSING
        cur = cur[part]
    return cur


def leaf_satisfies(leaf: Any, offered: Any) -> bool:
    if offered is _MISSING:
        return False
    c = leaf if isinstance(leaf, Constraint) else Constraint("eq", leaf)
    return satisfies(c, offered)


def match_props(required: dict, offered: dict) -> bool:
    """Whether ``offered`` satisfies every leaf requirement in ``required``.

    Missing offered paths fail; extra offered paths are ignored.
    """
    for path, leaf in iter_requirements(required):
        if not leaf_satisfies(leaf, lookup_path(offered, path)):
            return False
    return True


# ---------------------------------------------------------------------------
# Parsing / serialization


def _decode_value(obj: Any, where: str, constraints_ok: bool) -> Any:
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        raise ValidationError(f"{where}: non-integer numbers are not allowed")
    if isinstance(obj, str):
        return obj
    if obj is None:
        raise ValidationError(f"{where}: null is not a valid property value")
    if isinstance(obj, list):
        if not obj:
            raise ValidationError(f"{where}: string-sets must be non-empty")
        if not all(isinstance(m, str) for m in obj):
            raise ValidationError(f"{where}: string-set members must be strings")
        members = frozenset(obj)
        if len(members) != len(obj):
            raise ValidationError(f"{where}: string-set members must be unique")
        return members
    if isinstance(obj, dict):
        if "op" in obj:
            if not constraints_ok:
                raise ValidationError(
                    f"{where}: constraints are not allowed in a resource network"
                )
            return _decode_constraint(obj, where)
        return {
            k: _decode_value(v, f"{where}.{k}", constraints_ok)
            for k, v in obj.items()
        }
    raise ValidationError(f"{where}: unsupported property value {type(obj).__name__}")


def _decode_constraint(obj: dict, where: str) -> Constraint:
    extra = set(obj) - {"op", "value"}
    if extra:
        raise ValidationError(f"{where}: unexpected constraint keys {sorted(extra)}")
    op = obj.get("op")
    if op not in CONSTRAINT_OPS:
        raise ValidationError(f"{where}: unknown constraint op {op!r}")
    if "value" not in obj:
        raise ValidationError(f"{where}: constraint missing value")
    raw = obj["value"]
    if op == "choice":
        if not isinstance(raw, list) or not raw:
            raise ValidationError(f"{where}: choice value must be a non-empty array")
        alts = []
        for i, alt in enumerate(raw):
            if not isinstance(alt, dict) or "op" not in alt:
                raise ValidationError(f"{where}[{i}]: choice members must be constraints")
            alts.append(_decode_constraint(alt, f"{where}[{i}]"))
        return Constraint("choice", tuple(alts))
    operand = _decode_value(raw, f"{where}.value", constraints_ok=False)
    return Constraint(op, operand)


def _encode_value(val: Any) -> Any:
    if isinstance(val, Constraint):
        if val.op == "choice":
            return {"op": "choice", "value": [_encode_value(a) for a in val.value]}
        return {"op": val.op, "value": _encode_value(val.value)}
    if isinstance(val, frozenset):
        return sorted(val)
    if isinstance(val, dict):
        return {k: _encode_value(v) for k, v in val.items()}
    return val


def _decode_props(obj: Any, where: str, constraints_ok: bool) -> dict:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: props must be an object")
    return {
        k: _decode_value(v, f"{where}.{k}", constraints_ok) for k, v in obj.items()
    }


def _require_fields(obj: dict, where: str, required: set, optional: set):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing fields {sorted(missing)}")
    extra = set(obj) - required - optional
    if extra:
        raise ValidationError(f"{where}: unexpected fields {sorted(extra)}")


def network_from_obj(obj: Any) -> Network:
    """Validate a decoded JSON object into a Network."""
    _require_fields(obj, "network", {"role", "nodes", "links"}, set())
    role = obj["role"]
    if role not in (ROLE_EXPERIMENT, ROLE_RESOURCE):
        raise ValidationError(f"network: unknown role {role!r}")
    is_resource = role == ROLE_RESOURCE
    constraints_ok = not is_resource

    if not isinstance(obj["nodes"], list) or not isinstance(obj["links"], list):
        raise ValidationError("network: nodes and links must be arrays")

    nodes = []
    seen_ids: set[str] = set()
    for i, raw in enumerate(obj["nodes"]):
        where = f"nodes[{i}]"
        if is_resource:
            _require_fields(raw, where, {"id", "props", "uuid", "site", "alloc"}, set())
        else:
            _require_fields(raw, where, {"id", "props"}, set())
        node_id = raw["id"]
        if not isinstance(node_id, str) or not node_id:
            raise ValidationError(f"{where}: id must be a non-empty string")
        if node_id in seen_ids:
            raise ValidationError(f"{where}: duplicate node id {node_id!r}")
        seen_ids.add(node_id)
        props = _decode_props(raw["props"], f"{where}.props", constraints_ok)
        if is_resource:
            uuid, site, alloc = raw["uuid"], raw["site"], raw["alloc"]
            if not isinstance(uuid, str) or not uuid:
                raise ValidationError(f"{where}: uuid must be a non-empty string")
            if not isinstance(site, str) or not site:
                raise ValidationError(f"{where}: site must be a non-empty string")
            if alloc not in (ALLOC_EXCLUSIVE, ALLOC_SHARED):
                raise ValidationError(f"{where}: alloc must be exclusive or shared")
            nodes.append(Node(node_id, props, uuid=uuid, site=site, alloc=alloc))
        else:
            nodes.append(Node(node_id, props))

    links = []
    seen_link_ids: set[str] = set()
    for i, raw in enumerate(obj["links"]):
        where = f"links[{i}]"
        if is_resource:
            _require_fields(raw, where, {"id", "endpoints", "props", "uuid", "capacity_bps"}, set())
        else:
            _require_fields(raw, where, {"id", "endpoints", "props"}, set())
        link_id = raw["id"]
        if not isinstance(link_id, str) or not link_id:
            raise ValidationError(f"{where}: id must be a non-empty string")
        if link_id in seen_link_ids:
            raise ValidationError(f"{where}: duplicate link id {link_id!r}")
        seen_link_ids.add(link_id)
        eps = raw["endpoints"]
        if not isinstance(eps, list) or len(eps) != 2:
            raise ValidationError(f"{where}: endpoints must be a two-element array")
        a, b = eps
        if a not in seen_ids or b not in seen_ids:
            raise ValidationError(f"{where}: endpoint does not name a node in this network")
        if a == b:
            raise ValidationError(f"{where}: self-loops are not allowed")
        props = _decode_props(raw["props"], f"{where}.props", constraints_ok)
        if is_resource:
            uuid, cap = raw["uuid"], raw["capacity_bps"]
            if not isinstance(uuid, str) or not uuid:
                raise ValidationError(f"{where}: uuid must be a non-empty string")
            if not _is_plain_int(cap) or cap < 0:
                raise ValidationError(f"{where}: capacity_bps must be a non-negative integer")
            links.append(Link(link_id, (a, b), props, uuid=uuid, capacity_bps=cap))
        else:
            links.append(Link(link_id, (a, b), props))

    return Network(role, tuple(nodes), tuple(links))


def parse_network(text: str) -> Network:
    """Parse canonical JSON text into a validated Network."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"syntax error at position {e.pos}: {e.msg}") from None
    return network_from_obj(obj)


def network_to_obj(net: Network) -> dict:
    nodes = []
    for n in net.nodes:
        raw: dict[str, Any] = {"id": n.id, "props": _encode_value(n.props)}
        if net.role == ROLE_RESOURCE:
            raw.update({"uuid": n.uuid, "site": n.site, "alloc": n.alloc})
        nodes.append(raw)
    links = []
    for l in net.links:
        raw = {"id": l.id, "endpoints": list(l.endpoints), "props": _encode_value(l.props)}
        if net.role == ROLE_RESOURCE:
            raw.update({"uuid": l.uuid, "capacity_bps": l.capacity_bps})
        links.append(raw)
    return {"role": net.role, "nodes": nodes, "links": links}


def serialize_network(net: Network) -> str:
    """Canonical single-line JSON for a network; stable byte-for-byte."""
    return canonical_dumps(network_to_obj(net))
